//! `delayshare` command-line driver.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use delayshare::analysis::{
    alpha_k, optimal_offer, recommended_deadline, scs_expected_maxdelay_closed_form, scs_maxdelay_asymptote,
    sumdelay_lower_bound,
};
use delayshare::evaluate::{
    check_dominance, check_sp_exhaustive, check_sp_profiles, estimate_delay, grid_profiles, unit_grid, Objective,
    SpReport, DEFAULT_MAX_EVALS,
};
use delayshare::evolve::{evolve_run, GaConfig, Perturbation, Variant};
use delayshare::{DistributionSpec, Mechanism};

#[derive(Parser, Serialize)]
#[command(name = "delayshare", version, about = "Cost-sharing mechanisms with release delays")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "DELAYSHARE_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Monte Carlo estimate of a mechanism's expected delay.
    Eval(EvalArgs),
    /// Ratio curve, lower bound and SCS closed forms for a prior.
    Bounds(BoundsArgs),
    /// Evolve a sequential unanimous mechanism.
    Ga(GaArgs),
    /// Exhaustive strategy-proofness check, or a dominance comparison.
    Check(CheckArgs),
    /// The competitive sum alpha(k) for k = 1..kmax.
    Competitive(CompetitiveArgs),
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Mechanism descriptor: scs, single:<d>, multi:<d1,..>, fixed:<t>, optdeadline, groupopt[:seed], seq:@<file>
    #[arg(long)]
    mechanism: Mechanism,
    #[arg(long)]
    dist: DistributionSpec,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "sum")]
    objective: Objective,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Directory for eval.csv, eval.json and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BoundsArgs {
    #[arg(long)]
    dist: DistributionSpec,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Failure probability for the sum-delay lower bound.
    #[arg(long)]
    fail: Option<f64>,
    /// Epsilon for the recommended single deadline.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Smallest offer used for the recommended deadline when the best offer is 0.
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GaArgs {
    #[arg(long, default_value = "tga")]
    variant: Variant,
    #[arg(long)]
    dist: DistributionSpec,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "sum")]
    objective: Objective,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    fitness_samples: Option<usize>,
    #[arg(long)]
    perturbation: Option<Perturbation>,
    #[arg(long)]
    exclusion_prob: Option<f64>,
    /// Profiles in the final ATGA filter.
    #[arg(long)]
    final_profiles: Option<usize>,
    /// Directory for genome.txt, trace.csv, result.json and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[arg(long, required_unless_present = "dominance")]
    mechanism: Option<Mechanism>,
    #[arg(long, required_unless_present = "profile")]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    /// Check only this profile (comma separated) against every grid misreport.
    #[arg(long, value_delimiter = ',')]
    profile: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_MAX_EVALS)]
    max_evals: u128,
    /// Compare two mechanisms on every grid profile instead.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    dominance: Option<Vec<Mechanism>>,
    #[arg(long, default_value = "max")]
    objective: Objective,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CompetitiveArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    kmax: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Written next to every output so a run can be repeated.
#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'static str,
    flags: &'a Command,
    seed: Option<u64>,
    version: &'static str,
    outputs: Vec<String>,
}

struct Output<'a> {
    dir: Option<&'a Path>,
    written: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: Option<&'a Path>) -> Result<Self> {
        if let Some(dir) = dir {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Output {
            dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(dir) = self.dir {
            let path = dir.join(name);
            fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
            self.written.push(path.display().to_string());
        }
        Ok(())
    }

    fn finish(mut self, subcommand: &'static str, flags: &Command, seed: Option<u64>) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let manifest_path = self.dir.unwrap().join("manifest.json");
        self.written.push(manifest_path.display().to_string());
        let manifest = RunManifest {
            subcommand,
            flags,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: self.written.clone(),
        };
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", manifest_path.display()))?;
        Ok(())
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn cmd_eval(args: &EvalArgs, flags: &Command) -> Result<()> {
    let report = estimate_delay(
        &args.mechanism,
        &args.dist,
        args.n,
        args.objective,
        args.samples,
        args.seed,
    )?;
    let csv = to_csv(&[&report])?;
    let json = to_json(&report)?;
    print!("{}", if args.json { &json } else { &csv });
    let mut out = Output::new(args.out.as_deref())?;
    out.write("eval.csv", &csv)?;
    out.write("eval.json", &json)?;
    out.finish("eval", flags, Some(args.seed))
}

#[derive(Serialize)]
struct BoundsReport {
    dist: String,
    n: usize,
    o_star: f64,
    r_star: f64,
    fail_prob: Option<f64>,
    sumdelay_lower_bound: Option<f64>,
    epsilon: f64,
    gamma: f64,
    recommended_deadline: f64,
    scs_maxdelay_closed_form: f64,
    scs_maxdelay_asymptote: f64,
}

fn cmd_bounds(args: &BoundsArgs, flags: &Command) -> Result<()> {
    let curve = optimal_offer(&args.dist)?;
    let lower = args.fail.map(|f| sumdelay_lower_bound(&args.dist, f)).transpose()?;
    let report = BoundsReport {
        dist: args.dist.to_string(),
        n: args.n,
        o_star: curve.o_star,
        r_star: curve.r_star,
        fail_prob: args.fail,
        sumdelay_lower_bound: lower,
        epsilon: args.epsilon,
        gamma: args.gamma,
        recommended_deadline: recommended_deadline(&args.dist, args.n, args.epsilon, args.gamma)?,
        scs_maxdelay_closed_form: scs_expected_maxdelay_closed_form(&args.dist, args.n)?,
        scs_maxdelay_asymptote: scs_maxdelay_asymptote(&args.dist)?,
    };
    let json = to_json(&report)?;
    print!("{json}");
    let mut out = Output::new(args.out.as_deref())?;
    out.write("bounds.json", &json)?;
    out.finish("bounds", flags, None)
}

#[derive(Serialize)]
struct GaSummary {
    variant: Variant,
    dist: String,
    n: usize,
    objective: Objective,
    seed: u64,
    best_fitness: f64,
    best_genes: usize,
    survivor_fraction: Option<f64>,
    best: String,
}

fn cmd_ga(args: &GaArgs, flags: &Command) -> Result<()> {
    let mut config = GaConfig::new(args.dist, args.n, args.objective, args.seed);
    if let Some(p) = args.population {
        config.population = p;
    }
    if let Some(r) = args.rounds {
        config.rounds = r;
    }
    if let Some(s) = args.fitness_samples {
        config.fitness_samples = s;
    }
    if let Some(p) = args.perturbation {
        config.perturbation = p;
    }
    if let Some(e) = args.exclusion_prob {
        config.exclusion_prob = e;
    }
    if let Some(f) = args.final_profiles {
        config.final_profiles = f;
    }
    let result = evolve_run(&config, args.variant)?;
    let summary = GaSummary {
        variant: args.variant,
        dist: args.dist.to_string(),
        n: args.n,
        objective: args.objective,
        seed: args.seed,
        best_fitness: result.best_fitness,
        best_genes: result.best.len(),
        survivor_fraction: result.survivor_fraction,
        best: result.best.to_string(),
    };
    println!("best fitness: {}", result.best_fitness);
    if let Some(f) = result.survivor_fraction {
        println!("survivors: {:.1}%", 100.0 * f);
    }
    print!("{}", result.best.to_text());
    let mut out = Output::new(args.out.as_deref())?;
    out.write("genome.txt", &result.best.to_text())?;
    out.write("trace.csv", &to_csv(&result.trace)?)?;
    out.write("trace.json", &to_json(&result.trace)?)?;
    out.write("result.json", &to_json(&summary)?)?;
    out.finish("ga", flags, Some(args.seed))
}

#[derive(Serialize)]
struct DominanceReport {
    a: String,
    b: String,
    n: usize,
    grid_step: f64,
    objective: Objective,
    verdict: String,
}

fn print_sp(report: &SpReport) {
    println!(
        "{}: {} profiles, {} misreports, {} beneficial, {} outcome violations",
        report.mechanism, report.profiles, report.evaluations, report.violation_count, report.outcome_violation_count
    );
    for v in report.violations.iter().take(10) {
        let group = v
            .right_group
            .as_ref()
            .map(|r| format!(" (right group {r:?})"))
            .unwrap_or_default();
        println!(
            "  profile {:?}: agent {} reports {} for utility {} instead of {}{group}",
            v.profile, v.agent, v.report, v.deviating_utility, v.truthful_utility
        );
    }
    for v in report.outcome_violations.iter().take(10) {
        println!("  profile {:?}: {:?}", v.profile, v.violation);
    }
    if report.is_clean() {
        println!("clean");
    }
}

fn cmd_check(args: &CheckArgs, flags: &Command) -> Result<()> {
    let mut out = Output::new(args.out.as_deref())?;
    if let Some(pair) = &args.dominance {
        let n = args.n.context("--dominance needs --n")?;
        let profiles = grid_profiles(n, args.grid_step)?;
        let verdict = check_dominance(&pair[0], &pair[1], &profiles, args.objective)?;
        let report = DominanceReport {
            a: pair[0].to_string(),
            b: pair[1].to_string(),
            n,
            grid_step: args.grid_step,
            objective: args.objective,
            verdict: verdict.to_string(),
        };
        println!(
            "{} vs {} ({}-delay, n={n}): {verdict}",
            report.a, report.b, args.objective
        );
        out.write("dominance.json", &to_json(&report)?)?;
        return out.finish("check", flags, None);
    }
    let mech = args.mechanism.as_ref().context("--mechanism is required")?;
    let report = match &args.profile {
        Some(profile) => {
            if args.n.is_some_and(|n| n != profile.len()) {
                bail!("--n does not match the {} values of --profile", profile.len());
            }
            check_sp_profiles(mech, std::slice::from_ref(profile), &unit_grid(args.grid_step)?)?
        }
        None => {
            let n = args.n.context("--n is required without --profile")?;
            check_sp_exhaustive(mech, n, args.grid_step, args.max_evals)?
        }
    };
    print_sp(&report);
    out.write("check.json", &to_json(&report)?)?;
    out.finish("check", flags, None)
}

#[derive(Serialize)]
struct AlphaRow {
    k: usize,
    alpha: f64,
    at_least_four: bool,
}

fn cmd_competitive(args: &CompetitiveArgs, flags: &Command) -> Result<()> {
    let rows = (1..=args.kmax as usize)
        .map(|k| {
            let alpha = alpha_k(k)?;
            Ok(AlphaRow {
                k,
                alpha,
                at_least_four: alpha >= 4.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = to_csv(&rows)?;
    print!("{csv}");
    let flagged = rows.iter().filter(|r| r.at_least_four).count();
    if flagged > 0 {
        eprintln!("{flagged} values of k with alpha(k) >= 4");
    }
    let mut out = Output::new(args.out.as_deref())?;
    out.write("alpha.csv", &csv)?;
    out.write("alpha.json", &to_json(&rows)?)?;
    out.finish("competitive", flags, None)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    }
    let flags = &cli.command;
    match flags {
        Command::Eval(args) => cmd_eval(args, flags),
        Command::Bounds(args) => cmd_bounds(args, flags),
        Command::Ga(args) => cmd_ga(args, flags),
        Command::Check(args) => cmd_check(args, flags),
        Command::Competitive(args) => cmd_competitive(args, flags),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
