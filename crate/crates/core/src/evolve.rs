//! Genetic search over sequential unanimous mechanisms.
//!
//! A genome is offered gene by gene; the search keeps it truthful either with
//! the strict monotonicity filter (`Tga`) or with a sampled manipulation test
//! (`Atga`).

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::evaluate::{count_sampled_manipulations, ManipulationDraw, Objective, ProfileBatch};
use crate::genome::{CostShareVector, Genome};
use crate::mechanisms::Mechanism;
use crate::rng::{keyed_rng, stream, sub_seed};

const MONOTONE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tga,
    Atga,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tga => "tga",
            Variant::Atga => "atga",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tga" => Ok(Variant::Tga),
            "atga" => Ok(Variant::Atga),
            other => Err(Error::parse(
                "GA variant",
                format!("`{other}`, expected `tga` or `atga`"),
            )),
        }
    }
}

/// How neighborhood search moves a gene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    /// Add `U(-r, r)` to every entry.
    Additive,
    /// Multiply every entry by `U(1 - r, 1 + r)`.
    Multiplicative,
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "additive" => Ok(Perturbation::Additive),
            "multiplicative" => Ok(Perturbation::Multiplicative),
            other => Err(Error::parse("perturbation", format!("`{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaConfig {
    pub population: usize,
    pub rounds: usize,
    pub mutation_prob: f64,
    pub neighborhood_prob: f64,
    pub perturbation_range: f64,
    pub perturbation: Perturbation,
    /// Share of mutations that shut the chosen agent out entirely.
    pub exclusion_prob: f64,
    pub duplicate_l1: f64,
    pub loose_profiles: usize,
    pub final_profiles: usize,
    pub fitness_samples: usize,
    pub objective: Objective,
    pub dist: DistributionSpec,
    pub n: usize,
    pub seed: u64,
}

impl GaConfig {
    pub fn new(dist: DistributionSpec, n: usize, objective: Objective, seed: u64) -> Self {
        GaConfig {
            population: 200,
            rounds: 200,
            mutation_prob: 0.2,
            neighborhood_prob: 0.2,
            perturbation_range: 0.1,
            perturbation: Perturbation::Additive,
            exclusion_prob: 1.0 / 3.0,
            duplicate_l1: 1e-4,
            loose_profiles: 200,
            final_profiles: 10_000,
            fitness_samples: 2_000,
            objective,
            dist,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mutation_prob", self.mutation_prob),
            ("neighborhood_prob", self.neighborhood_prob),
            ("exclusion_prob", self.exclusion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfDomain {
                    name,
                    value: p,
                    domain: "[0, 1]",
                });
            }
        }
        if self.population < 2 {
            return Err(Error::InvalidArgument("population must be at least 2".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.fitness_samples == 0 {
            return Err(Error::InvalidArgument("fitness_samples must be positive".into()));
        }
        if !(self.perturbation_range >= 0.0) {
            return Err(Error::OutOfDomain {
                name: "perturbation_range",
                value: self.perturbation_range,
                domain: "[0, inf)",
            });
        }
        self.dist.validate()
    }
}

/// `T_i ~ U(0,1)`, `B_i ~ U(0,1)` normalized to sum 1.
pub fn random_gene<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CostShareVector {
    let t = (0..n).map(|_| rng.random::<f64>()).collect();
    let b = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut gene = CostShareVector { t, b };
    gene.normalize_payments();
    gene
}

pub fn init_population<R: Rng + ?Sized>(config: &GaConfig, rng: &mut R) -> Vec<Genome> {
    (0..config.population)
        .map(|_| Genome::from_genes_unchecked(vec![random_gene(config.n, rng)]))
        .collect()
}

/// Every agent's unit price and release time are nondecreasing along the genes
/// that offer the agent a release time below 1. An offer with `T_i = 1` is
/// accepted or refused regardless of the report, so it is exempt.
pub fn strict_filter(genome: &Genome) -> bool {
    let n = genome.agents();
    (0..n).all(|i| {
        let mut prev: Option<(f64, f64)> = None;
        for gene in genome.genes() {
            if gene.t[i] >= 1.0 {
                continue;
            }
            let cur = (gene.t[i], gene.unit_price(i));
            if let Some((t, p)) = prev {
                if cur.0 < t - MONOTONE_TOL || cur.1 < p - MONOTONE_TOL {
                    return false;
                }
            }
            prev = Some(cur);
        }
        true
    })
}

/// No beneficial manipulation found when each agent of each of `profiles`
/// sampled profiles tries one false report drawn from `dist`.
pub fn loose_filter(genome: &Genome, dist: &DistributionSpec, n: usize, profiles: usize, seed: u64) -> Result<bool> {
    let mech = Mechanism::SequentialUnanimous(genome.clone());
    Ok(count_sampled_manipulations(&mech, dist, n, profiles, seed, ManipulationDraw::EveryAgent)? == 0)
}

/// Replaces `elite[a..=b]` with `partner[c..=d]`.
pub fn crossover_at(elite: &Genome, partner: &Genome, (a, b): (usize, usize), (c, d): (usize, usize)) -> Genome {
    let mut genes = elite.genes()[..a].to_vec();
    genes.extend_from_slice(&partner.genes()[c..=d]);
    genes.extend_from_slice(&elite.genes()[b + 1..]);
    Genome::from_genes_unchecked(genes)
}

fn random_segment<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..len);
    let b = rng.random_range(0..len);
    (a.min(b), a.max(b))
}

pub fn crossover<R: Rng + ?Sized>(elite: &Genome, partner: &Genome, rng: &mut R) -> Genome {
    let seg_e = random_segment(elite.len(), rng);
    let seg_p = random_segment(partner.len(), rng);
    crossover_at(elite, partner, seg_e, seg_p)
}

/// Makes `agent`'s offer in `gene` worse for them.
fn worsen<R: Rng + ?Sized>(gene: &mut CostShareVector, agent: usize, exclusion_prob: f64, rng: &mut R) {
    let n = gene.len();
    if n > 1 && rng.random::<f64>() < exclusion_prob {
        gene.t[agent] = 1.0;
        gene.b[agent] = 0.0;
        let rest: f64 = gene.b.iter().sum();
        if rest > 0.0 {
            gene.b.iter_mut().for_each(|b| *b /= rest);
        } else {
            let share = 1.0 / (n - 1) as f64;
            for (i, b) in gene.b.iter_mut().enumerate() {
                *b = if i == agent { 0.0 } else { share };
            }
        }
    } else if rng.random::<bool>() {
        let t = gene.t[agent];
        gene.t[agent] = t + rng.random::<f64>() * (1.0 - t);
    } else {
        gene.b[agent] += rng.random::<f64>() * 0.5;
        gene.normalize_payments();
    }
}

/// Copies a random gene, worsens one agent's offer in the copy and inserts it
/// somewhere after the original.
pub fn mutate<R: Rng + ?Sized>(genome: &Genome, exclusion_prob: f64, rng: &mut R) -> Genome {
    let m = genome.len();
    let j = rng.random_range(0..m);
    let mut gene = genome.genes()[j].clone();
    let agent = rng.random_range(0..gene.len());
    worsen(&mut gene, agent, exclusion_prob, rng);
    let at = rng.random_range(j + 1..=m);
    let mut genes = genome.genes().to_vec();
    genes.insert(at, gene);
    Genome::from_genes_unchecked(genes)
}

/// Applies per-entry perturbation draws to one gene, clamps and renormalizes.
pub fn perturb_gene(gene: &CostShareVector, dt: &[f64], db: &[f64], mode: Perturbation) -> CostShareVector {
    let apply = |x: f64, r: f64| match mode {
        Perturbation::Additive => x + r,
        Perturbation::Multiplicative => x * r,
    };
    let t = gene
        .t
        .iter()
        .zip(dt)
        .map(|(&x, &r)| apply(x, r).clamp(0.0, 1.0))
        .collect();
    let b = gene.b.iter().zip(db).map(|(&x, &r)| apply(x, r).max(0.0)).collect();
    let mut out = CostShareVector { t, b };
    out.normalize_payments();
    out
}

pub fn neighborhood_search<R: Rng + ?Sized>(genome: &Genome, range: f64, mode: Perturbation, rng: &mut R) -> Genome {
    let j = rng.random_range(0..genome.len());
    let n = genome.agents();
    let mut draw = || -> f64 {
        let u = rng.random::<f64>() * 2.0 * range - range;
        match mode {
            Perturbation::Additive => u,
            Perturbation::Multiplicative => 1.0 + u,
        }
    };
    let dt: Vec<f64> = (0..n).map(|_| draw()).collect();
    let db: Vec<f64> = (0..n).map(|_| draw()).collect();
    let mut genes = genome.genes().to_vec();
    genes[j] = perturb_gene(&genes[j], &dt, &db, mode);
    Genome::from_genes_unchecked(genes)
}

/// Drops near-duplicates of earlier genes (L1 below `duplicate_l1`), then genes
/// never first accepted on `profiles`. Keeps the first gene if nothing remains.
pub fn prune(genome: &Genome, profiles: &ProfileBatch, duplicate_l1: f64) -> Genome {
    let mut kept: Vec<CostShareVector> = Vec::with_capacity(genome.len());
    for gene in genome.genes() {
        if kept.iter().all(|k| k.l1_distance(gene) >= duplicate_l1) {
            kept.push(gene.clone());
        }
    }
    if profiles.rows() > 0 {
        let dedup = Genome::from_genes_unchecked(kept.clone());
        let mut used = vec![false; kept.len()];
        for (row, _) in profiles.iter() {
            if let Some(g) = dedup.first_accepted(row) {
                used[g] = true;
            }
        }
        kept = kept.into_iter().zip(used).filter(|(_, u)| *u).map(|(g, _)| g).collect();
    }
    if kept.is_empty() {
        kept.push(genome.genes()[0].clone());
    }
    Genome::from_genes_unchecked(kept)
}

/// Weighted mean objective of the genome over a batch; unbuilt profiles count as all ones.
pub fn genome_fitness(genome: &Genome, batch: &ProfileBatch, objective: Objective) -> f64 {
    let n = batch.n() as f64;
    let unbuilt = match objective {
        Objective::MaxDelay => 1.0,
        Objective::SumDelay => n,
    };
    batch
        .stats_with(|_, row| match genome.first_accepted(row) {
            Some(g) => (objective.of_times(&genome.genes()[g].t), false),
            None => (unbuilt, true),
        })
        .mean
}

/// A strict-filter-passing genome of up to `len` genes. Each agent's offers
/// get later and dearer along the genome, and any gene may shut some agents out.
pub fn random_monotone_genome<R: Rng + ?Sized>(n: usize, len: usize, rng: &mut R) -> Genome {
    let first = random_gene(n, rng);
    let mut state: Vec<(f64, f64)> = (0..n).map(|i| (first.t[i], first.unit_price(i))).collect();
    let mut genes = vec![first];
    'grow: while genes.len() < len.max(1) {
        for _ in 0..20 {
            let open: Vec<usize> = (0..n).filter(|_| n == 1 || rng.random::<f64>() > 0.3).collect();
            if open.is_empty() {
                continue;
            }
            let t: Vec<f64> = (0..n)
                .map(|i| {
                    let (ti, _) = state[i];
                    (ti + rng.random::<f64>() * (1.0 - ti) * 0.2).min(1.0 - 1e-6)
                })
                .collect();
            let base: f64 = open.iter().map(|&i| state[i].1 * (1.0 - t[i])).sum();
            if base > 1.0 {
                continue;
            }
            let weights: Vec<f64> = open.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
            let denom: f64 = open.iter().zip(&weights).map(|(&i, w)| w * (1.0 - t[i])).sum();
            let slack = 1.0 - base;
            let mut gene = CostShareVector {
                t: vec![1.0; n],
                b: vec![0.0; n],
            };
            for (&i, w) in open.iter().zip(&weights) {
                let price = state[i].1 + w * slack / denom;
                gene.t[i] = t[i];
                gene.b[i] = price * (1.0 - t[i]);
                state[i] = (t[i], price);
            }
            genes.push(gene);
            continue 'grow;
        }
        break;
    }
    Genome::from_genes_unchecked(genes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub best: f64,
    pub mean: f64,
    pub survivors: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GaResult {
    pub variant: Variant,
    pub best: Genome,
    pub best_fitness: f64,
    pub population: Vec<Genome>,
    pub trace: Vec<TraceRow>,
    /// Share of the final population passing the final sampled filter (ATGA only).
    pub survivor_fraction: Option<f64>,
}

fn passes_filter(genome: &Genome, variant: Variant, config: &GaConfig, profiles: usize, seed: u64) -> Result<bool> {
    match variant {
        Variant::Tga => Ok(strict_filter(genome)),
        Variant::Atga => loose_filter(genome, &config.dist, config.n, profiles, seed),
    }
}

fn filter_flags(
    population: &[Genome],
    variant: Variant,
    config: &GaConfig,
    profiles: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    population
        .par_iter()
        .map(|g| passes_filter(g, variant, config, profiles, seed))
        .collect()
}

/// Keeps flagged genomes and tops the population up with fresh single-gene genomes.
fn refill<R: Rng + ?Sized>(population: Vec<Genome>, flags: &[bool], config: &GaConfig, rng: &mut R) -> Vec<Genome> {
    let mut next: Vec<Genome> = population
        .into_iter()
        .zip(flags)
        .filter(|(_, f)| **f)
        .map(|(g, _)| g)
        .collect();
    while next.len() < config.population {
        next.push(Genome::from_genes_unchecked(vec![random_gene(config.n, rng)]));
    }
    next
}

/// Runs the evolution loop. Fitness is measured on one batch of
/// `fitness_samples` profiles shared by every genome and round, and the
/// best genome of each round is carried over unchanged.
pub fn evolve_run(config: &GaConfig, variant: Variant) -> Result<GaResult> {
    config.validate()?;
    let mut rng: ChaCha8Rng = keyed_rng(config.seed, 0, stream::GA);
    let mut batch = ProfileBatch::sample(
        &config.dist,
        config.n,
        config.fitness_samples,
        sub_seed(config.seed, 1, stream::GA),
    )?;
    if !config.dist.is_continuous() {
        batch = batch.compressed();
    }
    let mut population = init_population(config, &mut rng);
    let mut trace = Vec::with_capacity(config.rounds);
    let mut best: Option<(Genome, f64)> = None;

    for round in 0..config.rounds {
        let filter_seed = sub_seed(config.seed, 2 + round as u64, stream::GA);
        let flags = filter_flags(&population, variant, config, config.loose_profiles, filter_seed)?;
        let survivors = flags.iter().filter(|&&f| f).count();
        population = refill(population, &flags, config, &mut rng);

        let fitness: Vec<f64> = population
            .par_iter()
            .map(|g| genome_fitness(g, &batch, config.objective))
            .collect();
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        let (top, top_fit) = (order[0], fitness[order[0]]);
        if best.as_ref().is_none_or(|(_, f)| top_fit < *f) {
            best = Some((population[top].clone(), top_fit));
        }
        trace.push(TraceRow {
            round,
            best: top_fit,
            mean,
            survivors,
        });

        let elite_count = config.population.div_ceil(2);
        let elites: Vec<Genome> = order[..elite_count].iter().map(|&i| population[i].clone()).collect();
        let mut offspring = Vec::with_capacity(config.population);
        offspring.push(elites[0].clone());
        for elite in &elites[1..] {
            let mut g = elite.clone();
            if rng.random::<f64>() < config.mutation_prob {
                g = mutate(&g, config.exclusion_prob, &mut rng);
            }
            if rng.random::<f64>() < config.neighborhood_prob {
                g = neighborhood_search(&g, config.perturbation_range, config.perturbation, &mut rng);
            }
            offspring.push(g);
        }
        for elite in &elites {
            if offspring.len() >= config.population {
                break;
            }
            let partner = population.choose(&mut rng).expect("nonempty population");
            offspring.push(crossover(elite, partner, &mut rng));
        }
        population = offspring
            .par_iter()
            .map(|g| prune(g, &batch, config.duplicate_l1))
            .collect();
    }

    // The last round's children have not been filtered yet.
    let final_seed = sub_seed(config.seed, u64::MAX, stream::GA);
    let (flags, survivor_fraction) = match variant {
        Variant::Tga => {
            let flags = filter_flags(&population, variant, config, 0, final_seed)?;
            population = refill(population, &flags, config, &mut rng);
            (vec![true; population.len()], None)
        }
        Variant::Atga => {
            let flags = filter_flags(&population, variant, config, config.final_profiles, final_seed)?;
            let fraction = flags.iter().filter(|&&f| f).count() as f64 / population.len() as f64;
            (flags, Some(fraction))
        }
    };
    let fitness: Vec<f64> = population
        .par_iter()
        .map(|g| genome_fitness(g, &batch, config.objective))
        .collect();
    let final_best = (0..population.len())
        .filter(|&i| flags[i])
        .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
    let (best, best_fitness) = match (variant, final_best, best) {
        (Variant::Atga, Some(i), _) => (population[i].clone(), fitness[i]),
        (Variant::Tga, Some(i), Some((_, f))) if fitness[i] < f => (population[i].clone(), fitness[i]),
        (_, _, Some(incumbent)) => incumbent,
        (_, Some(i), None) => (population[i].clone(), fitness[i]),
        (_, None, None) => unreachable!("population is never empty"),
    };
    Ok(GaResult {
        variant,
        best,
        best_fitness,
        population,
        trace,
        survivor_fraction,
    })
}
