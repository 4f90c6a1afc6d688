//! Monte Carlo delay estimation, strategy-proofness checkers, dominance and
//! deadline grid searches.
//!
//! Sample `j` of a run with seed `s` always draws its profile from the keyed
//! stream `(s, j)`, and per-chunk statistics are merged in chunk order, so
//! results do not depend on the number of worker threads.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::mechanisms::{Grouping, Mechanism};
use crate::model::{check_outcome, utility, Outcome, Violation};
use crate::rng::{keyed_rng, stream};

const CHUNK: usize = 1024;

/// Default cap on utility evaluations for the exhaustive checker.
pub const DEFAULT_MAX_EVALS: u128 = 100_000_000;
/// Violations kept verbatim in a report; the count is always exact.
pub const MAX_LISTED: usize = 1000;
const SP_TOL: f64 = 1e-9;
const SEARCH_SAMPLES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaxDelay,
    SumDelay,
}

impl Objective {
    pub fn of(&self, outcome: &Outcome) -> f64 {
        self.of_times(&outcome.release_times)
    }

    pub fn of_times(&self, release_times: &[f64]) -> f64 {
        match self {
            Objective::MaxDelay => release_times.iter().copied().fold(0.0, f64::max),
            Objective::SumDelay => release_times.iter().sum(),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::MaxDelay => "max",
            Objective::SumDelay => "sum",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "max" | "max_delay" | "max-delay" => Ok(Objective::MaxDelay),
            "sum" | "sum_delay" | "sum-delay" => Ok(Objective::SumDelay),
            other => Err(Error::parse("objective", format!("`{other}`, expected `max` or `sum`"))),
        }
    }
}

/// Weighted streaming mean and variance, mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub weight: f64,
    pub mean: f64,
    m2: f64,
    pub failures: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64, weight: f64, failed: bool) {
        let total = self.weight + weight;
        let delta = x - self.mean;
        self.mean += delta * weight / total;
        self.m2 += weight * delta * (x - self.mean);
        self.weight = total;
        if failed {
            self.failures += weight;
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.weight == 0.0 {
            return;
        }
        if self.weight == 0.0 {
            *self = *other;
            return;
        }
        let total = self.weight + other.weight;
        let delta = other.mean - self.mean;
        self.mean += delta * other.weight / total;
        self.m2 += other.m2 + delta * delta * self.weight * other.weight / total;
        self.weight = total;
        self.failures += other.failures;
    }

    pub fn variance(&self) -> f64 {
        if self.weight > 1.0 {
            (self.m2 / (self.weight - 1.0)).max(0.0)
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.weight > 0.0 {
            (self.variance() / self.weight).sqrt()
        } else {
            0.0
        }
    }

    pub fn fail_prob(&self) -> f64 {
        if self.weight > 0.0 {
            self.failures / self.weight
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mechanism: String,
    pub dist: String,
    pub n: usize,
    pub objective: Objective,
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
    pub fail_prob: f64,
    pub seed: u64,
}

impl EvalReport {
    fn new(
        mech: &Mechanism,
        dist: &DistributionSpec,
        n: usize,
        objective: Objective,
        stats: &RunningStats,
        samples: usize,
        seed: u64,
    ) -> Self {
        EvalReport {
            mechanism: mech.to_string(),
            dist: dist.to_string(),
            n,
            objective,
            estimate: stats.mean,
            std_error: stats.std_error(),
            samples,
            fail_prob: stats.fail_prob(),
            seed,
        }
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        Err(Error::InvalidArgument("at least one sample is required".into()))
    } else {
        Ok(())
    }
}

fn merge_in_order(parts: Vec<RunningStats>) -> RunningStats {
    let mut total = RunningStats::default();
    for part in &parts {
        total.merge(part);
    }
    total
}

/// Expected objective of `mech` over `samples` i.i.d. profiles.
pub fn estimate_delay(
    mech: &Mechanism,
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_samples(samples)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    mech.validate()?;
    let sampler = dist.sampler()?;
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<RunningStats> {
            let mut stats = RunningStats::default();
            let mut profile = vec![0.0; n];
            for j in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                sampler.fill(&mut keyed_rng(seed, j as u64, stream::PROFILE), &mut profile);
                let out = mech.run_sample(&profile, seed, j as u64)?;
                stats.push(objective.of(&out), 1.0, !out.built);
            }
            Ok(stats)
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = merge_in_order(parts);
    Ok(EvalReport::new(mech, dist, n, objective, &stats, samples, seed))
}

/// A fixed set of sampled profiles shared by several candidates (common random
/// numbers). Discrete priors can be compressed to distinct rows with counts.
#[derive(Clone, Debug)]
pub struct ProfileBatch {
    n: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    samples: usize,
    seed: u64,
    compressed: bool,
}

impl ProfileBatch {
    pub fn sample(dist: &DistributionSpec, n: usize, samples: usize, seed: u64) -> Result<Self> {
        check_samples(samples)?;
        let sampler = dist.sampler()?;
        let mut values = vec![0.0; samples * n];
        values.par_chunks_mut(n * CHUNK).enumerate().for_each(|(c, block)| {
            for (r, row) in block.chunks_mut(n).enumerate() {
                let j = (c * CHUNK + r) as u64;
                sampler.fill(&mut keyed_rng(seed, j, stream::PROFILE), row);
            }
        });
        Ok(ProfileBatch {
            n,
            values,
            weights: vec![1.0; samples],
            samples,
            seed,
            compressed: false,
        })
    }

    /// Merges identical rows, keeping first-appearance order.
    pub fn compressed(self) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut values = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (row, &w) in self.values.chunks(self.n).zip(&self.weights) {
            let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
            match index.get(&key) {
                Some(&r) => weights[r] += w,
                None => {
                    index.insert(key, weights.len());
                    values.extend_from_slice(row);
                    weights.push(w);
                }
            }
        }
        ProfileBatch {
            values,
            weights,
            compressed: true,
            ..self
        }
    }

    /// The first `m` samples (uncompressed batches only).
    pub fn prefix(&self, m: usize) -> Self {
        assert!(!self.compressed, "prefix of a compressed batch");
        let m = m.min(self.samples);
        ProfileBatch {
            n: self.n,
            values: self.values[..m * self.n].to_vec(),
            weights: self.weights[..m].to_vec(),
            samples: m,
            seed: self.seed,
            compressed: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of stored rows.
    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n..(r + 1) * self.n]
    }

    pub fn weight(&self, r: usize) -> f64 {
        self.weights[r]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.values.chunks(self.n).zip(self.weights.iter().copied())
    }

    /// Weighted statistics of `score(row)` in row order, sequentially.
    pub fn stats_with<F>(&self, mut score: F) -> RunningStats
    where
        F: FnMut(usize, &[f64]) -> (f64, bool),
    {
        let mut stats = RunningStats::default();
        for (r, (row, w)) in self.iter().enumerate() {
            let (x, failed) = score(r, row);
            stats.push(x, w, failed);
        }
        stats
    }
}

/// Statistics of `mech` on a batch, in parallel over row chunks.
pub fn evaluate_on_batch(mech: &Mechanism, batch: &ProfileBatch, objective: Objective) -> Result<RunningStats> {
    if batch.compressed && mech.is_randomized() {
        return Err(Error::InvalidArgument(
            "randomized mechanisms need an uncompressed batch".into(),
        ));
    }
    let chunks = batch.rows().div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<RunningStats> {
            let mut stats = RunningStats::default();
            for r in c * CHUNK..((c + 1) * CHUNK).min(batch.rows()) {
                let out = mech.run_sample(batch.row(r), batch.seed, r as u64)?;
                stats.push(objective.of(&out), batch.weight(r), !out.built);
            }
            Ok(stats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_in_order(parts))
}

fn sequential_stats(mech: &Mechanism, batch: &ProfileBatch, objective: Objective) -> Result<RunningStats> {
    let mut stats = RunningStats::default();
    for (r, (row, w)) in batch.iter().enumerate() {
        let out = mech.run_sample(row, batch.seed, r as u64)?;
        stats.push(objective.of(&out), w, !out.built);
    }
    Ok(stats)
}

fn search_batch(dist: &DistributionSpec, full: &ProfileBatch, limit: usize) -> ProfileBatch {
    if dist.is_continuous() {
        full.prefix(limit)
    } else {
        full.clone().compressed()
    }
}

fn full_batch(dist: &DistributionSpec, n: usize, samples: usize, seed: u64) -> Result<ProfileBatch> {
    let batch = ProfileBatch::sample(dist, n, samples, seed)?;
    Ok(if dist.is_continuous() {
        batch
    } else {
        batch.compressed()
    })
}

/// Lowest estimate over `candidates`; earlier candidates win ties.
fn argmin(estimates: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in estimates.iter().enumerate() {
        if e < estimates[best] {
            best = i;
        }
    }
    best
}

/// Best single deadline on `d_grid`, every candidate scored on the same profiles.
pub fn grid_search_single_deadline(
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    d_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, EvalReport)> {
    if d_grid.is_empty() {
        return Err(Error::InvalidArgument("empty deadline grid".into()));
    }
    let batch = full_batch(dist, n, samples, seed)?;
    let mut best: Option<(f64, RunningStats)> = None;
    for &d in d_grid {
        let stats = evaluate_on_batch(&Mechanism::SingleDeadline(d), &batch, objective)?;
        if best.as_ref().is_none_or(|(_, b)| stats.mean < b.mean) {
            best = Some((d, stats));
        }
    }
    let (d, stats) = best.expect("nonempty grid");
    let report = EvalReport::new(&Mechanism::SingleDeadline(d), dist, n, objective, &stats, samples, seed);
    Ok((d, report))
}

/// Points `0, step, ..., 1`; `step` must divide 1.
pub fn unit_grid(step: f64) -> Result<Vec<f64>> {
    let steps = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (steps * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1")));
    }
    let steps = steps as usize;
    Ok((0..=steps).map(|j| j as f64 / steps as f64).collect())
}

/// Nondecreasing `n`-tuples over `grid`.
fn sorted_tuples(grid: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(idx.iter().map(|&i| grid[i]).collect());
        let mut pos = n;
        while pos > 0 && idx[pos - 1] == grid.len() - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        let v = idx[pos - 1];
        idx[pos..].iter_mut().for_each(|x| *x = v);
    }
}

const MAX_TUPLE_SEARCH: u128 = 20_000_000_000;

/// Best multiple deadline vector over nondecreasing tuples on the `step` grid.
///
/// Continuous priors are searched on the first 20,000 profiles of the batch;
/// the winner is then scored on all `samples` profiles.
pub fn grid_search_multiple_deadline(
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, EvalReport)> {
    if n == 0 || n > 5 {
        return Err(Error::InvalidArgument(format!(
            "multiple deadline search supports 1 <= n <= 5, got {n}"
        )));
    }
    let grid = unit_grid(step)?;
    let full = ProfileBatch::sample(dist, n, samples, seed)?;
    let search = search_batch(dist, &full, SEARCH_SAMPLES);
    let tuples = sorted_tuples(&grid, n);
    let work = tuples.len() as u128 * search.rows() as u128;
    if work > MAX_TUPLE_SEARCH {
        return Err(Error::BudgetExceeded {
            needed: work,
            cap: MAX_TUPLE_SEARCH,
        });
    }
    let estimates = tuples
        .par_iter()
        .map(|ds| sequential_stats(&Mechanism::MultipleDeadline(ds.clone()), &search, objective).map(|s| s.mean))
        .collect::<Result<Vec<_>>>()?;
    let best = tuples[argmin(&estimates)].clone();
    finish_multiple(dist, n, objective, best, &full, samples, seed)
}

fn finish_multiple(
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    deadlines: Vec<f64>,
    full: &ProfileBatch,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, EvalReport)> {
    let final_batch = if dist.is_continuous() {
        full.clone()
    } else {
        full.clone().compressed()
    };
    let mech = Mechanism::MultipleDeadline(deadlines.clone());
    let stats = evaluate_on_batch(&mech, &final_batch, objective)?;
    Ok((
        deadlines,
        EvalReport::new(&mech, dist, n, objective, &stats, samples, seed),
    ))
}

fn descend(search: &ProfileBatch, objective: Objective, start: Vec<f64>, step: f64) -> Result<Vec<f64>> {
    let score =
        |ds: &[f64]| evaluate_on_batch(&Mechanism::MultipleDeadline(ds.to_vec()), search, objective).map(|s| s.mean);
    let mut current = start;
    let mut current_score = score(&current)?;
    loop {
        let mut improved = false;
        for i in 0..current.len() {
            for delta in [-step, step] {
                let mut cand = current.clone();
                cand[i] = ((cand[i] + delta) * 1e9).round() / 1e9;
                if !(0.0..=1.0).contains(&cand[i]) {
                    continue;
                }
                let s = score(&cand)?;
                if s < current_score - 1e-12 {
                    current = cand;
                    current_score = s;
                    improved = true;
                }
            }
        }
        if !improved {
            return Ok(current);
        }
    }
}

/// Coordinate descent from `start`, moving one deadline by `step` at a time
/// while the search-batch estimate improves.
pub fn refine_multiple_deadline(
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    start: &[f64],
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, EvalReport)> {
    if start.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: start.len(),
        });
    }
    let full = ProfileBatch::sample(dist, n, samples, seed)?;
    let search = search_batch(dist, &full, SEARCH_SAMPLES);
    let best = descend(&search, objective, start.to_vec(), step)?;
    finish_multiple(dist, n, objective, best, &full, samples, seed)
}

/// Sorted-tuple search on the `step` grid, also trying every equal-deadline
/// vector on the finer `refine_step` grid, followed by coordinate descent at
/// `refine_step` from the best candidate.
pub fn optimize_multiple_deadline(
    dist: &DistributionSpec,
    n: usize,
    objective: Objective,
    step: f64,
    refine_step: f64,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, EvalReport)> {
    if n == 0 || n > 5 {
        return Err(Error::InvalidArgument(format!(
            "multiple deadline search supports 1 <= n <= 5, got {n}"
        )));
    }
    let full = ProfileBatch::sample(dist, n, samples, seed)?;
    let search = search_batch(dist, &full, SEARCH_SAMPLES);
    let mut candidates = sorted_tuples(&unit_grid(step)?, n);
    candidates.extend(unit_grid(refine_step)?.into_iter().map(|d| vec![d; n]));
    let estimates = candidates
        .par_iter()
        .map(|ds| sequential_stats(&Mechanism::MultipleDeadline(ds.clone()), &search, objective).map(|s| s.mean))
        .collect::<Result<Vec<_>>>()?;
    let start = candidates[argmin(&estimates)].clone();
    let best = descend(&search, objective, start, refine_step)?;
    finish_multiple(dist, n, objective, best, &full, samples, seed)
}

/// A beneficial misreport.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpViolation {
    pub profile: Vec<f64>,
    pub agent: usize,
    pub report: f64,
    pub truthful_utility: f64,
    pub deviating_utility: f64,
    /// Agents on the right, for group-based mechanisms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right_group: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeViolation {
    pub profile: Vec<f64>,
    pub violation: Violation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SpReport {
    pub mechanism: String,
    pub n: usize,
    pub profiles: u64,
    pub evaluations: u128,
    pub violation_count: u64,
    pub violations: Vec<SpViolation>,
    pub outcome_violation_count: u64,
    pub outcome_violations: Vec<OutcomeViolation>,
}

impl SpReport {
    /// No beneficial misreport and no range, IR or budget violation.
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0 && self.outcome_violation_count == 0
    }

    fn absorb(&mut self, other: SpReport) {
        self.profiles += other.profiles;
        self.evaluations += other.evaluations;
        self.violation_count += other.violation_count;
        self.outcome_violation_count += other.outcome_violation_count;
        let room = MAX_LISTED.saturating_sub(self.violations.len());
        self.violations.extend(other.violations.into_iter().take(room));
        let room = MAX_LISTED.saturating_sub(self.outcome_violations.len());
        self.outcome_violations
            .extend(other.outcome_violations.into_iter().take(room));
    }
}

/// The deterministic variants to check: every grouping for an unseeded
/// group-based mechanism, otherwise just the mechanism itself.
fn variants(mech: &Mechanism, n: usize) -> Result<Vec<Option<Grouping>>> {
    Ok(match mech {
        Mechanism::GroupBased(None) => {
            if n > 20 {
                return Err(Error::InvalidArgument("grouping enumeration needs n <= 20".into()));
            }
            (0..1u64 << n).map(|m| Some(Grouping::from_mask(n, m))).collect()
        }
        Mechanism::GroupBased(Some(seed)) => vec![Some(Grouping::from_seed(n, *seed))],
        _ => vec![None],
    })
}

fn run_variant(mech: &Mechanism, profile: &[f64], grouping: &Option<Grouping>) -> Result<Outcome> {
    match grouping {
        Some(g) => mech.run_with_grouping(profile, g),
        None => mech.run(profile),
    }
}

fn check_one_profile(
    mech: &Mechanism,
    grouping: &Option<Grouping>,
    profile: &[f64],
    deviations: &[f64],
    report: &mut SpReport,
) -> Result<()> {
    let truthful = run_variant(mech, profile, grouping)?;
    report.profiles += 1;
    for violation in check_outcome(profile, &truthful, mech.budget_exempt())?.violations {
        report.outcome_violation_count += 1;
        if report.outcome_violations.len() < MAX_LISTED {
            report.outcome_violations.push(OutcomeViolation {
                profile: profile.to_vec(),
                violation,
            });
        }
    }
    let mut lie = profile.to_vec();
    for (agent, &v) in profile.iter().enumerate() {
        let honest = truthful.utility_of(agent, v);
        for &report_value in deviations {
            if report_value == v {
                continue;
            }
            lie[agent] = report_value;
            let out = run_variant(mech, &lie, grouping)?;
            report.evaluations += 1;
            let deviating = utility(v, out.release_times[agent], out.payments[agent]);
            if deviating > honest + SP_TOL {
                report.violation_count += 1;
                if report.violations.len() < MAX_LISTED {
                    report.violations.push(SpViolation {
                        profile: profile.to_vec(),
                        agent,
                        report: report_value,
                        truthful_utility: honest,
                        deviating_utility: deviating,
                        right_group: grouping.as_ref().map(Grouping::right),
                    });
                }
            }
        }
        lie[agent] = v;
    }
    Ok(())
}

/// Checks every grid profile, agent and grid misreport, plus range, IR and
/// budget balance of every truthful outcome. Fails fast when the number of
/// utility evaluations would exceed `max_evals`.
pub fn check_sp_exhaustive(mech: &Mechanism, n: usize, grid_step: f64, max_evals: u128) -> Result<SpReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    mech.validate()?;
    let grid = unit_grid(grid_step)?;
    let m = grid.len();
    let variants = variants(mech, n)?;
    let profiles = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    let needed = profiles
        .saturating_mul(n as u128)
        .saturating_mul(m as u128 - 1)
        .saturating_mul(variants.len() as u128);
    if needed > max_evals {
        return Err(Error::BudgetExceeded { needed, cap: max_evals });
    }
    let total = profiles as usize;
    let chunks = total.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<SpReport> {
            let mut part = SpReport::default();
            let mut profile = vec![0.0; n];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let mut rest = idx;
                for slot in profile.iter_mut() {
                    *slot = grid[rest % m];
                    rest /= m;
                }
                for grouping in &variants {
                    check_one_profile(mech, grouping, &profile, &grid, &mut part)?;
                }
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SpReport {
        mechanism: mech.to_string(),
        n,
        ..SpReport::default()
    };
    for part in parts {
        report.absorb(part);
    }
    Ok(report)
}

/// Checks the given profiles against every misreport in `deviations`.
pub fn check_sp_profiles(mech: &Mechanism, profiles: &[Vec<f64>], deviations: &[f64]) -> Result<SpReport> {
    let n = profiles.first().map_or(0, Vec::len);
    let variants = variants(mech, n)?;
    let mut report = SpReport {
        mechanism: mech.to_string(),
        n,
        ..SpReport::default()
    };
    for profile in profiles {
        if profile.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: profile.len(),
            });
        }
        for grouping in &variants {
            let mut part = SpReport::default();
            check_one_profile(mech, grouping, profile, deviations, &mut part)?;
            report.absorb(part);
        }
    }
    Ok(report)
}

/// Which misreports a sampled check tries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManipulationDraw {
    /// One uniformly chosen agent per profile.
    OneAgent,
    /// Every agent of every profile.
    EveryAgent,
}

/// Counts beneficial misreports drawn from `dist` over `trials` sampled profiles.
pub fn count_sampled_manipulations(
    mech: &Mechanism,
    dist: &DistributionSpec,
    n: usize,
    trials: usize,
    seed: u64,
    draw: ManipulationDraw,
) -> Result<u64> {
    if trials == 0 {
        return Ok(0);
    }
    let sampler = dist.sampler()?;
    let chunks = trials.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<u64> {
            let mut found = 0;
            let mut profile = vec![0.0; n];
            for j in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let j = j as u64;
                sampler.fill(&mut keyed_rng(seed, j, stream::PROFILE), &mut profile);
                let mut rng = keyed_rng(seed, j, stream::MANIPULATION);
                let truthful = mech.run_sample(&profile, seed, j)?;
                let agents: Vec<usize> = match draw {
                    ManipulationDraw::OneAgent => vec![rng.random_range(0..n)],
                    ManipulationDraw::EveryAgent => (0..n).collect(),
                };
                let mut lie = profile.clone();
                for agent in agents {
                    let v = profile[agent];
                    lie[agent] = sampler.sample(&mut rng);
                    let out = mech.run_sample(&lie, seed, j)?;
                    let gain =
                        utility(v, out.release_times[agent], out.payments[agent]) - truthful.utility_of(agent, v);
                    if gain > SP_TOL {
                        found += 1;
                    }
                    lie[agent] = v;
                }
            }
            Ok(found)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.into_iter().sum())
}

/// Samples `trials` profiles; in each, one random agent tries one random report.
pub fn check_sp_sampled(mech: &Mechanism, dist: &DistributionSpec, n: usize, trials: usize, seed: u64) -> Result<u64> {
    count_sampled_manipulations(mech, dist, n, trials, seed, ManipulationDraw::OneAgent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    ADominates,
    BDominates,
    Incomparable,
    Equal,
}

impl fmt::Display for Dominance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dominance::ADominates => "A_dominates",
            Dominance::BDominates => "B_dominates",
            Dominance::Incomparable => "incomparable",
            Dominance::Equal => "equal",
        })
    }
}

/// Whether `x`'s delay is at most `y`'s on one profile. For max-delay, an
/// unfunded `x` never counts as at most a funded `y`.
fn at_most(x: &Outcome, y: &Outcome, objective: Objective) -> bool {
    if objective == Objective::MaxDelay && !x.built && y.built {
        return false;
    }
    objective.of(x) <= objective.of(y)
}

/// Pointwise comparison over `profiles`. Group-based mechanisms without a seed use grouping seed 0.
pub fn check_dominance(a: &Mechanism, b: &Mechanism, profiles: &[Vec<f64>], objective: Objective) -> Result<Dominance> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("dominance needs at least one profile".into()));
    }
    let (mut a_le_all, mut b_le_all) = (true, true);
    for profile in profiles {
        let oa = a.run(profile)?;
        let ob = b.run(profile)?;
        a_le_all &= at_most(&oa, &ob, objective);
        b_le_all &= at_most(&ob, &oa, objective);
        if !a_le_all && !b_le_all {
            return Ok(Dominance::Incomparable);
        }
    }
    Ok(match (a_le_all, b_le_all) {
        (true, true) => Dominance::Equal,
        (true, false) => Dominance::ADominates,
        (false, true) => Dominance::BDominates,
        (false, false) => Dominance::Incomparable,
    })
}

/// All profiles on the `step` grid, first agent varying fastest.
pub fn grid_profiles(n: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let grid = unit_grid(step)?;
    let m = grid.len();
    let total = (m as u128).pow(n as u32);
    if total > 50_000_000 {
        return Err(Error::BudgetExceeded {
            needed: total,
            cap: 50_000_000,
        });
    }
    Ok((0..total as usize)
        .map(|idx| {
            let mut rest = idx;
            (0..n)
                .map(|_| {
                    let v = grid[rest % m];
                    rest /= m;
                    v
                })
                .collect()
        })
        .collect())
}

/// For each sampled profile whose optimal deadline outcome has a free rider,
/// the group-based max-delay divided by the optimal deadline max-delay,
/// averaged over `groupings` random groupings.
pub fn group_vs_optimal_ratios(
    dist: &DistributionSpec,
    n: usize,
    profiles: usize,
    groupings: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = dist.sampler()?;
    let ratios = (0..profiles)
        .into_par_iter()
        .map(|j| -> Result<Option<f64>> {
            let j = j as u64;
            let mut profile = vec![0.0; n];
            sampler.fill(&mut keyed_rng(seed, j, stream::PROFILE), &mut profile);
            let opt = crate::mechanisms::optimal_deadline_run(&profile);
            let free_rider = opt.built && opt.payments.contains(&0.0);
            if !free_rider {
                return Ok(None);
            }
            let base = Objective::MaxDelay.of(&opt);
            let mut rng = keyed_rng(seed, j, stream::GROUPING);
            let mut total = 0.0;
            for _ in 0..groupings {
                let g = Grouping::from_rng(n, &mut rng);
                total += Objective::MaxDelay.of(&crate::mechanisms::group_based_run(&profile, &g)?);
            }
            Ok(Some(total / groupings as f64 / base))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ratios.into_iter().flatten().collect())
}
