//! The mechanism catalog. Each `*_run` maps a reported profile to an outcome.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::costshare::{
    largest_k_at_deadline_sorted, largest_k_sorted, leave_one_out_indicator, optimal_deadline_sorted, ranking,
};
use crate::error::{Error, Result};
use crate::genome::{fmt_sig12, Genome};
use crate::model::Outcome;
use crate::rng::{keyed_rng, stream};

fn check_deadline(name: &'static str, d: f64) -> Result<()> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name,
            value: d,
            domain: "[0, 1]",
        })
    }
}

/// Serial cost sharing: the `K` highest agents consume at 0 and pay `1/K` each.
pub fn scs_run(profile: &[f64]) -> Outcome {
    let n = profile.len();
    let order = ranking(profile);
    let sorted: Vec<f64> = order.iter().map(|&i| profile[i]).collect();
    let k = largest_k_sorted(&sorted);
    if k == 0 {
        return Outcome::not_built(n);
    }
    let mut outcome = Outcome::not_built(n);
    outcome.built = true;
    for &i in &order[..k] {
        outcome.release_times[i] = 0.0;
        outcome.payments[i] = 1.0 / k as f64;
    }
    outcome
}

/// Shared rule of the single and multiple deadline mechanisms, with agent `i`'s
/// non-free part `[0, d_i]`.
fn deadline_core(profile: &[f64], deadlines: &[f64]) -> Outcome {
    let n = profile.len();
    let w: Vec<f64> = profile.iter().zip(deadlines).map(|(v, d)| v * d).collect();
    let order = ranking(&w);
    let sorted: Vec<f64> = order.iter().map(|&i| w[i]).collect();
    let k = largest_k_sorted(&sorted);
    if k == 0 {
        return Outcome::not_built(n);
    }
    let free = leave_one_out_indicator(&w, &order);
    let mut pays = vec![false; n];
    for &i in &order[..k] {
        pays[i] = true;
    }
    let mut outcome = Outcome::not_built(n);
    outcome.built = true;
    for i in 0..n {
        let d = deadlines[i];
        outcome.release_times[i] = match (pays[i], free[i]) {
            (true, true) => 0.0,
            (false, true) => d,
            (true, false) => 1.0 - d,
            (false, false) => 1.0,
        };
        if pays[i] {
            outcome.payments[i] = 1.0 / k as f64;
        }
    }
    outcome
}

pub fn single_deadline_run(profile: &[f64], d: f64) -> Result<Outcome> {
    check_deadline("d", d)?;
    Ok(deadline_core(profile, &vec![d; profile.len()]))
}

pub fn multiple_deadline_run(profile: &[f64], deadlines: &[f64]) -> Result<Outcome> {
    if deadlines.len() != profile.len() {
        return Err(Error::LengthMismatch {
            expected: profile.len(),
            got: deadlines.len(),
        });
    }
    for &d in deadlines {
        check_deadline("d_i", d)?;
    }
    Ok(deadline_core(profile, deadlines))
}

/// Offers each gene in turn and stops at the first one every agent accepts.
pub fn sequential_unanimous_run(profile: &[f64], genome: &Genome) -> Result<Outcome> {
    if genome.agents() != profile.len() {
        return Err(Error::LengthMismatch {
            expected: profile.len(),
            got: genome.agents(),
        });
    }
    Ok(match genome.first_accepted(profile) {
        Some(g) => {
            let gene = &genome.genes()[g];
            Outcome {
                release_times: gene.t.clone(),
                payments: gene.b.clone(),
                built: true,
            }
        }
        None => Outcome::not_built(profile.len()),
    })
}

fn fixed_deadline_from_order(profile: &[f64], order: &[usize], sorted: &[f64], t_c: f64) -> Outcome {
    let n = profile.len();
    let k = largest_k_at_deadline_sorted(sorted, t_c);
    let mut outcome = Outcome {
        release_times: vec![t_c; n],
        payments: vec![0.0; n],
        built: k > 0,
    };
    for &i in &order[..k] {
        outcome.release_times[i] = 0.0;
        outcome.payments[i] = 1.0 / k as f64;
    }
    outcome
}

/// Fixed deadline `t_c`: the largest group that can split the cost within
/// `[0, t_c]` consumes at 0; everyone else waits until `t_c` for free. When no
/// group forms, nobody pays and the project is still released at `t_c`.
pub fn fixed_deadline_run(profile: &[f64], t_c: f64) -> Result<Outcome> {
    check_deadline("t_C", t_c)?;
    let order = ranking(profile);
    let sorted: Vec<f64> = order.iter().map(|&i| profile[i]).collect();
    Ok(fixed_deadline_from_order(profile, &order, &sorted, t_c))
}

pub fn optimal_deadline_run(profile: &[f64]) -> Outcome {
    let order = ranking(profile);
    let sorted: Vec<f64> = order.iter().map(|&i| profile[i]).collect();
    let t_star = optimal_deadline_sorted(&sorted);
    let outcome = fixed_deadline_from_order(profile, &order, &sorted, t_star);
    if outcome.built {
        outcome
    } else {
        Outcome::not_built(profile.len())
    }
}

/// Assignment of agents to the left (`false`) or right (`true`) group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    right: Vec<bool>,
}

impl Grouping {
    pub fn new(right: Vec<bool>) -> Self {
        Grouping { right }
    }

    /// One fair coin per agent.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        Self::from_rng(n, &mut keyed_rng(seed, 0, stream::GROUPING))
    }

    pub fn from_rng<R: Rng>(n: usize, rng: &mut R) -> Self {
        Grouping {
            right: (0..n).map(|_| rng.random::<bool>()).collect(),
        }
    }

    /// Bit `i` of `mask` places agent `i` on the right.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Grouping {
            right: (0..n).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.right.is_empty()
    }

    pub fn is_right(&self, agent: usize) -> bool {
        self.right[agent]
    }

    pub fn left(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.right[i]).collect()
    }

    pub fn right(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.right[i]).collect()
    }
}

/// Each group runs the fixed deadline mechanism at the other group's optimal
/// deadline. If both would succeed (equal deadlines), the right group is made to fail.
pub fn group_based_run(profile: &[f64], grouping: &Grouping) -> Result<Outcome> {
    let n = profile.len();
    if grouping.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: grouping.len(),
        });
    }
    let left = grouping.left();
    let right = grouping.right();
    let sub = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| profile[i]).collect() };
    let (vl, vr) = (sub(&left), sub(&right));
    let deadline = |v: &[f64]| optimal_deadline_sorted(&crate::costshare::sorted_desc(v));
    let (d_l, d_r) = (deadline(&vl), deadline(&vr));
    let left_out = fixed_deadline_run(&vl, d_r)?;
    let mut right_out = fixed_deadline_run(&vr, d_l)?;
    if left_out.built && right_out.built {
        right_out = Outcome {
            release_times: vec![d_l; vr.len()],
            payments: vec![0.0; vr.len()],
            built: false,
        };
    }
    if !left_out.built && !right_out.built {
        return Ok(Outcome::not_built(n));
    }
    let mut outcome = Outcome::not_built(n);
    outcome.built = true;
    for (group, out) in [(&left, &left_out), (&right, &right_out)] {
        for (j, &i) in group.iter().enumerate() {
            outcome.release_times[i] = out.release_times[j];
            outcome.payments[i] = out.payments[j];
        }
    }
    Ok(outcome)
}

/// Serializable description of a catalog mechanism.
#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    Scs,
    SingleDeadline(f64),
    MultipleDeadline(Vec<f64>),
    FixedDeadline(f64),
    OptimalDeadline,
    /// With a seed the grouping is fixed; without one it is redrawn per sample.
    GroupBased(Option<u64>),
    SequentialUnanimous(Genome),
}

impl Mechanism {
    pub fn validate(&self) -> Result<()> {
        match self {
            Mechanism::SingleDeadline(d) => check_deadline("d", *d),
            Mechanism::MultipleDeadline(ds) => ds.iter().try_for_each(|&d| check_deadline("d_i", d)),
            Mechanism::FixedDeadline(t) => check_deadline("t_C", *t),
            _ => Ok(()),
        }
    }

    /// Only the fixed deadline mechanism may run a deficit.
    pub fn budget_exempt(&self) -> bool {
        matches!(self, Mechanism::FixedDeadline(_))
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, Mechanism::GroupBased(None))
    }

    /// Runs with an explicit grouping (ignored by non-group mechanisms).
    pub fn run_with_grouping(&self, profile: &[f64], grouping: &Grouping) -> Result<Outcome> {
        match self {
            Mechanism::GroupBased(_) => group_based_run(profile, grouping),
            _ => self.run(profile),
        }
    }

    /// Runs deterministically; an unseeded group-based mechanism uses seed 0.
    pub fn run(&self, profile: &[f64]) -> Result<Outcome> {
        match self {
            Mechanism::Scs => Ok(scs_run(profile)),
            Mechanism::SingleDeadline(d) => single_deadline_run(profile, *d),
            Mechanism::MultipleDeadline(ds) => multiple_deadline_run(profile, ds),
            Mechanism::FixedDeadline(t) => fixed_deadline_run(profile, *t),
            Mechanism::OptimalDeadline => Ok(optimal_deadline_run(profile)),
            Mechanism::GroupBased(seed) => {
                group_based_run(profile, &Grouping::from_seed(profile.len(), seed.unwrap_or(0)))
            }
            Mechanism::SequentialUnanimous(genome) => sequential_unanimous_run(profile, genome),
        }
    }

    /// Runs as sample `index` of a seeded experiment: an unseeded group-based
    /// mechanism draws its grouping from `(seed, index)`.
    pub fn run_sample(&self, profile: &[f64], seed: u64, index: u64) -> Result<Outcome> {
        match self {
            Mechanism::GroupBased(None) => {
                let mut rng = keyed_rng(seed, index, stream::GROUPING);
                group_based_run(profile, &Grouping::from_rng(profile.len(), &mut rng))
            }
            _ => self.run(profile),
        }
    }
}

fn parse_real(what: &'static str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(what, format!("`{}`: {e}", s.trim())))
}

impl FromStr for Mechanism {
    type Err = Error;

    /// Accepts `scs`, `single:d`, `multi:d1,..,dn`, `fixed:tC`, `optdeadline`,
    /// `groupopt[:seed]`, `seq:@file` and `seq:<records separated by |>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (tag, arg) = match s.split_once(':') {
            Some((tag, arg)) => (tag.trim(), Some(arg.trim())),
            None => (s, None),
        };
        let need = |arg: Option<&'_ str>| -> Result<String> {
            arg.filter(|a| !a.is_empty())
                .map(str::to_string)
                .ok_or_else(|| Error::parse("mechanism", format!("`{tag}` needs a parameter")))
        };
        let mech = match tag {
            "scs" => Mechanism::Scs,
            "optdeadline" => Mechanism::OptimalDeadline,
            "single" => Mechanism::SingleDeadline(parse_real("deadline", &need(arg)?)?),
            "fixed" => Mechanism::FixedDeadline(parse_real("deadline", &need(arg)?)?),
            "multi" => Mechanism::MultipleDeadline(
                need(arg)?
                    .split(',')
                    .map(|d| parse_real("deadline", d))
                    .collect::<Result<_>>()?,
            ),
            "groupopt" => Mechanism::GroupBased(match arg {
                Some(a) => Some(
                    a.parse()
                        .map_err(|e| Error::parse("grouping seed", format!("`{a}`: {e}")))?,
                ),
                None => None,
            }),
            "seq" => {
                let body = need(arg)?;
                let text = match body.strip_prefix('@') {
                    Some(path) => std::fs::read_to_string(path)
                        .map_err(|e| Error::parse("genome file", format!("{path}: {e}")))?,
                    None => body,
                };
                Mechanism::SequentialUnanimous(Genome::parse_text(&text)?)
            }
            other => return Err(Error::parse("mechanism", format!("unknown tag `{other}`"))),
        };
        mech.validate()?;
        Ok(mech)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::Scs => write!(f, "scs"),
            Mechanism::SingleDeadline(d) => write!(f, "single:{}", fmt_sig12(*d)),
            Mechanism::MultipleDeadline(ds) => {
                let ds: Vec<String> = ds.iter().map(|&d| fmt_sig12(d)).collect();
                write!(f, "multi:{}", ds.join(","))
            }
            Mechanism::FixedDeadline(t) => write!(f, "fixed:{}", fmt_sig12(*t)),
            Mechanism::OptimalDeadline => write!(f, "optdeadline"),
            Mechanism::GroupBased(None) => write!(f, "groupopt"),
            Mechanism::GroupBased(Some(seed)) => write!(f, "groupopt:{seed}"),
            Mechanism::SequentialUnanimous(genome) => write!(f, "seq:{genome}"),
        }
    }
}

impl Serialize for Mechanism {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}
