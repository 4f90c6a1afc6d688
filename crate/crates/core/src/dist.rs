//! Priors over `[0, 1]`.
//!
//! Text form: `uniform`, `normal:<mean>,<sd>` (truncated to `[0, 1]` and
//! renormalised), `beta:<a>,<b>`, `bernoulli:<q>` and
//! `twopoint:<low>,<high>,<q>` where `q` is the probability of the second
//! value. `bernoulli:q` is `twopoint:0,1,q`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::model::TypeProfile;
use crate::rng::{keyed_rng, stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistributionSpec {
    Uniform,
    TruncatedNormal { mean: f64, sd: f64 },
    Beta { a: f64, b: f64 },
    Bernoulli { q: f64 },
    TwoPoint { low: f64, high: f64, q: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match *self {
            DistributionSpec::Uniform => Ok(()),
            DistributionSpec::TruncatedNormal { mean, sd } => {
                if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
                    return bad(format!("normal needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
                Ok(())
            }
            DistributionSpec::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
                    return bad(format!("beta needs a, b > 0, got ({a}, {b})"));
                }
                Ok(())
            }
            DistributionSpec::Bernoulli { q } => {
                if !(0.0..=1.0).contains(&q) {
                    return bad(format!("bernoulli probability {q} outside [0, 1]"));
                }
                Ok(())
            }
            DistributionSpec::TwoPoint { low, high, q } => {
                if !(0.0..=1.0).contains(&q) {
                    return bad(format!("two-point probability {q} outside [0, 1]"));
                }
                if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) {
                    return bad(format!("two-point support ({low}, {high}) outside [0, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            DistributionSpec::Uniform | DistributionSpec::TruncatedNormal { .. } | DistributionSpec::Beta { .. }
        )
    }

    /// Density view of a continuous prior; errors for point-mass priors.
    pub fn density(&self) -> Result<Density> {
        self.validate()?;
        match *self {
            DistributionSpec::Uniform => Ok(Density::Uniform),
            DistributionSpec::TruncatedNormal { mean, sd } => {
                let normal = Normal::new(mean, sd).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
                let lo = normal.cdf(0.0);
                let mass = normal.cdf(1.0) - lo;
                if !(mass > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "normal({mean}, {sd}) has no mass on [0, 1]"
                    )));
                }
                Ok(Density::TruncatedNormal { normal, lo, mass })
            }
            DistributionSpec::Beta { a, b } => Ok(Density::Beta {
                a,
                b,
                ln_norm: ln_beta(a, b),
            }),
            _ => Err(Error::DiscreteDistribution(self.to_string())),
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            DistributionSpec::Uniform => Sampler::Uniform,
            DistributionSpec::TruncatedNormal { .. } => match self.density()? {
                Density::TruncatedNormal { normal, lo, mass } => Sampler::TruncatedNormal { normal, lo, mass },
                _ => unreachable!(),
            },
            DistributionSpec::Beta { a, b } => {
                Sampler::Beta(rand_distr::Beta::new(a, b).map_err(|e| Error::InvalidDistribution(e.to_string()))?)
            }
            DistributionSpec::Bernoulli { q } => Sampler::TwoPoint { low: 0.0, high: 1.0, q },
            DistributionSpec::TwoPoint { low, high, q } => Sampler::TwoPoint { low, high, q },
        })
    }

    /// Finite support of a point-mass prior, `None` for continuous priors.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            DistributionSpec::Bernoulli { q } => Some(vec![(0.0, 1.0 - q), (1.0, q)]),
            DistributionSpec::TwoPoint { low, high, q } => Some(vec![(low, 1.0 - q), (high, q)]),
            _ => None,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Uniform => write!(f, "uniform"),
            DistributionSpec::TruncatedNormal { mean, sd } => write!(f, "normal:{mean},{sd}"),
            DistributionSpec::Beta { a, b } => write!(f, "beta:{a},{b}"),
            DistributionSpec::Bernoulli { q } => write!(f, "bernoulli:{q}"),
            DistributionSpec::TwoPoint { low, high, q } => write!(f, "twopoint:{low},{high},{q}"),
        }
    }
}

impl serde::Serialize for DistributionSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

fn parse_params(text: &str, expected: usize) -> Result<Vec<f64>> {
    let params = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse("distribution", format!("`{s}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if params.len() != expected {
        return Err(Error::parse(
            "distribution",
            format!("expected {expected} parameters, got {}", params.len()),
        ));
    }
    Ok(params)
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, params) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p)),
            None => (s, None),
        };
        let need = |p: Option<&str>, count: usize| -> Result<Vec<f64>> {
            match p {
                Some(p) => parse_params(p, count),
                None => Err(Error::parse("distribution", format!("`{kind}` needs parameters"))),
            }
        };
        let spec = match kind.to_ascii_lowercase().as_str() {
            "uniform" => {
                if params.is_some() {
                    return Err(Error::parse("distribution", "uniform takes no parameters"));
                }
                DistributionSpec::Uniform
            }
            "normal" => {
                let p = need(params, 2)?;
                DistributionSpec::TruncatedNormal { mean: p[0], sd: p[1] }
            }
            "beta" => {
                let p = need(params, 2)?;
                DistributionSpec::Beta { a: p[0], b: p[1] }
            }
            "bernoulli" => {
                let p = need(params, 1)?;
                DistributionSpec::Bernoulli { q: p[0] }
            }
            "twopoint" => {
                let p = need(params, 3)?;
                DistributionSpec::TwoPoint {
                    low: p[0],
                    high: p[1],
                    q: p[2],
                }
            }
            other => {
                return Err(Error::parse("distribution", format!("unknown kind `{other}`")));
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// pdf / cdf access for the continuous priors.
#[derive(Clone, Copy, Debug)]
pub enum Density {
    Uniform,
    TruncatedNormal { normal: Normal, lo: f64, mass: f64 },
    Beta { a: f64, b: f64, ln_norm: f64 },
}

impl Density {
    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match *self {
            Density::Uniform => 1.0,
            Density::TruncatedNormal { normal, mass, .. } => normal.pdf(x) / mass,
            Density::Beta { a, b, ln_norm } => {
                if (x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0) {
                    return f64::INFINITY;
                }
                ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_norm).exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match *self {
            Density::Uniform => x,
            Density::TruncatedNormal { normal, lo, mass } => ((normal.cdf(x) - lo) / mass).clamp(0.0, 1.0),
            Density::Beta { a, b, .. } => beta_reg(a, b, x),
        }
    }

    /// Upper tail `P(V >= x)`.
    pub fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// `∫_lo^hi f(x) dx`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.cdf(hi) - self.cdf(lo)
    }

    /// `f(0)`; infinite for Beta priors with `a < 1`.
    pub fn density_at_zero(&self) -> f64 {
        self.pdf(0.0)
    }
}

/// A prepared sampler; draw with any `Rng`.
#[derive(Clone, Debug)]
pub enum Sampler {
    Uniform,
    TruncatedNormal { normal: Normal, lo: f64, mass: f64 },
    Beta(rand_distr::Beta<f64>),
    TwoPoint { low: f64, high: f64, q: f64 },
}

impl Sampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform => rng.random::<f64>(),
            Sampler::TruncatedNormal { normal, lo, mass } => {
                // inverse cdf on the truncated mass
                let u: f64 = rng.random();
                normal.inverse_cdf(lo + u * mass).clamp(0.0, 1.0)
            }
            Sampler::Beta(beta) => beta.sample(rng),
            Sampler::TwoPoint { low, high, q } => {
                if rng.random::<f64>() < *q {
                    *high
                } else {
                    *low
                }
            }
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for slot in out {
            *slot = self.sample(rng);
        }
    }
}

/// Draws `n` i.i.d. valuations. Deterministic in `(dist, n, seed)`.
pub fn sample_profile(dist: &DistributionSpec, n: usize, seed: u64) -> Result<TypeProfile> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let sampler = dist.sampler()?;
    let mut rng = keyed_rng(seed, 0, stream::PROFILE);
    let mut values = vec![0.0; n];
    sampler.fill(&mut rng, &mut values);
    TypeProfile::new(values)
}
