//! Closed forms and bounds: SCS max-delay, binomial tail bounds, the delay versus
//! payment ratio and its minimizer, and the group-based competitive sum.

use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::dist::{Density, DistributionSpec};
use crate::error::{Error, Result};

/// `1 - (1 - F(1/n))^n`, the expected max-delay of serial cost sharing.
pub fn scs_expected_maxdelay_closed_form(dist: &DistributionSpec, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let density = dist.density()?;
    let tail = density.sf(1.0 / n as f64);
    if tail <= 0.0 {
        return Ok(1.0);
    }
    Ok(-(n as f64 * tail.ln()).exp_m1())
}

/// Large-`n` limit `1 - e^{-f(0)}` of the SCS expected max-delay.
pub fn scs_maxdelay_asymptote(dist: &DistributionSpec) -> Result<f64> {
    let f0 = dist.density()?.density_at_zero();
    Ok(-(-f0).exp_m1())
}

/// A probability bound kept as its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBound {
    pub ln: f64,
}

impl TailBound {
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }

    pub fn log10(&self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

fn check_tail_args(n: usize, p: f64, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfDomain {
            name: "p",
            value: p,
            domain: "[0, 1]",
        });
    }
    if k as f64 >= n as f64 * p {
        return Err(Error::BoundInapplicable(format!(
            "k = {k} is not below n p = {}",
            n as f64 * p
        )));
    }
    Ok(())
}

/// Hoeffding: `P(B <= k) <= exp(-2n(p - k/n)^2)` for `B ~ Bin(n, p)`, `k < np`.
pub fn hoeffding_tail(n: usize, p: f64, k: usize) -> Result<TailBound> {
    check_tail_args(n, p, k)?;
    let gap = p - k as f64 / n as f64;
    Ok(TailBound {
        ln: -2.0 * n as f64 * gap * gap,
    })
}

/// Relative entropy between Bernoulli(a) and Bernoulli(p).
pub fn kl_bernoulli(a: f64, p: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(a, p) + term(1.0 - a, 1.0 - p)
}

/// Chernoff: `P(B <= k) <= exp(-n D(k/n || p))`, requiring `0 < k/n < p < 1`.
pub fn chernoff_kl_tail(n: usize, p: f64, k: usize) -> Result<TailBound> {
    check_tail_args(n, p, k)?;
    let a = k as f64 / n as f64;
    if !(a > 0.0 && p < 1.0) {
        return Err(Error::BoundInapplicable(format!(
            "need 0 < k/n < p < 1, got k/n = {a}, p = {p}"
        )));
    }
    Ok(TailBound {
        ln: -(n as f64) * kl_bernoulli(a, p),
    })
}

fn ratio_with(density: &Density, o: f64) -> f64 {
    if o == 0.0 {
        return density.density_at_zero();
    }
    let sf = density.sf(o);
    if sf <= 0.0 {
        return f64::INFINITY;
    }
    density.cdf(o) / (o * sf)
}

/// Delay versus payment ratio `r(o) = F(o) / (o (1 - F(o)))`, with `r(0) = f(0)`.
pub fn ratio_r(dist: &DistributionSpec, o: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&o) {
        return Err(Error::OutOfDomain {
            name: "offer",
            value: o,
            domain: "[0, 1)",
        });
    }
    Ok(ratio_with(&dist.density()?, o))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioCurve {
    pub o_star: f64,
    pub r_star: f64,
}

const OFFER_GRID: f64 = 1e-4;
const OFFER_TOL: f64 = 1e-6;

/// Minimizes `r` over `[0, 1)`: a scan with step `1e-4`, then golden-section
/// search around the best grid point down to width `1e-6`.
pub fn optimal_offer(dist: &DistributionSpec) -> Result<RatioCurve> {
    let density = dist.density()?;
    let steps = (1.0 / OFFER_GRID).round() as usize;
    let (mut best_o, mut best_r) = (0.0, f64::INFINITY);
    for j in 0..steps {
        let o = j as f64 * OFFER_GRID;
        let r = ratio_with(&density, o);
        if r < best_r {
            best_o = o;
            best_r = r;
        }
    }
    let upper = 1.0 - OFFER_GRID;
    let (mut a, mut b) = ((best_o - OFFER_GRID).max(0.0), (best_o + OFFER_GRID).min(upper));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |o: f64| {
        if o > 0.0 {
            ratio_with(&density, o)
        } else {
            f64::INFINITY
        }
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    while b - a > OFFER_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    for (o, r) in [(c, fc), (d, fd)] {
        if r < best_r {
            best_o = o;
            best_r = r;
        }
    }
    Ok(RatioCurve {
        o_star: best_o,
        r_star: best_r,
    })
}

/// `r* (1 - fail_prob)`, a lower bound on any strategy-proof mechanism's expected sum-delay.
pub fn sumdelay_lower_bound(dist: &DistributionSpec, fail_prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fail_prob) {
        return Err(Error::OutOfDomain {
            name: "fail_prob",
            value: fail_prob,
            domain: "[0, 1]",
        });
    }
    Ok(optimal_offer(dist)?.r_star * (1.0 - fail_prob))
}

/// Single deadline `(1 + eps) / (n o (1 - F(o)))` with `o = max(o*, gamma_floor)`, clamped to `[0, 1]`.
pub fn recommended_deadline(dist: &DistributionSpec, n: usize, epsilon: f64, gamma_floor: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::OutOfDomain {
            name: "epsilon",
            value: epsilon,
            domain: "(0, inf)",
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let curve = optimal_offer(dist)?;
    let o = curve.o_star.max(gamma_floor);
    if !(o > 0.0 && o < 1.0) {
        return Err(Error::OutOfDomain {
            name: "offer",
            value: o,
            domain: "(0, 1)",
        });
    }
    let denom = n as f64 * o * dist.density()?.sf(o);
    let d = if denom > 0.0 { (1.0 + epsilon) / denom } else { 1.0 };
    Ok(d.clamp(0.0, 1.0))
}

fn binomial_exact(k: u64, j: u64) -> f64 {
    let j = j.min(k - j);
    let mut acc: u128 = 1;
    for i in 0..j {
        acc = acc * (k - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}

/// `alpha(k) = sum_{j=0}^{k} C(k, j) / 2^k * k / max(1, min(j, k - j))`, the expected
/// deadline inflation of the group-based mechanism when `k` agents can pay.
pub fn alpha_k(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("alpha(k) needs k >= 1".into()));
    }
    let k64 = k as u64;
    let weight = |j: u64| -> f64 {
        if k <= 60 {
            binomial_exact(k64, j) / 2f64.powi(k as i32)
        } else {
            (ln_binomial(k64, j) - k as f64 * std::f64::consts::LN_2).exp()
        }
    };
    Ok((0..=k64)
        .map(|j| weight(j) * k as f64 / j.min(k64 - j).max(1) as f64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn scs_closed_form_uniform() {
        let u = DistributionSpec::Uniform;
        assert!(close(scs_expected_maxdelay_closed_form(&u, 500).unwrap(), 0.632, 0.001));
        assert!(close(scs_expected_maxdelay_closed_form(&u, 1).unwrap(), 1.0, 1e-12));
        assert!(close(scs_maxdelay_asymptote(&u).unwrap(), 1.0 - (-1f64).exp(), 1e-12));
        let b = DistributionSpec::Bernoulli { q: 0.5 };
        assert!(scs_expected_maxdelay_closed_form(&b, 3).is_err());
    }

    #[test]
    fn hoeffding_examples() {
        assert!(close(
            hoeffding_tail(500, 0.6, 250).unwrap().value(),
            (-10f64).exp(),
            1e-15
        ));
        assert!(close(hoeffding_tail(2, 0.5, 0).unwrap().value(), (-1f64).exp(), 1e-15));
        let ln = hoeffding_tail(500, 0.84, 250).unwrap().ln;
        assert!(close(ln, -2.0 * 500.0 * 0.34 * 0.34, 1e-9));
        assert!(matches!(
            hoeffding_tail(500, 0.5, 250),
            Err(Error::BoundInapplicable(_))
        ));
    }

    #[test]
    fn chernoff_examples() {
        let b = chernoff_kl_tail(500, 0.6, 250).unwrap().value();
        assert!((b / 3.69e-5 - 1.0).abs() < 0.01, "{b}");
        let near = chernoff_kl_tail(1_000_000, 0.5, 499_999).unwrap().value();
        assert!(near > 0.99);
        assert!(chernoff_kl_tail(500, 0.6, 0).is_err());
        assert!(chernoff_kl_tail(500, 1.0, 250).is_err());
    }

    #[test]
    fn ratio_examples() {
        let u = DistributionSpec::Uniform;
        assert!(close(ratio_r(&u, 0.5).unwrap(), 2.0, 1e-12));
        assert!(close(ratio_r(&u, 0.0).unwrap(), 1.0, 1e-12));
        assert!(ratio_r(&u, 1.0).is_err());
        let curve = optimal_offer(&u).unwrap();
        assert_eq!(curve.o_star, 0.0);
        assert!(close(curve.r_star, 1.0, 1e-12));
    }

    #[test]
    fn beta_optimal_offer() {
        let beta = DistributionSpec::Beta { a: 0.5, b: 0.5 };
        let curve = optimal_offer(&beta).unwrap();
        assert!(close(curve.r_star, 1.927, 0.005), "{curve:?}");
        assert!(close(curve.o_star, 0.3677, 0.002), "{curve:?}");
        for j in 1..1000 {
            let o = j as f64 / 1000.0;
            assert!(ratio_r(&beta, o).unwrap() >= curve.r_star - 1e-12);
        }
    }

    #[test]
    fn lower_bounds() {
        let u = DistributionSpec::Uniform;
        assert!(close(sumdelay_lower_bound(&u, 0.002).unwrap(), 0.998, 1e-9));
        assert_eq!(sumdelay_lower_bound(&u, 1.0).unwrap(), 0.0);
        let beta = DistributionSpec::Beta { a: 0.5, b: 0.5 };
        assert!(close(sumdelay_lower_bound(&beta, 0.00387).unwrap(), 1.920, 0.005));
    }

    #[test]
    fn recommended_deadline_examples() {
        let u = DistributionSpec::Uniform;
        let d = recommended_deadline(&u, 500, 0.01, 0.01).unwrap();
        assert!(close(d, 1.01 / (500.0 * 0.01 * 0.99), 1e-9));
        assert_eq!(recommended_deadline(&u, 2, 0.01, 0.01).unwrap(), 1.0);
        let beta = DistributionSpec::Beta { a: 0.5, b: 0.5 };
        let d = recommended_deadline(&beta, 500, 0.01, 0.01).unwrap();
        assert!(d > 0.005 && d < 0.02, "{d}");
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_k(1).unwrap(), 1.0);
        assert_eq!(alpha_k(2).unwrap(), 2.0);
        assert_eq!(alpha_k(4).unwrap(), 3.25);
        assert!(alpha_k(0).is_err());
        // The two summation branches agree where they meet.
        let exact: f64 = (0..=61u64)
            .map(|j| binomial_exact(61, j) / 2f64.powi(61) * 61.0 / j.min(61 - j).max(1) as f64)
            .sum();
        assert!(close(alpha_k(61).unwrap(), exact, 1e-9));
    }
}
