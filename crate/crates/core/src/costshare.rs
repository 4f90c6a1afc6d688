//! Equal-split cost-share predicates.
//!
//! For a value vector `w`, `k` is feasible when at least `k` entries are
//! `>= 1/k`, equivalently when the k-th largest entry is `>= 1/k`. All
//! comparisons are exact `>=` on the floating values.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostShareResult {
    pub feasible: bool,
    pub k_star: usize,
}

/// Values sorted in descending order.
pub(crate) fn sorted_desc(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted
}

/// Agent indices ordered by value, highest first; equal values keep the lower index first.
pub(crate) fn ranking(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order
}

/// Largest feasible `k` over a descending-sorted slice, 0 if none.
pub(crate) fn largest_k_sorted(sorted: &[f64]) -> usize {
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|&(idx, &w)| w >= 1.0 / (idx + 1) as f64)
        .map_or(0, |(idx, _)| idx + 1)
}

pub fn cost_share(values: &[f64]) -> CostShareResult {
    let k_star = largest_k_sorted(&sorted_desc(values));
    CostShareResult {
        feasible: k_star > 0,
        k_star,
    }
}

/// `I(w)`: some group of `k` agents can split the unit cost equally.
pub fn indicator(values: &[f64]) -> bool {
    largest_k(values) > 0
}

/// `K(w)`: the largest such `k`, or 0.
pub fn largest_k(values: &[f64]) -> usize {
    cost_share(values).k_star
}

/// `I(w_{-i})` for every agent `i`, in `O(n log n)`.
///
/// Removing the agent at sorted position `pos` shifts every rank `k > pos`
/// up by one, so feasibility without it is a prefix test on the original
/// ranks combined with a suffix test on the shifted ranks.
pub(crate) fn leave_one_out_indicator(values: &[f64], order: &[usize]) -> Vec<bool> {
    let n = values.len();
    if n <= 1 {
        return vec![false; n];
    }
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    // prefix[j] = any k in 1..=j with sorted[k-1] >= 1/k
    let mut prefix = vec![false; n + 1];
    for k in 1..=n {
        prefix[k] = prefix[k - 1] || sorted[k - 1] >= 1.0 / k as f64;
    }
    // suffix[j] = any k in j..=n-1 with sorted[k] >= 1/k
    let mut suffix = vec![false; n + 1];
    for k in (1..n).rev() {
        suffix[k] = suffix[k + 1] || sorted[k] >= 1.0 / k as f64;
    }
    let mut out = vec![false; n];
    for (pos, &agent) in order.iter().enumerate() {
        let head = prefix[pos.min(n - 1)];
        let tail = if pos < n - 1 { suffix[pos + 1] } else { false };
        out[agent] = head || tail;
    }
    out
}

/// Deadline at which the `k` highest values can first split the cost:
/// `1 / (k * v_(k))`, infinite when `v_(k) = 0`.
#[inline]
fn required_deadline(k: usize, kth_value: f64) -> f64 {
    if kth_value > 0.0 {
        1.0 / (k as f64 * kth_value)
    } else {
        f64::INFINITY
    }
}

pub(crate) fn largest_k_at_deadline_sorted(sorted: &[f64], t_c: f64) -> usize {
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|&(idx, &v)| required_deadline(idx + 1, v) <= t_c)
        .map_or(0, |(idx, _)| idx + 1)
}

/// `max K(t_C)`: the largest `k` such that `k` values are at least `1/(k t_C)`.
pub fn largest_k_at_deadline(values: &[f64], t_c: f64) -> Result<usize> {
    if !(t_c > 0.0 && t_c <= 1.0) {
        return Err(Error::OutOfDomain {
            name: "t_C",
            value: t_c,
            domain: "(0, 1]",
        });
    }
    Ok(largest_k_at_deadline_sorted(&sorted_desc(values), t_c))
}

pub(crate) fn optimal_deadline_sorted(sorted: &[f64]) -> f64 {
    sorted
        .iter()
        .enumerate()
        .map(|(idx, &v)| required_deadline(idx + 1, v))
        .fold(1.0, f64::min)
}

/// The smallest deadline whose set `K(t_C)` is non-empty, capped at 1.
pub fn optimal_deadline(values: &[f64]) -> f64 {
    optimal_deadline_sorted(&sorted_desc(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_k(values: &[f64]) -> usize {
        (1..=values.len())
            .filter(|&k| values.iter().filter(|&&v| v >= 1.0 / k as f64).count() >= k)
            .max()
            .unwrap_or(0)
    }

    fn brute_force_leave_one_out(values: &[f64]) -> Vec<bool> {
        (0..values.len())
            .map(|i| {
                let rest: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v)
                    .collect();
                brute_force_k(&rest) > 0
            })
            .collect()
    }

    #[test]
    fn indicator_examples() {
        assert!(indicator(&[0.5, 0.5]));
        assert!(!indicator(&[0.4, 0.4]));
        assert!(!indicator(&[]));
    }

    #[test]
    fn largest_k_examples() {
        assert_eq!(largest_k(&[0.9, 0.8, 0.26, 0.26]), 4);
        assert_eq!(largest_k(&[1.0, 0.0]), 1);
        assert_eq!(largest_k(&[0.4, 0.3]), 0);
    }

    #[test]
    fn largest_k_at_deadline_examples() {
        let v = [0.9, 0.8, 0.26, 0.26];
        assert_eq!(largest_k_at_deadline(&v, 0.9).unwrap(), 2);
        assert_eq!(largest_k_at_deadline(&v, 0.5).unwrap(), 0);
        assert_eq!(largest_k_at_deadline(&[1.0, 1.0], 1.0).unwrap(), 2);
        assert!(largest_k_at_deadline(&v, 0.0).is_err());
    }

    #[test]
    fn optimal_deadline_examples() {
        assert!((optimal_deadline(&[0.9, 0.8, 0.26, 0.26]) - 0.625).abs() < 1e-12);
        assert_eq!(optimal_deadline(&[0.4, 0.3]), 1.0);
        assert_eq!(optimal_deadline(&[1.0, 1.0]), 0.5);
        assert_eq!(optimal_deadline(&[]), 1.0);
        assert_eq!(optimal_deadline(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(ranking(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }

    proptest! {
        #[test]
        fn indicator_iff_k_positive(values in prop::collection::vec(0.0f64..=1.0, 0..12)) {
            prop_assert_eq!(indicator(&values), largest_k(&values) >= 1);
            prop_assert_eq!(largest_k(&values), brute_force_k(&values));
        }

        #[test]
        fn largest_k_is_monotone(
            values in prop::collection::vec(0.0f64..=1.0, 1..10),
            idx in 0usize..10,
            bump in 0.0f64..1.0,
        ) {
            let idx = idx % values.len();
            let mut raised = values.clone();
            raised[idx] = (raised[idx] + bump).min(1.0);
            prop_assert!(largest_k(&raised) >= largest_k(&values));
        }

        #[test]
        fn deadline_k_is_nondecreasing(
            values in prop::collection::vec(0.0f64..=1.0, 1..10),
            a in 0.001f64..=1.0,
            b in 0.001f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                largest_k_at_deadline(&values, lo).unwrap()
                    <= largest_k_at_deadline(&values, hi).unwrap()
            );
        }

        #[test]
        fn deadline_k_matches_scaled_profile(
            values in prop::collection::vec(0.0f64..=1.0, 1..10),
            t in 0.001f64..=1.0,
        ) {
            let scaled: Vec<f64> = values.iter().map(|v| v * t).collect();
            prop_assert_eq!(largest_k_at_deadline(&values, t).unwrap(), brute_force_k(&scaled));
        }

        #[test]
        fn leave_one_out_matches_brute_force(
            values in prop::collection::vec(
                prop_oneof![Just(0.0), Just(0.25), Just(0.5), Just(1.0), 0.0f64..=1.0],
                0..10,
            ),
        ) {
            let order = ranking(&values);
            prop_assert_eq!(leave_one_out_indicator(&values, &order), brute_force_leave_one_out(&values));
        }
    }
}
