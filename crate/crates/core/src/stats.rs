//! Deterministic reductions and empirical-law statistics.
//!
//! Every reduction here splits its input at fixed midpoints regardless of
//! how many threads execute it, so serial and parallel runs produce the same
//! bits.

use crate::error::{Error, Result};
use crate::scalar::Real;

const LEAF: usize = 32;
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// Pairwise sum of `f(i)` for `i` in `0..len`, left-to-right at the leaves.
pub fn pairwise_sum_by<T, F>(len: usize, f: &F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    sum_range(0, len, f)
}

fn sum_range<T, F>(lo: usize, hi: usize, f: &F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = T::zero();
        for i in lo..hi {
            acc = acc + f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PARALLEL_THRESHOLD {
        let (a, b) = rayon::join(|| sum_range(lo, mid, f), || sum_range(mid, hi, f));
        a + b
    } else {
        sum_range(lo, mid, f) + sum_range(mid, hi, f)
    }
}

pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    pairwise_sum_by(xs.len(), &|i| xs[i])
}

/// Arithmetic mean with the deterministic pairwise reduction.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    pairwise_sum(xs) / T::from_count(xs.len())
}

/// Mean of `f(i)` over `0..len`.
pub fn mean_by<T, F>(len: usize, f: &F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    pairwise_sum_by(len, f) / T::from_count(len)
}

/// Unbiased sample variance.
pub fn variance<T: Real>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean(xs);
    pairwise_sum_by(n, &|i| (xs[i] - m) * (xs[i] - m)) / T::from_count(n - 1)
}

pub fn std_dev<T: Real>(xs: &[T]) -> T {
    variance(xs).sqrt()
}

/// Statistical tolerance `sigmas * sd / sqrt(N)` for a sample mean.
pub fn stat_tol<T: Real>(xs: &[T], sigmas: T) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    sigmas * std_dev(xs) / T::from_count(xs.len()).sqrt()
}

/// Root mean square of `a - b`.
pub fn rms_gap<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    mean_by(a.len(), &|i| (a[i] - b[i]) * (a[i] - b[i])).sqrt()
}

fn sorted<T: Real>(xs: &[T]) -> Vec<T> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// 1-Wasserstein distance between two equal-size empirical laws.
///
/// In one dimension the monotone (sorted) coupling is optimal, so the
/// distance is the mean absolute gap of the order statistics.
pub fn w1_empirical<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "w1_empirical needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("w1_empirical needs at least one sample"));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    Ok(mean_by(sa.len(), &|i| (sa[i] - sb[i]).abs()))
}

/// Total variation of a sequence, `sum |x_{k+1} - x_k|`.
pub fn variation<T: Real>(xs: &[T]) -> T {
    xs.windows(2).fold(T::zero(), |acc, w| acc + (w[1] - w[0]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..100_000).map(|i| (i % 17) as f64).collect();
        let naive: f64 = xs.iter().sum();
        assert_eq!(pairwise_sum(&xs), naive);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[-1.0, 1.0]), 0.0);
        assert_eq!(mean(&[2.0, 2.0, 2.0]), 2.0);
        assert_eq!(mean(&[0.0, 1.0, 2.0, 3.0]), 1.5);
    }

    #[test]
    fn w1_examples() {
        let a = [0.3, -1.2, 4.0, 2.2];
        assert_eq!(w1_empirical(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x - 0.75).collect();
        assert!((w1_empirical(&a, &shifted).unwrap() - 0.75).abs() < 1e-15);
        assert!(w1_empirical(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// Brute-force optimal transport between two uniform 2-point laws: the
    /// only couplings that are permutations are identity and swap, and the
    /// LP optimum of a uniform assignment problem is attained at one of them.
    #[test]
    fn w1_two_point_lp_oracle() {
        let a = [0.0f64, 2.0];
        let b = [1.0f64, 3.0];
        let identity = 0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs());
        let swap = 0.5 * ((a[0] - b[1]).abs() + (a[1] - b[0]).abs());
        let oracle = identity.min(swap);
        assert_eq!(oracle, 1.0);
        assert_eq!(w1_empirical(&a, &b).unwrap(), oracle);
    }

    fn triple(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = || proptest::collection::vec(-50.0f64..50.0, n);
        (v(), v(), v())
    }

    proptest! {
        #[test]
        fn w1_symmetric_nonnegative((a, b, _c) in (1usize..40).prop_flat_map(triple)) {
            let ab = w1_empirical(&a, &b).unwrap();
            let ba = w1_empirical(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        }

        #[test]
        fn w1_zero_iff_same_sorted(a in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let mut perm = a.clone();
            perm.reverse();
            prop_assert_eq!(w1_empirical(&a, &perm).unwrap(), 0.0);
            let mut other = a.clone();
            other[0] += 1.0;
            prop_assert!(w1_empirical(&a, &other).unwrap() > 0.0);
        }

        #[test]
        fn w1_triangle((a, b, c) in (1usize..40).prop_flat_map(triple)) {
            let ab = w1_empirical(&a, &b).unwrap();
            let bc = w1_empirical(&b, &c).unwrap();
            let ac = w1_empirical(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
