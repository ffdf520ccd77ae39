//! Exact integer factorials and binomials.
//!
//! Coefficients in the product formula and in the contraction bound grow like
//! `(p+q)!` times products of binomials, so everything is carried in `u128`
//! with checked arithmetic. Orders up to `p + q = 30` fit comfortably.

use crate::error::{Error, Result};

pub fn factorial(n: u32) -> u128 {
    (1..=n as u128).product()
}

pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

pub(crate) fn checked_product(factors: &[u128]) -> Result<u128> {
    factors.iter().try_fold(1u128, |acc, &f| {
        acc.checked_mul(f)
            .ok_or_else(|| Error::InvalidArgument("combinatorial coefficient overflows u128".into()))
    })
}

/// Falling factorial `n (n-1) ... (n-k+1)` as a float.
pub fn falling_factorial(n: u64, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k as u64 {
        if i >= n {
            return 0.0;
        }
        acc *= (n - i) as f64;
    }
    acc
}

/// All permutations of `0..q` in lexicographic order.
pub fn permutations(q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..q).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (0..q.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..q).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        assert_eq!(factorial(0), 1);
        assert_eq!(factorial(8), 40320);
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(30, 15), 155_117_520);
    }

    #[test]
    fn pascal_rule() {
        for n in 1..25 {
            for k in 1..n {
                assert_eq!(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
            }
        }
    }

    #[test]
    fn permutation_count() {
        for q in 0..6 {
            let p = permutations(q);
            assert_eq!(p.len() as u128, factorial(q as u32));
            let mut sorted = p.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), p.len());
        }
    }

    #[test]
    fn falling() {
        assert_eq!(falling_factorial(5, 0), 1.0);
        assert_eq!(falling_factorial(5, 2), 20.0);
        assert_eq!(falling_factorial(2, 3), 0.0);
    }
}
