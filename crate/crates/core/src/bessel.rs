//! Spherical Bessel functions of the first kind and the extrema of `j_n`.
//!
//! The modes of a rigid spherical cavity sit at the zeros of `j'_n`, so the
//! root tables computed here are the dimensionless mode constants from which
//! every sphere frequency series is derived.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest order for which root tables are guaranteed.
pub const MAX_ROOT_ORDER: u32 = 12;
/// Largest number of roots per order a table may hold.
pub const MAX_ROOT_COUNT: usize = 64;

const SCAN_STEP: f64 = PI / 8.0;
const BISECTION_WIDTH: f64 = 1e-12;

/// Evaluates `j_n(x)` for `x >= 0`.
///
/// Orders up to 2 use the closed sin/cos forms, arguments below
/// `max(0.5, n)` use the ascending power series, and everything else is
/// reached by upward recurrence from `j_0` and `j_1`.
pub fn spherical_j(n: u32, x: f64) -> Result<f64> {
    check_argument(x)?;
    if x == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok(eval_j(n, x))
}

/// Evaluates `j'_n(x)` through `j'_n = [n j_{n-1} - (n+1) j_{n+1}] / (2n+1)`.
pub fn spherical_j_prime(n: u32, x: f64) -> Result<f64> {
    check_argument(x)?;
    if x == 0.0 {
        // Only j_1 has a nonzero slope at the origin.
        return Ok(if n == 1 { 1.0 / 3.0 } else { 0.0 });
    }
    Ok(eval_j_prime(n, x))
}

fn check_argument(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("argument {x} is not finite")));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("argument {x} is negative")));
    }
    Ok(())
}

fn eval_j_prime(n: u32, x: f64) -> f64 {
    if n == 0 {
        return -eval_j(1, x);
    }
    let nf = n as f64;
    (nf * eval_j(n - 1, x) - (nf + 1.0) * eval_j(n + 1, x)) / (2.0 * nf + 1.0)
}

fn eval_j(n: u32, x: f64) -> f64 {
    if x < 0.5_f64.max(n as f64) {
        return power_series(n, x);
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    if n == 0 {
        return j0;
    }
    let j1 = (s / x - c) / x;
    if n == 1 {
        return j1;
    }
    if n == 2 {
        return (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
    }
    let (mut prev, mut cur) = (j0, j1);
    for k in 1..n {
        let next = (2.0 * k as f64 + 1.0) / x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `j_n(x) = x^n / (2n+1)!! * sum_k (-x^2/2)^k / (k! (2n+3)(2n+5)...(2n+2k+1))`.
fn power_series(n: u32, x: f64) -> f64 {
    let mut prefactor = 1.0;
    for k in 1..=n {
        prefactor *= x / (2.0 * k as f64 + 1.0);
    }
    let half_sq = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= half_sq / (k * (2.0 * n as f64 + 2.0 * k + 1.0));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || k > 200.0 {
            break;
        }
        k += 1.0;
    }
    prefactor * sum
}

/// Roots of `j'_n` for one order, ascending, indexed from `s = 1`.
///
/// Orders other than 1 carry the conventional root at `x = 0` in slot `s = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTable {
    order: u32,
    roots: Vec<f64>,
}

impl RootTable {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn roots(&self) -> &[f64] {
        &self.roots
    }

    /// Root number `s` (1-based).
    pub fn root(&self, s: usize) -> Option<f64> {
        s.checked_sub(1).and_then(|i| self.roots.get(i).copied())
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// True when slot `s = 1` holds the conventional dc root.
    pub fn has_dc_root(&self) -> bool {
        self.roots.first() == Some(&0.0)
    }
}

/// Finds the first `count` roots of `j'_n`, including the dc root for `n != 1`.
///
/// Sign changes are bracketed on a grid of width pi/8 starting at
/// `max(0.1, n/2)` and then bisected.
pub fn find_roots(n: u32, count: usize) -> Result<RootTable> {
    if n > MAX_ROOT_ORDER {
        return Err(Error::arg(format!(
            "order {n} exceeds the supported maximum {MAX_ROOT_ORDER}"
        )));
    }
    if count == 0 || count > MAX_ROOT_COUNT {
        return Err(Error::arg(format!(
            "root count {count} outside 1..={MAX_ROOT_COUNT}"
        )));
    }

    let mut roots = Vec::with_capacity(count);
    if n != 1 {
        roots.push(0.0);
    }

    // Consecutive roots are never closer than pi, so this window leaves slack.
    let limit = n as f64 + (count as f64 + 4.0) * PI;
    let mut lo = 0.1_f64.max(n as f64 / 2.0);
    let mut f_lo = eval_j_prime(n, lo);
    while roots.len() < count {
        let hi = lo + SCAN_STEP;
        if hi > limit {
            return Err(Error::Numeric(format!(
                "no bracket found for root s = {} of order n = {n} below x = {limit:.3}",
                roots.len() + 1
            )));
        }
        let f_hi = eval_j_prime(n, hi);
        if f_lo == 0.0 {
            roots.push(lo);
        } else if f_lo * f_hi < 0.0 {
            roots.push(bisect(n, lo, hi, f_lo));
        }
        lo = hi;
        f_lo = f_hi;
    }

    Ok(RootTable { order: n, roots })
}

fn bisect(n: u32, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval_j_prime(n, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid * f_lo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Differences of contiguous roots divided by pi, one entry per adjacent pair.
pub fn normalized_spacing(table: &RootTable) -> Result<Vec<f64>> {
    if table.len() < 2 {
        return Err(Error::arg(format!(
            "spacing needs at least 2 roots, order {} has {}",
            table.order,
            table.len()
        )));
    }
    Ok(table.roots.windows(2).map(|w| (w[1] - w[0]) / PI).collect())
}

/// Root tables for orders `0..=max_order`, each holding `count` roots.
pub fn root_tables(max_order: u32, count: usize) -> Result<Vec<RootTable>> {
    (0..=max_order).map(|n| find_roots(n, count)).collect()
}
