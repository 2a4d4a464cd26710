//! Randomized and deterministic matchings plus all stability metrics.
//!
//! A randomized matching is a doubly substochastic `n x m` matrix; the
//! unmatched mass of each agent is carried implicitly as slack. The pair
//! violation of `(s, c)` is the positive part of
//! `1 - r(s,c) - sum_{c' >_s c} r(s,c') - sum_{s' >_c s} r(s',c)`, the total
//! violation is its sum over all pairs, and for deterministic matchings the
//! total equals the number of blocking pairs.

use std::fmt;

use crate::prefs::{GroupElement, Profile};
use crate::{Error, Result};

/// Default numeric tolerance for feasibility and reconstruction checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// An `n x m` nonnegative matrix with row and column sums at most 1.
#[derive(Clone, PartialEq, Debug)]
pub struct RandomizedMatching {
    n: usize,
    m: usize,
    p: Vec<f64>,
}

impl RandomizedMatching {
    pub fn zero(n: usize, m: usize) -> Self {
        Self { n, m, p: vec![0.0; n * m] }
    }

    pub fn from_values(n: usize, m: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n * m {
            return Err(Error::InvalidProfile(format!(
                "matrix data length {} != {}x{}",
                p.len(),
                n,
                m
            )));
        }
        Ok(Self { n, m, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, s: usize, c: usize) -> f64 {
        self.p[s * self.m + c]
    }

    pub fn set(&mut self, s: usize, c: usize, v: f64) {
        self.p[s * self.m + c] = v;
    }

    pub fn add(&mut self, s: usize, c: usize, v: f64) {
        self.p[s * self.m + c] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn row_sum(&self, s: usize) -> f64 {
        self.p[s * self.m..(s + 1) * self.m].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> f64 {
        (0..self.n).map(|s| self.get(s, c)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Entries in `[0,1]` and all row/column sums at most 1, within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.p.iter().all(|&x| x >= -tol && x <= 1.0 + tol)
            && (0..self.n).all(|s| self.row_sum(s) <= 1.0 + tol)
            && (0..self.m).all(|c| self.col_sum(c) <= 1.0 + tol)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero(self.m, self.n);
        for s in 0..self.n {
            for c in 0..self.m {
                out.set(c, s, self.get(s, c));
            }
        }
        out
    }

    /// Transports the matrix along a group element: the result is the matrix
    /// of the relabeled profile, `out[g.apply cell] = self[cell]`.
    pub fn transport(&self, g: &GroupElement) -> Self {
        let base = if g.swap() { self.transpose() } else { self.clone() };
        let mut out = Self::zero(base.n, base.m);
        for s in 0..base.n {
            for c in 0..base.m {
                out.set(g.pi_s()[s], g.pi_c()[c], base.get(s, c));
            }
        }
        out
    }

    pub fn scaled_add(&mut self, w: f64, other: &Self) {
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += w * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV rows `profile_index,s,c,prob` (1-based agents, 6 decimals).
    pub fn to_csv_rows(&self, profile_index: u64) -> String {
        let mut out = String::new();
        for s in 0..self.n {
            for c in 0..self.m {
                out.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    profile_index,
                    s + 1,
                    c + 1,
                    self.get(s, c)
                ));
            }
        }
        out
    }
}

impl fmt::Display for RandomizedMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in 0..self.n {
            let row: Vec<String> = (0..self.m)
                .map(|c| format!("{:.6}", self.get(s, c)))
                .collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// A partial injective assignment student -> school.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct DeterministicMatching {
    n: usize,
    m: usize,
    school_of: Vec<Option<usize>>,
}

impl DeterministicMatching {
    pub fn empty(n: usize, m: usize) -> Self {
        Self { n, m, school_of: vec![None; n] }
    }

    pub fn from_pairs(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut out = Self::empty(n, m);
        for &(s, c) in pairs {
            out.assign(s, c)?;
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn assign(&mut self, s: usize, c: usize) -> Result<()> {
        if s >= self.n || c >= self.m {
            return Err(Error::InvalidProfile(format!("pair ({s},{c}) out of range")));
        }
        if self.school_of[s].is_some() || self.school_of.contains(&Some(c)) {
            return Err(Error::InvalidProfile(format!(
                "assignment ({s},{c}) conflicts with an existing pair"
            )));
        }
        self.school_of[s] = Some(c);
        Ok(())
    }

    pub fn school_of(&self, s: usize) -> Option<usize> {
        self.school_of[s]
    }

    pub fn student_of(&self, c: usize) -> Option<usize> {
        (0..self.n).find(|&s| self.school_of[s] == Some(c))
    }

    pub fn is_perfect(&self) -> bool {
        self.n == self.m && self.school_of.iter().all(Option::is_some)
    }

    pub fn matched_count(&self) -> usize {
        self.school_of.iter().filter(|x| x.is_some()).count()
    }

    pub fn to_matrix(&self) -> RandomizedMatching {
        let mut r = RandomizedMatching::zero(self.n, self.m);
        for (s, c) in self.school_of.iter().enumerate() {
            if let Some(c) = c {
                r.set(s, *c, 1.0);
            }
        }
        r
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.school_of
            .iter()
            .enumerate()
            .filter_map(|(s, c)| c.map(|c| (s, c)))
            .collect()
    }
}

/// Stability violation of a single pair, clamped at zero: one minus the
/// probability mass that blocks the pair.
pub fn pair_violation(r: &RandomizedMatching, profile: &Profile, s: usize, c: usize) -> Result<f64> {
    if s >= r.n() || c >= r.m() {
        return Err(Error::InvalidProfile(format!("pair ({s},{c}) out of range")));
    }
    let mut lhs = r.get(s, c);
    for &c2 in profile.student_pref(s).ranking() {
        if c2 == c {
            break;
        }
        lhs += r.get(s, c2);
    }
    for &s2 in profile.school_pref(c).ranking() {
        if s2 == s {
            break;
        }
        lhs += r.get(s2, c);
    }
    Ok((1.0 - lhs).max(0.0))
}

/// Sum of pair violations over all `(s, c)`.
pub fn total_violation(r: &RandomizedMatching, profile: &Profile) -> f64 {
    let mut total = 0.0;
    for s in 0..r.n() {
        for c in 0..r.m() {
            total += pair_violation(r, profile, s, c).expect("in range");
        }
    }
    total
}

/// All pairs where both sides strictly prefer each other to their current
/// partners; being unmatched is worst for everyone.
pub fn blocking_pairs(d: &DeterministicMatching, profile: &Profile) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..d.n() {
        for c in 0..d.m() {
            if d.school_of(s) == Some(c) {
                continue;
            }
            let s_wants = match d.school_of(s) {
                Some(cur) => profile.student_pref(s).prefers(c, cur),
                None => true,
            };
            if !s_wants {
                continue;
            }
            let c_wants = match d.student_of(c) {
                Some(cur) => profile.school_pref(c).prefers(s, cur),
                None => true,
            };
            if c_wants {
                out.push((s, c));
            }
        }
    }
    out
}

/// Every pair's stability inequality holds within `tol`.
pub fn is_fractionally_stable(r: &RandomizedMatching, profile: &Profile, tol: f64) -> bool {
    for s in 0..r.n() {
        for c in 0..r.m() {
            if pair_violation(r, profile, s, c).expect("in range") > tol {
                return false;
            }
        }
    }
    true
}

/// Unused capacity: `min(n, m)` minus the total matched mass.
pub fn waste(r: &RandomizedMatching) -> f64 {
    r.n().min(r.m()) as f64 - r.total_mass()
}

/// A convex combination of deterministic matchings.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub terms: Vec<(f64, DeterministicMatching)>,
}

impl Decomposition {
    pub fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|(w, _)| w).sum()
    }

    pub fn reconstruct(&self, n: usize, m: usize) -> RandomizedMatching {
        let mut r = RandomizedMatching::zero(n, m);
        for (w, d) in &self.terms {
            r.scaled_add(*w, &d.to_matrix());
        }
        r
    }
}

/// Birkhoff–von Neumann decomposition of a doubly substochastic matrix.
///
/// The matrix is padded to an `(n+m) x (n+m)` doubly stochastic one (dummy
/// rows and columns absorb the deficits, the corner block is the transpose
/// of the original), then perfect matchings on the positive support are
/// extracted and subtracted until nothing remains.
pub fn bvn_decompose(r: &RandomizedMatching, tol: f64) -> Result<Decomposition> {
    let (n, m) = (r.n(), r.m());
    for s in 0..n {
        if r.row_sum(s) > 1.0 + tol {
            return Err(Error::NotSubstochastic(format!("row {s} sums to {}", r.row_sum(s))));
        }
    }
    for c in 0..m {
        if r.col_sum(c) > 1.0 + tol {
            return Err(Error::NotSubstochastic(format!("column {c} sums to {}", r.col_sum(c))));
        }
    }
    if r.values().iter().any(|&x| x < -tol) {
        return Err(Error::NotSubstochastic("negative entry".into()));
    }

    let k = n + m;
    // padded[i][j]: real cells at [0..n) x [0..m), dummy column m+s absorbs
    // student s's deficit, dummy row n+c absorbs school c's deficit, corner
    // block is r transposed.
    let mut padded = vec![0.0f64; k * k];
    for s in 0..n {
        for c in 0..m {
            padded[s * k + c] = r.get(s, c).max(0.0);
        }
        padded[s * k + m + s] = (1.0 - r.row_sum(s)).max(0.0);
    }
    for c in 0..m {
        padded[(n + c) * k + c] = (1.0 - r.col_sum(c)).max(0.0);
        for s in 0..n {
            padded[(n + c) * k + (m + s)] = r.get(s, c).max(0.0);
        }
    }

    let support_eps = tol.max(1e-12);
    let max_terms = k * k - 2 * k + 2;
    let mut terms = Vec::new();
    let mut remaining = 1.0f64;
    for _ in 0..=max_terms {
        if remaining <= tol {
            break;
        }
        let perm = perfect_matching_on_support(&padded, k, support_eps).ok_or_else(|| {
            Error::NotSubstochastic("no perfect matching on positive support".into())
        })?;
        let w = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| padded[i * k + j])
            .fold(f64::INFINITY, f64::min);
        let mut d = DeterministicMatching::empty(n, m);
        for (i, &j) in perm.iter().enumerate() {
            if i < n && j < m {
                d.assign(i, j)?;
            }
        }
        let w = w.min(remaining);
        terms.push((w, d));
        for (i, &j) in perm.iter().enumerate() {
            padded[i * k + j] -= w;
        }
        remaining -= w;
    }
    if remaining > tol {
        return Err(Error::NotSubstochastic(format!(
            "decomposition left residual mass {remaining}"
        )));
    }
    Ok(Decomposition { terms })
}

/// Simple augmenting-path perfect matching on cells with value > eps.
fn perfect_matching_on_support(a: &[f64], k: usize, eps: f64) -> Option<Vec<usize>> {
    let mut match_col = vec![usize::MAX; k]; // column -> row
    fn try_row(
        a: &[f64],
        k: usize,
        eps: f64,
        row: usize,
        seen: &mut [bool],
        match_col: &mut [usize],
    ) -> bool {
        for col in 0..k {
            if a[row * k + col] > eps && !seen[col] {
                seen[col] = true;
                if match_col[col] == usize::MAX
                    || try_row(a, k, eps, match_col[col], seen, match_col)
                {
                    match_col[col] = row;
                    return true;
                }
            }
        }
        false
    }
    for row in 0..k {
        let mut seen = vec![false; k];
        if !try_row(a, k, eps, row, &mut seen, &mut match_col) {
            return None;
        }
    }
    let mut match_row = vec![0; k];
    for col in 0..k {
        match_row[match_col[col]] = col;
    }
    Some(match_row)
}
