//! Symmetric collocation point sets on `[-1, 1]^n` and their mapping into
//! the physical perturbation box.
//!
//! The CUT-style sets are unions of fully symmetric orbits (all coordinate
//! permutations and sign flips of a generator). Orbit weights come from a
//! linear program that matches the uniform-measure moments on the cube.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::basis::{binomial, build_dictionary};
use crate::simplex;

#[derive(Debug, Error)]
pub enum PointsError {
    #[error("infeasible {scheme} weight solve: {reason}")]
    Infeasible { scheme: Scheme, reason: String },
    #[error("{scheme} needs {n} points, above the cap of {cap}")]
    TooMany { scheme: Scheme, n: usize, cap: usize },
    #[error("invalid point request: {0}")]
    Invalid(String),
    #[error("unknown point scheme `{0}`")]
    UnknownScheme(String),
    #[error("every scheme in the fallback ladder failed: {0}")]
    LadderExhausted(String),
    #[error("malformed point file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Cut4,
    Cut6,
    Cut8,
    Lhs,
    MonteCarlo,
}

impl Scheme {
    pub fn order(self) -> Option<u32> {
        match self {
            Scheme::Cut4 => Some(4),
            Scheme::Cut6 => Some(6),
            Scheme::Cut8 => Some(8),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Cut4 => "cut4",
            Scheme::Cut6 => "cut6",
            Scheme::Cut8 => "cut8",
            Scheme::Lhs => "lhs",
            Scheme::MonteCarlo => "monte_carlo",
        })
    }
}

impl FromStr for Scheme {
    type Err = PointsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cut4" => Ok(Scheme::Cut4),
            "cut6" => Ok(Scheme::Cut6),
            "cut8" => Ok(Scheme::Cut8),
            "lhs" => Ok(Scheme::Lhs),
            "monte_carlo" => Ok(Scheme::MonteCarlo),
            other => Err(PointsError::UnknownScheme(other.to_string())),
        }
    }
}

/// Axis-aligned box of perturbations `(δx, δλ0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PointsError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(PointsError::Invalid("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(PointsError::Invalid("box needs lower < upper componentwise".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Result<Self, PointsError> {
        Self::new(half_widths.iter().map(|h| -h).collect(), half_widths.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u + l)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l && v <= u)
    }
}

/// Points in scaled `[-1, 1]^n` coordinates with quadrature-style weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub scheme: Scheme,
    /// One row per point.
    pub points: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn weight_sum(&self) -> f64 {
        neumaier_sum(self.weights.iter().copied())
    }

    /// True when the set is closed under negation, checked exactly.
    pub fn is_symmetric(&self) -> bool {
        let key = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| (x + 0.0).to_bits()).collect() };
        let mut set: HashMap<Vec<u64>, usize> = HashMap::new();
        for i in 0..self.len() {
            *set.entry(key(&self.point(i))).or_default() += 1;
        }
        (0..self.len()).all(|i| {
            let neg: Vec<f64> = self.point(i).iter().map(|x| -x).collect();
            set.get(&key(&neg)).copied().unwrap_or(0) == set[&key(&self.point(i))]
        })
    }

    pub fn within_unit_box(&self) -> bool {
        self.points.iter().all(|v| v.abs() <= 1.0)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# points scheme={} n={} dim={}", self.scheme, self.len(), self.dim())?;
        for i in 0..self.len() {
            let mut row = format!("{:e}", self.weights[i]);
            for v in self.points.row(i).iter() {
                row.push_str(&format!(" {v:e}"));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, PointsError> {
        let fmt = |line: usize, msg: &str| PointsError::Format {
            line,
            msg: msg.to_string(),
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| fmt(1, "empty file"))??;
        let body = header
            .strip_prefix("# points ")
            .ok_or_else(|| fmt(1, "expected `# points` header"))?;
        let mut scheme = None;
        let mut n = None;
        let mut dim = None;
        for kv in body.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| fmt(1, "bad header field"))?;
            match k {
                "scheme" => scheme = Some(v.parse::<Scheme>()?),
                "n" => n = v.parse::<usize>().ok(),
                "dim" => dim = v.parse::<usize>().ok(),
                _ => return Err(fmt(1, &format!("unknown header field `{k}`"))),
            }
        }
        let (Some(scheme), Some(n), Some(dim)) = (scheme, n, dim) else {
            return Err(fmt(1, "header needs scheme, n and dim"));
        };
        let mut points = DMatrix::zeros(n, dim);
        let mut weights = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let v = v.map_err(|e| fmt(i + 2, &e.to_string()))?;
            if v.len() != dim + 1 || weights.len() >= n {
                return Err(fmt(i + 2, "unexpected row"));
            }
            let r = weights.len();
            weights.push(v[0]);
            for (j, x) in v[1..].iter().enumerate() {
                points[(r, j)] = *x;
            }
        }
        if weights.len() != n {
            return Err(fmt(0, "row count does not match header"));
        }
        Ok(Self {
            scheme,
            points,
            weights,
        })
    }
}

fn neumaier_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Exact moment `∫ ζ^α dζ / 2^n` of the uniform measure on `[-1, 1]^n`.
pub fn uniform_moment(alpha: &[u8]) -> f64 {
    alpha
        .iter()
        .map(|&a| if a % 2 == 1 { 0.0 } else { 1.0 / (a as f64 + 1.0) })
        .product()
}

/// Largest absolute deviation of the weighted monomial sums from the
/// uniform moments, over every multi-index of total degree `1..=order`.
pub fn moment_error(ps: &PointSet, order: u32) -> f64 {
    let e = moment_error_split(ps, order);
    e.odd.max(e.even)
}

/// Moment deviations split by the parity of the total degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentError {
    pub odd: f64,
    pub even: f64,
}

pub fn moment_error_split(ps: &PointSet, order: u32) -> MomentError {
    let n = ps.dim();
    let dict = build_dictionary(n, order).expect("moment dictionary");
    let idx = dict.indices();
    let lookup: HashMap<&[u8], usize> = idx.iter().enumerate().map(|(j, a)| (a.0.as_slice(), j)).collect();
    // each monomial is its parent's times one coordinate
    let mut parent = vec![(0usize, 0usize); idx.len()];
    for (j, a) in idx.iter().enumerate().skip(1) {
        let k = a.0.iter().position(|&e| e > 0).unwrap();
        let mut p = a.0.clone();
        p[k] -= 1;
        parent[j] = (lookup[p.as_slice()], k);
    }
    let m = idx.len();
    let mut sum = vec![0.0f64; m];
    let mut comp = vec![0.0f64; m];
    let mut mono = vec![0.0f64; m];
    for i in 0..ps.len() {
        let w = ps.weights[i];
        mono[0] = 1.0;
        for j in 1..m {
            let (p, k) = parent[j];
            mono[j] = mono[p] * ps.points[(i, k)];
        }
        for j in 1..m {
            let x = w * mono[j];
            let t = sum[j] + x;
            if sum[j].abs() >= x.abs() {
                comp[j] += (sum[j] - t) + x;
            } else {
                comp[j] += (x - t) + sum[j];
            }
            sum[j] = t;
        }
    }
    let mut out = MomentError { odd: 0.0, even: 0.0 };
    for j in 1..m {
        let e = (sum[j] + comp[j] - uniform_moment(&idx[j].0)).abs();
        if idx[j].degree() % 2 == 1 {
            out.odd = out.odd.max(e);
        } else {
            out.even = out.even.max(e);
        }
    }
    out
}

/// A generator for one fully symmetric orbit: sorted nonzero magnitudes.
#[derive(Debug, Clone, PartialEq)]
struct Orbit {
    values: Vec<f64>,
}

impl Orbit {
    /// Number of distinct points in the orbit of an `n`-vector.
    fn count(&self, n: usize) -> usize {
        let k = self.values.len();
        if k == 0 {
            return 1;
        }
        // distinct values with multiplicities among the k nonzeros
        let mut mult: Vec<usize> = Vec::new();
        let mut last = f64::NAN;
        for &v in &self.values {
            if v == last {
                *mult.last_mut().unwrap() += 1;
            } else {
                mult.push(1);
                last = v;
            }
        }
        let mut c = binomial(n as u64, k as u64) as usize;
        let mut rem = k;
        for m in mult {
            c *= binomial(rem as u64, m as u64) as usize;
            rem -= m;
        }
        c << k
    }

    /// Orbit average of `∏ x_i^{p_j}` for an even pattern `p` (sorted, descending).
    fn moment(&self, n: usize, pattern: &[u32]) -> f64 {
        let mut g = vec![0.0; n];
        g[..self.values.len()].copy_from_slice(&self.values);
        let k = pattern.len();
        if k == 0 {
            return 1.0;
        }
        // average over ordered tuples of distinct coordinates
        let mut total = 0.0;
        let mut count = 0usize;
        let mut used = vec![false; n];
        fn rec(
            depth: usize,
            acc: f64,
            g: &[f64],
            pattern: &[u32],
            used: &mut [bool],
            total: &mut f64,
            count: &mut usize,
        ) {
            if depth == pattern.len() {
                *total += acc;
                *count += 1;
                return;
            }
            for i in 0..g.len() {
                if used[i] {
                    continue;
                }
                used[i] = true;
                rec(depth + 1, acc * g[i].powi(pattern[depth] as i32), g, pattern, used, total, count);
                used[i] = false;
            }
        }
        rec(0, 1.0, &g, pattern, &mut used, &mut total, &mut count);
        total / count as f64
    }

    /// All points of the orbit, in a deterministic order.
    fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let mut g = vec![0.0; n];
        g[..self.values.len()].copy_from_slice(&self.values);
        g.sort_by(|a, b| b.total_cmp(a));
        let mut perms = Vec::new();
        // distinct permutations in lexicographic (descending) order
        let mut cur = g.clone();
        loop {
            perms.push(cur.clone());
            if !prev_permutation(&mut cur) {
                break;
            }
        }
        let mut out = Vec::new();
        for p in perms {
            let nz: Vec<usize> = (0..n).filter(|&i| p[i] != 0.0).collect();
            for mask in 0..(1u64 << nz.len()) {
                let mut q = p.clone();
                for (b, &i) in nz.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        q[i] = -q[i];
                    }
                }
                out.push(q);
            }
        }
        out
    }
}

/// Steps a descending-sorted sequence to the previous permutation in lex
/// order; returns false after the last one.
fn prev_permutation(v: &mut [f64]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] <= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] >= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Even exponent patterns (descending parts) with total degree ≤ `order`,
/// at most `n` parts.
fn even_patterns(order: u32, n: usize) -> Vec<Vec<u32>> {
    fn rec(left: u32, max_part: u32, cur: &mut Vec<u32>, n: usize, out: &mut Vec<Vec<u32>>) {
        out.push(cur.clone());
        if cur.len() == n {
            return;
        }
        let mut p = max_part.min(left);
        if p % 2 == 1 {
            p -= 1;
        }
        while p >= 2 {
            cur.push(p);
            rec(left - p, p, cur, n, out);
            cur.pop();
            p -= 2;
        }
    }
    let mut out = Vec::new();
    rec(order, order, &mut Vec::new(), n, &mut out);
    out
}

/// Candidate orbit families: principal axes, conjugate axes with `k`
/// equal nonzeros, and two-level generators with `k1` entries `c` and `k2`
/// entries `d` (the scaled conjugate axes are `k1 = 1, k2 = n - 1`).
fn candidate_orbits(n: usize, radii: &[f64]) -> Vec<Orbit> {
    let mut out = vec![Orbit { values: vec![] }];
    for k in 1..=n {
        for &r in radii {
            out.push(Orbit { values: vec![r; k] });
        }
    }
    for k1 in 1..n {
        for k2 in 1..=(n - k1) {
            for &c in radii {
                for &d in radii {
                    if c > d {
                        let mut values = vec![c; k1];
                        values.extend(std::iter::repeat_n(d, k2));
                        out.push(Orbit { values });
                    }
                }
            }
        }
    }
    out
}

const RADIUS_GRID: usize = 20;

fn cut_points(dim: usize, scheme: Scheme, cap: usize) -> Result<PointSet, PointsError> {
    let order = scheme.order().unwrap();
    let radii: Vec<f64> = (1..=RADIUS_GRID).map(|j| j as f64 / RADIUS_GRID as f64).collect();
    let orbits = candidate_orbits(dim, &radii);
    let patterns = even_patterns(order, dim);
    let rows = patterns.len();
    let cols = orbits.len();
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for (r, p) in patterns.iter().enumerate() {
        b[r] = p.iter().map(|&e| 1.0 / (e as f64 + 1.0)).product();
        for (c, o) in orbits.iter().enumerate() {
            a[(r, c)] = o.moment(dim, p);
        }
    }
    let counts: Vec<usize> = orbits.iter().map(|o| o.count(dim)).collect();
    let cost = DVector::from_iterator(cols, counts.iter().map(|&c| c as f64));
    let sol = simplex::solve(&a, &b, &cost).map_err(|e| PointsError::Infeasible {
        scheme,
        reason: e.to_string(),
    })?;
    let active: Vec<usize> = sol.basis.iter().copied().filter(|&j| sol.x[j] > 0.0).collect();
    // polish the active weights with a least-squares solve of the moment system
    let sub = DMatrix::from_fn(rows, active.len(), |r, c| a[(r, active[c])]);
    let polished = sub
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| PointsError::Infeasible {
            scheme,
            reason: e.to_string(),
        })?;
    if polished.iter().any(|&w| !(w > 0.0)) {
        return Err(PointsError::Infeasible {
            scheme,
            reason: "polished weights lost positivity".into(),
        });
    }
    let total: usize = active.iter().map(|&j| counts[j]).sum();
    if total > cap {
        return Err(PointsError::TooMany { scheme, n: total, cap });
    }
    let mut rows_out = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for (c, &j) in active.iter().enumerate() {
        let pts = orbits[j].points(dim);
        debug_assert_eq!(pts.len(), counts[j]);
        let w = polished[c] / pts.len() as f64;
        for p in pts {
            rows_out.push(p);
            weights.push(w);
        }
    }
    let points = DMatrix::from_fn(total, dim, |i, j| rows_out[i][j]);
    Ok(PointSet {
        scheme,
        points,
        weights,
    })
}

fn paired_random(dim: usize, n: usize, seed: u64, lhs: bool) -> PointSet {
    let half = n.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = DMatrix::zeros(half, dim);
    if lhs {
        for j in 0..dim {
            let mut perm: Vec<usize> = (0..half).collect();
            for i in (1..half).rev() {
                let k = rng.random_range(0..=i);
                perm.swap(i, k);
            }
            for i in 0..half {
                let u: f64 = rng.random();
                base[(i, j)] = -1.0 + 2.0 * (perm[i] as f64 + u) / half as f64;
            }
        }
    } else {
        for i in 0..half {
            for j in 0..dim {
                base[(i, j)] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    let total = 2 * half;
    let points = DMatrix::from_fn(total, dim, |i, j| if i < half { base[(i, j)] } else { -base[(i - half, j)] });
    PointSet {
        scheme: if lhs { Scheme::Lhs } else { Scheme::MonteCarlo },
        points,
        weights: vec![1.0 / total as f64; total],
    }
}

/// Point request parameters shared by the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRequest {
    pub dim: usize,
    pub scheme: Scheme,
    /// Target count for random schemes (rounded up to even).
    pub target_n: Option<usize>,
    pub seed: u64,
    /// Reject deterministic sets larger than this.
    pub max_points: usize,
}

impl PointRequest {
    pub fn new(dim: usize, scheme: Scheme) -> Self {
        Self {
            dim,
            scheme,
            target_n: None,
            seed: 0,
            max_points: 1 << 22,
        }
    }
}

pub fn generate_points(req: &PointRequest) -> Result<PointSet, PointsError> {
    if req.dim == 0 {
        return Err(PointsError::Invalid("dimension must be positive".into()));
    }
    match req.scheme {
        Scheme::Cut4 | Scheme::Cut6 | Scheme::Cut8 => cut_points(req.dim, req.scheme, req.max_points),
        Scheme::Lhs | Scheme::MonteCarlo => {
            let n = req
                .target_n
                .ok_or_else(|| PointsError::Invalid(format!("{} needs a target point count", req.scheme)))?;
            if n < 2 {
                return Err(PointsError::Invalid("at least two points are needed".into()));
            }
            Ok(paired_random(req.dim, n, req.seed, req.scheme == Scheme::Lhs))
        }
    }
}

/// Tries each scheme in turn; returns the first set produced together with
/// the reasons earlier schemes were skipped.
pub fn generate_with_fallback(
    ladder: &[Scheme],
    base: &PointRequest,
) -> Result<(PointSet, Vec<(Scheme, String)>), PointsError> {
    let mut skipped = Vec::new();
    for &scheme in ladder {
        let req = PointRequest {
            scheme,
            ..base.clone()
        };
        match generate_points(&req) {
            Ok(ps) => return Ok((ps, skipped)),
            Err(e) => skipped.push((scheme, e.to_string())),
        }
    }
    let msg = skipped.iter().map(|(s, e)| format!("{s}: {e}")).collect::<Vec<_>>().join("; ");
    Err(PointsError::LadderExhausted(msg))
}

/// Maps scaled coordinates to physical perturbations, one row per point.
pub fn scale_to_domain(ps: &PointSet, b: &DomainBox) -> Vec<Vec<f64>> {
    let c = b.center();
    let h = b.half_widths();
    (0..ps.len())
        .map(|i| (0..ps.dim()).map(|j| c[j] + h[j] * ps.points[(i, j)]).collect())
        .collect()
}

pub fn unscale_from_domain(x: &[f64], b: &DomainBox) -> Vec<f64> {
    let c = b.center();
    let h = b.half_widths();
    x.iter().enumerate().map(|(j, v)| (v - c[j]) / h[j]).collect()
}

/// Uniform draws inside the box that coincide with none of `exclude`.
pub fn test_points(b: &DomainBox, n: usize, seed: u64, exclude: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p: Vec<f64> = (0..b.dim()).map(|j| rng.random_range(b.lower[j]..=b.upper[j])).collect();
        if !exclude.iter().any(|q| q == &p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_basic(ps: &PointSet) {
        assert!((ps.weight_sum() - 1.0).abs() < 1e-14, "{}", ps.weight_sum() - 1.0);
        assert!(ps.is_symmetric());
        assert!(ps.within_unit_box());
    }

    #[test]
    fn orbit_counts() {
        let n = 8;
        assert_eq!(Orbit { values: vec![] }.count(n), 1);
        assert_eq!(Orbit { values: vec![0.5] }.count(n), 16);
        assert_eq!(Orbit { values: vec![0.5; 2] }.count(n), 112);
        assert_eq!(Orbit { values: vec![0.5; 8] }.count(n), 256);
        let mut v = vec![0.9];
        v.extend([0.3; 7]);
        assert_eq!(Orbit { values: v.clone() }.count(n), 8 * 256);
        assert_eq!(Orbit { values: v }.points(n).len(), 8 * 256);
        assert_eq!(Orbit { values: vec![0.5; 3] }.points(n).len(), 56 * 8);
    }

    #[test]
    fn pattern_counts() {
        assert_eq!(even_patterns(4, 8).len(), 4);
        assert_eq!(even_patterns(6, 8).len(), 7);
        assert_eq!(even_patterns(8, 8).len(), 12);
    }

    #[test]
    fn orbit_moment_matches_enumeration() {
        let o = Orbit { values: vec![0.8, 0.4, 0.4] };
        let pts = o.points(4);
        for pat in [vec![2u32], vec![4], vec![2, 2], vec![4, 2], vec![2, 2, 2]] {
            let mut alpha = vec![0u8; 4];
            for (i, &p) in pat.iter().enumerate() {
                alpha[i] = p as u8;
            }
            let direct: f64 = pts
                .iter()
                .map(|p| p.iter().zip(&alpha).map(|(x, &a)| x.powi(a as i32)).product::<f64>())
                .sum::<f64>()
                / pts.len() as f64;
            assert!((direct - o.moment(4, &pat)).abs() < 1e-14);
        }
    }

    #[test]
    fn cut4_matches_fourth_moments() {
        let ps = generate_points(&PointRequest::new(8, Scheme::Cut4)).unwrap();
        check_basic(&ps);
        assert!(moment_error(&ps, 4) < 1e-10);
        assert!(moment_error_split(&ps, 7).odd < 1e-14);
    }

    #[test]
    fn cut6_matches_sixth_moments() {
        let ps = generate_points(&PointRequest::new(8, Scheme::Cut6)).unwrap();
        check_basic(&ps);
        assert!(moment_error(&ps, 6) < 1e-10);
    }

    #[test]
    fn low_dimensional_cut8() {
        let ps = generate_points(&PointRequest::new(3, Scheme::Cut8)).unwrap();
        check_basic(&ps);
        assert!(moment_error(&ps, 8) < 1e-10);
    }

    #[test]
    fn monte_carlo_second_moments() {
        let req = PointRequest {
            target_n: Some(10_000),
            seed: 42,
            ..PointRequest::new(8, Scheme::MonteCarlo)
        };
        let ps = generate_points(&req).unwrap();
        check_basic(&ps);
        assert!(moment_error(&ps, 1) < 1e-14);
        assert!(moment_error(&ps, 2) < 0.05);
    }

    #[test]
    fn random_schemes_are_seeded() {
        let req = PointRequest {
            target_n: Some(301),
            seed: 9,
            ..PointRequest::new(8, Scheme::Lhs)
        };
        let a = generate_points(&req).unwrap();
        let b = generate_points(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 302);
        check_basic(&a);
        let c = generate_points(&PointRequest { seed: 10, ..req }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_schemes_need_a_count() {
        assert!(generate_points(&PointRequest::new(8, Scheme::Lhs)).is_err());
    }

    #[test]
    fn fallback_ladder_records_skips() {
        let base = PointRequest {
            target_n: Some(100),
            max_points: 50,
            ..PointRequest::new(8, Scheme::Cut6)
        };
        let (ps, skipped) = generate_with_fallback(&[Scheme::Cut6, Scheme::Lhs], &base).unwrap();
        assert_eq!(ps.scheme, Scheme::Lhs);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].0, Scheme::Cut6);
    }

    #[test]
    fn scaling_round_trip() {
        let b = DomainBox::new(vec![-1.0, 0.0, 2.0], vec![3.0, 1.0, 2.5]).unwrap();
        let ps = PointSet {
            scheme: Scheme::MonteCarlo,
            points: DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.3, -0.7, 0.9]),
            weights: vec![1.0 / 3.0; 3],
        };
        let x = scale_to_domain(&ps, &b);
        assert_eq!(x[0], b.upper);
        assert_eq!(x[1], b.center());
        let back = unscale_from_domain(&x[2], &b);
        for j in 0..3 {
            assert!((back[j] - ps.points[(2, j)]).abs() < 1e-15);
        }
        assert!(DomainBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn test_points_inside_and_disjoint() {
        let b = DomainBox::symmetric(&[1.0; 8]).unwrap();
        let train = vec![vec![0.0; 8]];
        let t = test_points(&b, 100, 1, &train);
        assert_eq!(t.len(), 100);
        assert!(t.iter().all(|p| b.contains(p) && p != &train[0]));
    }

    #[test]
    fn file_round_trip() {
        let ps = generate_points(&PointRequest::new(4, Scheme::Cut4)).unwrap();
        let mut buf = Vec::new();
        ps.write_to(&mut buf).unwrap();
        assert_eq!(PointSet::read_from(&buf[..]).unwrap(), ps);
    }

    proptest! {
        #[test]
        fn odd_moments_vanish(seed in 0u64..200, n in 2usize..40, lhs in proptest::bool::ANY) {
            let scheme = if lhs { Scheme::Lhs } else { Scheme::MonteCarlo };
            let req = PointRequest { target_n: Some(n), seed, ..PointRequest::new(4, scheme) };
            let ps = generate_points(&req).unwrap();
            prop_assert!(ps.is_symmetric());
            prop_assert!((ps.weight_sum() - 1.0).abs() < 1e-14);
            prop_assert!(moment_error_split(&ps, 5).odd < 1e-14);
        }
    }
}
