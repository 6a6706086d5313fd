//! Total-degree monomial dictionaries over `ζ = (δx, δλ0)` and the
//! time-indexed coefficient vectors that represent a generating function.
//!
//! Each variable is divided by a power-of-two half-width before the
//! monomials are formed, so scaling factors never introduce rounding.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("dictionary of {m} terms exceeds the cap of {cap}")]
    TooLarge { m: u128, cap: usize },
    #[error("invalid dictionary: {0}")]
    Invalid(String),
    #[error("identity coefficients need degree >= 2 and an even variable count (got n = {n_vars}, d = {degree})")]
    NoIdentity { n_vars: usize, degree: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed coefficient file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Default ceiling on the number of dictionary terms.
pub const DEFAULT_TERM_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<u8>);

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }
}

/// Ordered list of monomials with total degree ≤ `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDictionary {
    n_vars: usize,
    degree: u32,
    indices: Vec<MultiIndex>,
    scale: Vec<f64>,
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Smallest power of two not below `|v|` (1 for zero).
pub fn pow2_ceil(v: f64) -> f64 {
    let v = v.abs();
    if v == 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mut h = 2f64.powi(v.log2().ceil() as i32);
    while h < v {
        h *= 2.0;
    }
    while h / 2.0 >= v {
        h /= 2.0;
    }
    h
}

/// Graded ordering: by total degree, then descending lexicographic
/// exponents within a degree, so `(2, 2)` gives `1, z1, z2, z1², z1z2, z2²`.
fn enumerate(n: usize, degree: u32) -> Vec<MultiIndex> {
    fn fill(pos: usize, left: u32, cur: &mut Vec<u8>, out: &mut Vec<MultiIndex>) {
        let n = cur.len();
        if pos == n - 1 {
            cur[pos] = left as u8;
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e as u8;
            fill(pos + 1, left - e, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0u8; n];
    for d in 0..=degree {
        fill(0, d, &mut cur, &mut out);
    }
    out
}

pub fn build_dictionary(n_vars: usize, degree: u32) -> Result<BasisDictionary, BasisError> {
    build_dictionary_capped(n_vars, degree, DEFAULT_TERM_CAP)
}

pub fn build_dictionary_capped(n_vars: usize, degree: u32, cap: usize) -> Result<BasisDictionary, BasisError> {
    if n_vars == 0 {
        return Err(BasisError::Invalid("n_vars must be at least 1".into()));
    }
    if degree > u8::MAX as u32 {
        return Err(BasisError::Invalid("degree too large".into()));
    }
    let m = binomial(n_vars as u64 + degree as u64, degree as u64);
    if m > cap as u128 {
        return Err(BasisError::TooLarge { m, cap });
    }
    Ok(BasisDictionary {
        n_vars,
        degree,
        indices: enumerate(n_vars, degree),
        scale: vec![1.0; n_vars],
    })
}

impl BasisDictionary {
    /// Sets per-variable half-widths, each rounded up to a power of two.
    pub fn with_half_widths(mut self, half_widths: &[f64]) -> Result<Self, BasisError> {
        if half_widths.len() != self.n_vars {
            return Err(BasisError::Dimension {
                expected: self.n_vars,
                got: half_widths.len(),
            });
        }
        self.scale = half_widths.iter().map(|&h| pow2_ceil(h)).collect();
        Ok(self)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.indices.iter().position(|m| m.0 == alpha)
    }

    fn powers(&self, zeta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.degree as usize;
        zeta.iter()
            .zip(&self.scale)
            .map(|(&x, &h)| {
                let z = x / h;
                let mut p = Vec::with_capacity(d + 1);
                p.push(1.0);
                for k in 0..d {
                    p.push(p[k] * z);
                }
                p
            })
            .collect()
    }

    /// `Φ(ζ)` for one point.
    pub fn eval_basis(&self, zeta: &[f64]) -> DVector<f64> {
        assert_eq!(zeta.len(), self.n_vars);
        let pw = self.powers(zeta);
        DVector::from_iterator(
            self.len(),
            self.indices.iter().map(|a| {
                let mut v = 1.0;
                for (i, &e) in a.0.iter().enumerate() {
                    if e > 0 {
                        v *= pw[i][e as usize];
                    }
                }
                v
            }),
        )
    }

    /// `∂Φ_j/∂ζ_k` for `k` in the `width` variables starting at `offset`,
    /// as an `m × width` matrix.
    pub fn eval_grad_block(&self, zeta: &[f64], offset: usize, width: usize) -> DMatrix<f64> {
        assert_eq!(zeta.len(), self.n_vars);
        assert!(offset + width <= self.n_vars);
        let pw = self.powers(zeta);
        let mut g = DMatrix::zeros(self.len(), width);
        for (j, a) in self.indices.iter().enumerate() {
            for c in 0..width {
                let k = offset + c;
                let ek = a.0[k];
                if ek == 0 {
                    continue;
                }
                let mut v = ek as f64 / self.scale[k];
                for (i, &e) in a.0.iter().enumerate() {
                    let e = if i == k { e - 1 } else { e };
                    if e > 0 {
                        v *= pw[i][e as usize];
                    }
                }
                g[(j, c)] = v;
            }
        }
        g
    }

    /// Gradient with respect to one half of `ζ` (`Block::State` or `Block::Costate`).
    pub fn eval_grad(&self, zeta: &[f64], block: Block) -> DMatrix<f64> {
        let half = self.n_vars / 2;
        match block {
            Block::State => self.eval_grad_block(zeta, 0, half),
            Block::Costate => self.eval_grad_block(zeta, half, self.n_vars - half),
        }
    }

    /// `∂²Φ_j/∂δλ0²`, one square matrix per basis entry.
    pub fn eval_hessian_lam0(&self, zeta: &[f64]) -> Vec<DMatrix<f64>> {
        let half = self.n_vars / 2;
        let w = self.n_vars - half;
        let pw = self.powers(zeta);
        self.indices
            .iter()
            .map(|a| {
                let mut h = DMatrix::zeros(w, w);
                for r in 0..w {
                    for c in r..w {
                        let v = self.second_partial(a, &pw, half + r, half + c);
                        h[(r, c)] = v;
                        h[(c, r)] = v;
                    }
                }
                h
            })
            .collect()
    }

    fn second_partial(&self, a: &MultiIndex, pw: &[Vec<f64>], k: usize, l: usize) -> f64 {
        let mut e = a.0.clone();
        let mut f;
        if k == l {
            if e[k] < 2 {
                return 0.0;
            }
            f = (e[k] as f64) * ((e[k] - 1) as f64) / (self.scale[k] * self.scale[k]);
            e[k] -= 2;
        } else {
            if e[k] == 0 || e[l] == 0 {
                return 0.0;
            }
            f = (e[k] as f64) * (e[l] as f64) / (self.scale[k] * self.scale[l]);
            e[k] -= 1;
            e[l] -= 1;
        }
        for (i, &ei) in e.iter().enumerate() {
            if ei > 0 {
                f *= pw[i][ei as usize];
            }
        }
        f
    }

    /// `Φ(ζ)ᵀc`.
    pub fn value(&self, zeta: &[f64], c: &DVector<f64>) -> f64 {
        self.eval_basis(zeta).dot(c)
    }

    /// Full gradient `∂(Φᵀc)/∂ζ`, visiting only nonzero coefficients.
    pub fn grad_dot(&self, zeta: &[f64], c: &DVector<f64>) -> DVector<f64> {
        assert_eq!(c.len(), self.len());
        let pw = self.powers(zeta);
        let mut g = DVector::zeros(self.n_vars);
        for (a, &cj) in self.indices.iter().zip(c.iter()) {
            if cj == 0.0 {
                continue;
            }
            for k in 0..self.n_vars {
                let ek = a.0[k];
                if ek == 0 {
                    continue;
                }
                let mut v = cj * ek as f64 / self.scale[k];
                for (i, &e) in a.0.iter().enumerate() {
                    let e = if i == k { e - 1 } else { e };
                    if e > 0 {
                        v *= pw[i][e as usize];
                    }
                }
                g[k] += v;
            }
        }
        g
    }

    /// Full Hessian `∂²(Φᵀc)/∂ζ²`.
    pub fn hessian_dot(&self, zeta: &[f64], c: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(c.len(), self.len());
        let pw = self.powers(zeta);
        let n = self.n_vars;
        let mut h = DMatrix::zeros(n, n);
        for (a, &cj) in self.indices.iter().zip(c.iter()) {
            if cj == 0.0 || a.degree() < 2 {
                continue;
            }
            for k in 0..n {
                for l in k..n {
                    let v = cj * self.second_partial(a, &pw, k, l);
                    h[(k, l)] += v;
                    if k != l {
                        h[(l, k)] += v;
                    }
                }
            }
        }
        h
    }

    /// Coefficients of `Σ ζ_i ζ_{i+n/2}`, the identity canonical map.
    pub fn identity_coefficients(&self) -> Result<DVector<f64>, BasisError> {
        if self.degree < 2 || self.n_vars % 2 != 0 {
            return Err(BasisError::NoIdentity {
                n_vars: self.n_vars,
                degree: self.degree,
            });
        }
        let half = self.n_vars / 2;
        let mut c = DVector::zeros(self.len());
        for i in 0..half {
            let mut alpha = vec![0u8; self.n_vars];
            alpha[i] = 1;
            alpha[i + half] = 1;
            let j = self.index_of(&alpha).expect("bilinear term present for degree >= 2");
            c[j] = self.scale[i] * self.scale[i + half];
        }
        Ok(c)
    }

    /// Total degree of every basis entry, in dictionary order.
    pub fn degrees(&self) -> Vec<u32> {
        self.indices.iter().map(MultiIndex::degree).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    State,
    Costate,
}

/// Coefficient vectors `c_k` at increasing times `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTimeline {
    pub dict: BasisDictionary,
    pub times: Vec<f64>,
    pub coeffs: Vec<DVector<f64>>,
    /// Set when the march stopped early; the stored prefix is still valid.
    pub failure: Option<String>,
}

impl CoefficientTimeline {
    pub fn new(dict: BasisDictionary, t0: f64, c0: DVector<f64>) -> Self {
        Self {
            dict,
            times: vec![t0],
            coeffs: vec![c0],
            failure: None,
        }
    }

    pub fn push(&mut self, t: f64, c: DVector<f64>) {
        debug_assert!(t > *self.times.last().unwrap());
        self.times.push(t);
        self.coeffs.push(c);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> (f64, &DVector<f64>) {
        (*self.times.last().unwrap(), self.coeffs.last().unwrap())
    }

    /// Coefficients at `t`, exact at stored times and linear in between.
    pub fn coefficients_at(&self, t: f64) -> Option<DVector<f64>> {
        let n = self.times.len();
        if !(t >= self.times[0] && t <= self.times[n - 1]) {
            return None;
        }
        let k = self.times.partition_point(|&ti| ti <= t);
        let i = k.saturating_sub(1);
        if self.times[i] == t || i + 1 >= n {
            return Some(self.coeffs[i].clone());
        }
        let s = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        Some(&self.coeffs[i] * (1.0 - s) + &self.coeffs[i + 1] * s)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = &self.dict;
        writeln!(out, "# coefficients n_vars={} degree={} m={} steps={}", d.n_vars, d.degree, d.len(), self.len())?;
        writeln!(out, "# scale {}", join(&d.scale))?;
        writeln!(out, "# times {}", join(&self.times))?;
        match &self.failure {
            None => writeln!(out, "# status complete")?,
            Some(msg) => writeln!(out, "# status failed {}", msg.replace('\n', " "))?,
        }
        writeln!(out, "k j value")?;
        for (k, c) in self.coeffs.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                if v != 0.0 {
                    writeln!(out, "{k} {j} {v:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, BasisError> {
        let fmt = |line: usize, msg: &str| BasisError::Format {
            line,
            msg: msg.to_string(),
        };
        let mut lines = input.lines().enumerate();
        let mut header = |tag: &str| -> Result<(usize, String), BasisError> {
            match lines.next() {
                Some((i, Ok(l))) => {
                    let body = l
                        .strip_prefix(tag)
                        .ok_or_else(|| fmt(i + 1, &format!("expected `{tag}`")))?;
                    Ok((i + 1, body.trim().to_string()))
                }
                Some((_, Err(e))) => Err(e.into()),
                None => Err(fmt(0, &format!("missing `{tag}`"))),
            }
        };
        let (ln, h) = header("# coefficients")?;
        let mut n_vars = None;
        let mut degree = None;
        let mut m = None;
        let mut steps = None;
        for kv in h.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| fmt(ln, "bad header field"))?;
            let v: usize = v.parse().map_err(|_| fmt(ln, "bad integer"))?;
            match k {
                "n_vars" => n_vars = Some(v),
                "degree" => degree = Some(v as u32),
                "m" => m = Some(v),
                "steps" => steps = Some(v),
                _ => return Err(fmt(ln, &format!("unknown header field `{k}`"))),
            }
        }
        let (Some(n_vars), Some(degree), Some(m), Some(steps)) = (n_vars, degree, m, steps) else {
            return Err(fmt(ln, "header needs n_vars, degree, m and steps"));
        };
        let (ln, s) = header("# scale")?;
        let scale = parse_list(&s).map_err(|e| fmt(ln, &e))?;
        let (ln, t) = header("# times")?;
        let times = parse_list(&t).map_err(|e| fmt(ln, &e))?;
        let (ln, st) = header("# status")?;
        let failure = if st == "complete" {
            None
        } else if let Some(msg) = st.strip_prefix("failed") {
            Some(msg.trim().to_string())
        } else {
            return Err(fmt(ln, "status must be `complete` or `failed`"));
        };
        header("k j value")?;

        let mut dict = build_dictionary(n_vars, degree)?;
        if dict.len() != m || scale.len() != n_vars || times.len() != steps {
            return Err(fmt(ln, "header sizes are inconsistent"));
        }
        dict.scale = scale;
        let mut coeffs = vec![DVector::zeros(m); steps];
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(k), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(fmt(i + 1, "expected `k j value`"));
            };
            let k: usize = k.parse().map_err(|_| fmt(i + 1, "bad step index"))?;
            let j: usize = j.parse().map_err(|_| fmt(i + 1, "bad basis index"))?;
            let v: f64 = v.parse().map_err(|_| fmt(i + 1, "bad value"))?;
            if k >= steps || j >= m {
                return Err(fmt(i + 1, "index out of range"));
            }
            coeffs[k][j] = v;
        }
        Ok(Self {
            dict,
            times,
            coeffs,
            failure,
        })
    }
}

fn join(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:e}").unwrap();
    }
    s
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t}: {e}")))
        .collect()
}
