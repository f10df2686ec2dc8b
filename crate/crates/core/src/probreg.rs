//! Concentration statistics of a noise vector and the probability regularizer.
//!
//! A flat noise vector of length `n = m·k` is split into `m` consecutive
//! subvectors of length `k`. For a standard Gaussian vector their mean norm
//! `M1` and the spectral deviation `M2` of their second-moment matrix from
//! `I_k` concentrate, with tail bounds
//!
//! ```text
//! p1(M) = min{2·exp(−m·M²/(2k)), 1}
//! p2(M) = min{2·exp(−m·max{√(1+M) − 1 − √(k/m), 0}²/2), 1}
//! ```
//!
//! Low values of either bound, under any of a set of coordinate permutations,
//! flag a vector that a Gaussian draw would almost never produce.

use rand::seq::SliceRandom;

use crate::error::{check_dim, DnoError, Result};
use crate::rng::{self, Purpose};

/// Relative gap below which two leading eigenvalue magnitudes count as tied.
const EIGEN_TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Factorization {
    n: usize,
    k: usize,
    m: usize,
}

impl Factorization {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || n == 0 || !n.is_multiple_of(k) {
            return Err(DnoError::Config(format!("cannot split n = {n} into subvectors of length k = {k}")));
        }
        Ok(Self { n, k, m: n / k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Index permutations of `0..n`. Applying permutation `π` to `z` gives
/// `(Πz)_j = z[π[j]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationSet {
    n: usize,
    perms: Vec<Vec<usize>>,
    seed: Option<u64>,
}

impl PermutationSet {
    /// `q` uniform permutations. Permutation `i` depends only on `(seed, i)`,
    /// so a smaller `q` with the same seed yields a prefix of a larger set.
    pub fn random(n: usize, q: usize, seed: u64) -> Self {
        Self::draw(n, q, seed, Purpose::IndicatorPermutations, 0)
    }

    /// A fresh batch for optimizer step `step`.
    pub fn batch(n: usize, b: usize, seed: u64, step: u64) -> Self {
        Self::draw(n, b, seed, Purpose::PermutationBatch, step)
    }

    fn draw(n: usize, q: usize, seed: u64, purpose: Purpose, major: u64) -> Self {
        let perms = (0..q)
            .map(|i| {
                let mut rng = rng::stream(seed, purpose, major, i as u64);
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        Self { n, perms, seed: Some(seed) }
    }

    pub fn from_permutations(n: usize, perms: Vec<Vec<usize>>) -> Result<Self> {
        for (i, p) in perms.iter().enumerate() {
            check_dim(n, p.len())?;
            let mut seen = vec![false; n];
            for &j in p {
                if j >= n || std::mem::replace(&mut seen[j], true) {
                    return Err(DnoError::Config(format!("permutation {i} is not a bijection on 0..{n}")));
                }
            }
        }
        Ok(Self { n, perms, seed: None })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, perms: vec![(0..n).collect()], seed: None }
    }

    /// The first `q` permutations.
    pub fn prefix(&self, q: usize) -> Self {
        Self { n: self.n, perms: self.perms[..q.min(self.perms.len())].to_vec(), seed: self.seed }
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.perms.iter().map(Vec::as_slice)
    }
}

/// Subvector mean and second-moment deviation `(1/m)Σ y_i y_iᵀ − I` (row-major).
struct Moments {
    mean: Vec<f64>,
    dev: Vec<f64>,
}

fn moments(z: &[f64], fac: Factorization, perm: Option<&[usize]>) -> Moments {
    let k = fac.k;
    let mut mean = vec![0.0; k];
    let mut dev = vec![0.0; k * k];
    let mut y = vec![0.0; k];
    for i in 0..fac.m {
        for (c, yc) in y.iter_mut().enumerate() {
            let j = i * k + c;
            *yc = match perm {
                Some(p) => z[p[j]],
                None => z[j],
            };
        }
        for a in 0..k {
            mean[a] += y[a];
            for b in a..k {
                dev[a * k + b] += y[a] * y[b];
            }
        }
    }
    let inv_m = 1.0 / fac.m as f64;
    mean.iter_mut().for_each(|v| *v *= inv_m);
    for a in 0..k {
        for b in a..k {
            let v = dev[a * k + b] * inv_m - if a == b { 1.0 } else { 0.0 };
            dev[a * k + b] = v;
            dev[b * k + a] = v;
        }
    }
    Moments { mean, dev }
}

/// Eigenvalue of largest magnitude of a symmetric `k×k` matrix and a unit
/// eigenvector for it. Eigenvectors are sign-normalised (first non-zero entry
/// positive); among tied leading eigenvalues the lexicographically largest
/// eigenvector is chosen.
fn leading_eigen(mat: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut pairs = eigen_pairs(mat, k);
    for (_, v) in pairs.iter_mut() {
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-15) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    let top = pairs.iter().map(|(l, _)| l.abs()).fold(0.0, f64::max);
    let tol = EIGEN_TIE_TOL * top.max(1e-300);
    let mut tied: Vec<&(f64, Vec<f64>)> = pairs.iter().filter(|(l, _)| top - l.abs() <= tol).collect();
    if tied.len() > 1 && tied.iter().any(|(l, _)| l.abs() > 0.0) {
        log::debug!("spectral-norm subgradient at an eigenvalue tie (|λ| = {top:e})");
    }
    tied.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let (l, v) = tied[0];
    (*l, v.clone())
}

fn eigen_pairs(mat: &[f64], k: usize) -> Vec<(f64, Vec<f64>)> {
    match k {
        1 => vec![(mat[0], vec![1.0])],
        2 => {
            let (a, b, c) = (mat[0], mat[1], mat[3]);
            let mid = 0.5 * (a + c);
            let r = (0.5 * (a - c)).hypot(b);
            if r == 0.0 {
                return vec![(mid, vec![1.0, 0.0]), (mid, vec![0.0, 1.0])];
            }
            [mid + r, mid - r]
                .into_iter()
                .map(|l| {
                    // Two candidate null vectors of (S − λI); keep the better conditioned one.
                    let v1 = [b, l - a];
                    let v2 = [l - c, b];
                    let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) { v1 } else { v2 };
                    let nv = v[0].hypot(v[1]);
                    (l, vec![v[0] / nv, v[1] / nv])
                })
                .collect()
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(k, k, mat);
            let eig = nalgebra::SymmetricEigen::new(m);
            (0..k).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect())).collect()
        }
    }
}

/// `M1` and `M2` of one (optionally permuted) view of `z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Statistics {
    pub m1: f64,
    pub m2: f64,
}

pub fn statistics(z: &[f64], fac: Factorization, perm: Option<&[usize]>) -> Result<Statistics> {
    check_dim(fac.n, z.len())?;
    let mo = moments(z, fac, perm);
    Ok(Statistics { m1: crate::norm(&mo.mean), m2: leading_eigen(&mo.dev, fac.k).0.abs() })
}

/// Norm of the mean of the `m` subvectors.
pub fn m1_stat(z: &[f64], fac: Factorization) -> Result<f64> {
    Ok(statistics(z, fac, None)?.m1)
}

/// Spectral norm of `(1/m)Σ z_i z_iᵀ − I_k`.
pub fn m2_stat(z: &[f64], fac: Factorization) -> Result<f64> {
    Ok(statistics(z, fac, None)?.m2)
}

pub fn log_p1(m1: f64, fac: Factorization) -> f64 {
    (std::f64::consts::LN_2 - fac.m as f64 * m1 * m1 / (2.0 * fac.k as f64)).min(0.0)
}

fn p2_margin(m2: f64, fac: Factorization) -> f64 {
    ((1.0 + m2).sqrt() - 1.0 - (fac.k as f64 / fac.m as f64).sqrt()).max(0.0)
}

pub fn log_p2(m2: f64, fac: Factorization) -> f64 {
    let u = p2_margin(m2, fac);
    (std::f64::consts::LN_2 - fac.m as f64 * u * u / 2.0).min(0.0)
}

pub fn p1_bound(m1: f64, fac: Factorization) -> f64 {
    log_p1(m1, fac).exp()
}

pub fn p2_bound(m2: f64, fac: Factorization) -> f64 {
    log_p2(m2, fac).exp()
}

/// `log P(z)`: the smallest log-bound over all permutations and both statistics.
pub fn log_indicator(z: &[f64], fac: Factorization, perms: &PermutationSet) -> Result<f64> {
    check_dim(fac.n, z.len())?;
    check_dim(fac.n, perms.n)?;
    if perms.is_empty() {
        return Err(DnoError::Config("indicator needs at least one permutation".into()));
    }
    let mut worst: f64 = 0.0;
    for p in perms.iter() {
        let s = statistics(z, fac, Some(p))?;
        worst = worst.min(log_p1(s.m1, fac)).min(log_p2(s.m2, fac));
    }
    Ok(worst)
}

/// Permutation-ensemble typicality indicator `P(z)`.
pub fn indicator_p(z: &[f64], fac: Factorization, perms: &PermutationSet) -> Result<f64> {
    Ok(log_indicator(z, fac, perms)?.exp())
}

/// Mean over the batch of `log p1(M1(Πz)) + log p2(M2(Πz))`.
pub fn reg_value(z: &[f64], fac: Factorization, perms: &PermutationSet) -> Result<f64> {
    check_dim(fac.n, z.len())?;
    check_dim(fac.n, perms.n)?;
    if perms.is_empty() {
        return Err(DnoError::Config("regularizer needs at least one permutation".into()));
    }
    let mut total = 0.0;
    for p in perms.iter() {
        let s = statistics(z, fac, Some(p))?;
        total += log_p1(s.m1, fac) + log_p2(s.m2, fac);
    }
    Ok(total / perms.len() as f64)
}

/// `(log P(z), reg_value)` over one permutation set in a single pass.
pub fn log_indicator_and_reg(z: &[f64], fac: Factorization, perms: &PermutationSet) -> Result<(f64, f64)> {
    check_dim(fac.n, z.len())?;
    check_dim(fac.n, perms.n)?;
    if perms.is_empty() {
        return Err(DnoError::Config("indicator needs at least one permutation".into()));
    }
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for p in perms.iter() {
        let s = statistics(z, fac, Some(p))?;
        let (l1, l2) = (log_p1(s.m1, fac), log_p2(s.m2, fac));
        worst = worst.min(l1).min(l2);
        total += l1 + l2;
    }
    Ok((worst, total / perms.len() as f64))
}

/// Exact gradient of [`reg_value`] in `z` (zero wherever a bound is clamped).
pub fn reg_grad(z: &[f64], fac: Factorization, perms: &PermutationSet) -> Result<Vec<f64>> {
    check_dim(fac.n, z.len())?;
    check_dim(fac.n, perms.n)?;
    if perms.is_empty() {
        return Err(DnoError::Config("regularizer needs at least one permutation".into()));
    }
    let (k, m) = (fac.k, fac.m);
    let scale = 1.0 / perms.len() as f64;
    let mut grad = vec![0.0; fac.n];
    let mut y = vec![0.0; k];
    for p in perms.iter() {
        let mo = moments(z, fac, Some(p));
        let m1 = crate::norm(&mo.mean);
        let p1_active = std::f64::consts::LN_2 - m as f64 * m1 * m1 / (2.0 * k as f64) < 0.0;

        let (lambda, v) = leading_eigen(&mo.dev, k);
        let m2 = lambda.abs();
        let u = p2_margin(m2, fac);
        let p2_active = std::f64::consts::LN_2 - m as f64 * u * u / 2.0 < 0.0;
        // d log p2 / dM2 · dM2/dy_i = −u/√(1+M2) · sign(λ) · (vᵀy_i)·v
        let p2_coef = if p2_active { -u / (1.0 + m2).sqrt() * lambda.signum() } else { 0.0 };

        if !p1_active && !p2_active {
            continue;
        }
        for i in 0..m {
            for (c, yc) in y.iter_mut().enumerate() {
                *yc = z[p[i * k + c]];
            }
            let vy = crate::dot(&v, &y);
            for c in 0..k {
                let mut g = p2_coef * vy * v[c];
                if p1_active {
                    g -= mo.mean[c] / k as f64;
                }
                grad[p[i * k + c]] += scale * g;
            }
        }
    }
    Ok(grad)
}
