//! Truncated-Fock Lindbladian, its dissipative gap and steady state.
//!
//! Vectorization is column stacking: `ρ_{mn}` sits at index `m + N n`, and
//! `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.

use crate::meanfield::fixed_points_general;
use crate::model::{ModelError, SystemParams};
use faer::{c64, Mat, Side};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Largest Fock truncation accepted by default.
pub const DEFAULT_MAX_FOCK: usize = 250;
/// Largest truncation for which the dense path is chosen automatically.
pub const AUTO_DENSE_MAX: usize = 20;
/// Largest truncation accepted by the dense path.
pub const DENSE_MAX: usize = 45;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LindbladError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("truncation N = {n} outside [8, {max}]")]
    Dimension { n: usize, max: usize },
    #[error("dense eigensolver limited to N <= {DENSE_MAX}, got {0}")]
    DenseTooLarge(usize),
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("shift-invert Arnoldi did not converge (residual {residual:e})")]
    IterativeNoConvergence { residual: f64 },
    #[error("{0} eigenvalues are numerically zero; steady state is not unique")]
    DegenerateZeroModes(usize),
    #[error("banded factorization hit an exactly zero pivot")]
    SingularShift,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    fn from_triplets(n: usize, entries: BTreeMap<(usize, usize), C64>) -> Self {
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (&(r, c), &v) in &entries {
            if v == ZERO {
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut entries = BTreeMap::new();
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                entries.insert((c, r), v.conj());
            }
        }
        Self::from_triplets(self.n, entries)
    }

    /// `(kl, ku)`: lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                if r > c {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }
}

/// Vectorized Lindbladian on a truncated Fock space.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub n_fock: usize,
    pub matrix: SparseMatrix,
    pub params_hash: String,
    rate_scale: f64,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.n_fock * self.n_fock
    }

    pub fn apply(&self, rho: &[C64]) -> Vec<C64> {
        self.matrix.matvec(rho)
    }

    /// `max_j |Σ_m L[mm, j]|`, zero for a trace-preserving generator.
    pub fn trace_residual(&self) -> f64 {
        let n = self.n_fock;
        let mut acc = vec![ZERO; self.dim()];
        for m in 0..n {
            for (c, v) in self.matrix.row(m + n * m) {
                acc[c] += v;
            }
        }
        acc.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Dense `N×N` single-mode operator.
#[derive(Clone)]
struct Op {
    n: usize,
    m: Vec<C64>,
}

impl Op {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            m: vec![ZERO; n * n],
        }
    }

    fn identity(n: usize) -> Self {
        let mut o = Self::zeros(n);
        for i in 0..n {
            o.m[i * n + i] = C64::new(1.0, 0.0);
        }
        o
    }

    fn destroy(n: usize) -> Self {
        let mut o = Self::zeros(n);
        for k in 1..n {
            o.m[(k - 1) * n + k] = C64::new((k as f64).sqrt(), 0.0);
        }
        o
    }

    fn get(&self, r: usize, c: usize) -> C64 {
        self.m[r * self.n + c]
    }

    fn dagger(&self) -> Self {
        let mut o = Self::zeros(self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                o.m[c * self.n + r] = self.get(r, c).conj();
            }
        }
        o
    }

    fn mul(&self, other: &Op) -> Self {
        let n = self.n;
        let mut o = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a == ZERO {
                    continue;
                }
                for c in 0..n {
                    o.m[r * n + c] += a * other.get(k, c);
                }
            }
        }
        o
    }

    fn scale(&self, s: C64) -> Self {
        Self {
            n: self.n,
            m: self.m.iter().map(|v| v * s).collect(),
        }
    }

    fn add(&self, other: &Op) -> Self {
        Self {
            n: self.n,
            m: self.m.iter().zip(&other.m).map(|(a, b)| a + b).collect(),
        }
    }

    fn nonzeros(&self) -> Vec<(usize, usize, C64)> {
        let mut v = Vec::new();
        for r in 0..self.n {
            for c in 0..self.n {
                let x = self.get(r, c);
                if x != ZERO {
                    v.push((r, c, x));
                }
            }
        }
        v
    }
}

/// Adds `s · (Bᵀ ⊗ A)` to the triplet map.
fn add_sandwich(acc: &mut BTreeMap<(usize, usize), C64>, s: C64, a: &Op, b: &Op) {
    let n = a.n;
    let an = a.nonzeros();
    let bn = b.nonzeros();
    for &(i, k, av) in &an {
        for &(l, j, bv) in &bn {
            *acc.entry((i + n * j, k + n * l)).or_insert(ZERO) += s * av * bv;
        }
    }
}

fn add_dissipator(acc: &mut BTreeMap<(usize, usize), C64>, rate: f64, c: &Op, id: &Op) {
    if rate == 0.0 {
        return;
    }
    let cd = c.dagger();
    let cdc = cd.mul(c);
    let g = C64::new(rate, 0.0);
    add_sandwich(acc, g, c, &cd);
    add_sandwich(acc, -g / 2.0, &cdc, id);
    add_sandwich(acc, -g / 2.0, id, &cdc);
}

pub fn build_lindbladian(params: &SystemParams, n_fock: usize) -> Result<Superoperator, LindbladError> {
    build_lindbladian_capped(params, n_fock, DEFAULT_MAX_FOCK)
}

pub fn build_lindbladian_capped(
    params: &SystemParams,
    n_fock: usize,
    max_fock: usize,
) -> Result<Superoperator, LindbladError> {
    params.validate()?;
    if n_fock < 8 || n_fock > max_fock {
        return Err(LindbladError::Dimension {
            n: n_fock,
            max: max_fock,
        });
    }
    if params.kerr != 0.0 || params.kappa2 != 0.0 {
        if let Ok(set) = fixed_points_general(params) {
            let n_max = set.points.iter().map(|p| p.z.norm_sqr()).fold(0.0, f64::max);
            if n_max >= n_fock as f64 / 2.0 {
                log::warn!("mean-field |alpha|^2 = {n_max:.2} is not below N/2 = {}", n_fock / 2);
            }
        }
    }
    let n = n_fock;
    let id = Op::identity(n);
    let a = Op::destroy(n);
    let ad = a.dagger();
    let num = ad.mul(&a);
    let ad2 = ad.mul(&ad);
    let a2 = a.mul(&a);
    let ad2a = ad2.mul(&a);
    let ad2a2 = ad2.mul(&a2);

    let drive = ad
        .scale(params.lambda1)
        .add(&ad2.scale(params.lambda2))
        .add(&ad2a.scale(params.lambda3));
    let h = num
        .scale(C64::new(params.delta, 0.0))
        .add(&ad2a2.scale(C64::new(-params.kerr / 2.0, 0.0)))
        .add(&drive)
        .add(&drive.dagger());

    let mut acc = BTreeMap::new();
    add_sandwich(&mut acc, -I, &h, &id);
    add_sandwich(&mut acc, I, &id, &h);
    add_dissipator(&mut acc, params.kappa1, &a, &id);
    let two_photon = match params.alpha0_sq {
        Some(a0) => a2.add(&id.scale(-a0)),
        None => a2.clone(),
    };
    add_dissipator(&mut acc, params.kappa2, &two_photon, &id);
    add_dissipator(&mut acc, params.kappa_phi, &num, &id);

    Ok(Superoperator {
        n_fock,
        matrix: SparseMatrix::from_triplets(n * n, acc),
        params_hash: params.provenance_hash(Some(n_fock)),
        rate_scale: params.rate_scale(),
    })
}

/// Banded LU factorization with partial pivoting (LAPACK `gbtrf` layout).
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<C64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    /// Factorizes `A − shift·I`.  Exactly zero pivots are replaced by
    /// `ε‖A‖` when `perturb_zero_pivots` is set (used for null vectors).
    pub fn factor(a: &SparseMatrix, shift: C64, perturb_zero_pivots: bool) -> Result<Self, LindbladError> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let kv = kl + ku;
        let ld = 2 * kl + ku + 1;
        let mut ab = vec![ZERO; ld * n];
        for r in 0..n {
            for (c, v) in a.row(r) {
                ab[kv + r - c + c * ld] += v;
            }
            ab[kv + r * ld] -= shift;
        }
        let tiny = f64::EPSILON * a.frobenius_norm().max(1.0);
        let mut ipiv = vec![0; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld;
            let mut jp = 0;
            let mut best = -1.0;
            for i in 0..=km {
                let v = ab[col + kv + i].norm();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                if !perturb_zero_pivots {
                    return Err(LindbladError::SingularShift);
                }
                ab[col + kv] = C64::new(tiny, 0.0);
                jp = 0;
                ipiv[j] = j;
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ld + kv;
                    ab.swap(base + j - c + jp, base + j - c);
                }
            }
            let piv = ab[col + kv];
            let inv = C64::new(1.0, 0.0) / piv;
            for i in 1..=km {
                ab[col + kv + i] *= inv;
            }
            for c in (j + 1)..=ju {
                let cbase = c * ld + kv;
                let ujc = ab[cbase + j - c];
                if ujc == ZERO {
                    continue;
                }
                for i in 1..=km {
                    let l = ab[col + kv + i];
                    ab[cbase + j + i - c] -= l * ujc;
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            ld,
            ab,
            ipiv,
        })
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        let kv = self.kl + self.ku;
        let ld = self.ld;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != ZERO {
                for i in 1..=km {
                    b[j + i] -= self.ab[j * ld + kv + i] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[j * ld + kv];
            let bj = b[j];
            if bj == ZERO {
                continue;
            }
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= self.ab[j * ld + kv + i - j] * bj;
            }
        }
    }
}

fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn trace(x: &[C64], n: usize) -> C64 {
    (0..n).map(|m| x[m + n * m]).sum()
}

fn remove_trace(x: &mut [C64], n: usize) {
    let t = trace(x, n) / n as f64;
    for m in 0..n {
        x[m + n * m] -= t;
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Hermitized, trace-normalized null vector of `L` by inverse iteration.
fn steady_state_vec(op: &Superoperator) -> Result<(Vec<C64>, f64), LindbladError> {
    let n = op.n_fock;
    let lu = BandLu::factor(&op.matrix, ZERO, true)?;
    let mut x = vec![ZERO; op.dim()];
    for m in 0..n {
        x[m + n * m] = C64::new(1.0 / n as f64, 0.0);
    }
    for _ in 0..4 {
        lu.solve_in_place(&mut x);
        let s = vec_norm(&x);
        x.iter_mut().for_each(|v| *v /= s);
    }
    let mut herm = vec![ZERO; op.dim()];
    for r in 0..n {
        for c in 0..n {
            herm[r + n * c] = 0.5 * (x[r + n * c] + x[c + n * r].conj());
        }
    }
    let t = trace(&herm, n);
    herm.iter_mut().for_each(|v| *v /= t);
    let res = vec_norm(&op.apply(&herm));
    Ok((herm, res))
}

pub fn steady_state(op: &Superoperator) -> Result<Mat<c64>, LindbladError> {
    let (x, _) = steady_state_vec(op)?;
    Ok(unvec(&x, op.n_fock))
}

fn unvec(x: &[C64], n: usize) -> Mat<c64> {
    Mat::from_fn(n, n, |r, c| x[r + n * c])
}

/// Options for the shift-invert Arnoldi path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    /// Real shift; defaults to `1e-3` times the largest dissipative rate.
    pub sigma: Option<f64>,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Relative Ritz residual in the shift-inverted space.
    pub tol: f64,
    pub seed: u64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            sigma: None,
            krylov_dim: 30,
            max_restarts: 30,
            tol: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapMethod {
    Dense,
    Iterative(IterativeOptions),
    /// Dense up to `AUTO_DENSE_MAX`, iterative beyond.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodUsed {
    Dense,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// `−Re λ` of the slowest nonzero eigenvalue.
    pub gap: f64,
    pub gap_imag: f64,
    pub steady_state: Mat<c64>,
    pub n_zero_modes: usize,
    pub method: MethodUsed,
    /// `‖L vec(ρ_ss)‖`.
    pub steady_residual: f64,
    /// Relative residual of the gap eigenpair (iterative) or 0 (dense).
    pub eig_residual: f64,
}

fn dense_gap(op: &Superoperator) -> Result<(C64, usize), LindbladError> {
    if op.n_fock > DENSE_MAX {
        return Err(LindbladError::DenseTooLarge(op.n_fock));
    }
    let ev = op
        .matrix
        .to_dense()
        .eigenvalues()
        .map_err(|e| LindbladError::Eigensolver(format!("{e:?}")))?;
    let mut ev: Vec<C64> = ev.into_iter().collect();
    ev.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let zero_tol = 1e-13 * op.matrix.frobenius_norm();
    let n_zero = ev.iter().filter(|l| l.norm() <= zero_tol).count().max(1);
    if n_zero > 1 {
        return Err(LindbladError::DegenerateZeroModes(n_zero));
    }
    let slowest = ev[1..]
        .iter()
        .copied()
        .min_by(|a, b| (-a.re).total_cmp(&(-b.re)))
        .ok_or(LindbladError::Eigensolver("spectrum has a single eigenvalue".into()))?;
    Ok((slowest, n_zero))
}

/// All eigenvalues by dense diagonalization.
pub fn dense_spectrum(op: &Superoperator) -> Result<Vec<C64>, LindbladError> {
    if op.n_fock > DENSE_MAX {
        return Err(LindbladError::DenseTooLarge(op.n_fock));
    }
    let ev = op
        .matrix
        .to_dense()
        .eigenvalues()
        .map_err(|e| LindbladError::Eigensolver(format!("{e:?}")))?;
    Ok(ev)
}

fn arnoldi_gap(op: &Superoperator, opts: IterativeOptions) -> Result<(C64, f64), LindbladError> {
    let n = op.n_fock;
    let dim = op.dim();
    let sigma = opts.sigma.unwrap_or(1e-3 * op.rate_scale);
    let lu = BandLu::factor(&op.matrix, C64::new(sigma, 0.0), false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    remove_trace(&mut v0, n);
    let m = opts.krylov_dim.min(dim - 2).max(2);
    let mut best_res = f64::INFINITY;
    for _ in 0..=opts.max_restarts {
        let s = vec_norm(&v0);
        v0.iter_mut().for_each(|v| *v /= s);
        let mut basis: Vec<Vec<C64>> = vec![v0.clone()];
        let mut h = vec![vec![ZERO; m]; m + 1];
        let mut k = m;
        for j in 0..m {
            let mut w = basis[j].clone();
            lu.solve_in_place(&mut w);
            remove_trace(&mut w, n);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(v, &w);
                    h[i][j] += c;
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nw = vec_norm(&w);
            h[j + 1][j] = C64::new(nw, 0.0);
            if nw <= 1e-14 * h[j][j].norm().max(1.0) {
                k = j + 1;
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            basis.push(w);
        }
        let hk = Mat::<c64>::from_fn(k, k, |r, c| h[r][c]);
        let eig = hk
            .eigen()
            .map_err(|e| LindbladError::Eigensolver(format!("{e:?}")))?;
        let s_diag = eig.S().column_vector();
        let u = eig.U();
        let beta = if k < m || k == h.len() - 1 && basis.len() <= k {
            h[k][k - 1].norm()
        } else {
            h[k][k - 1].norm()
        };
        let mut ritz: Vec<(C64, f64, usize)> = (0..k)
            .map(|i| {
                let theta = s_diag[i];
                let ycol: Vec<C64> = (0..k).map(|r| u[(r, i)]).collect();
                let yn = vec_norm(&ycol);
                let res = beta * ycol[k - 1].norm() / yn / theta.norm();
                (theta, res, i)
            })
            .collect();
        ritz.sort_by(|a, b| b.0.norm().total_cmp(&a.0.norm()));
        let target = ritz[0];
        best_res = best_res.min(target.1);
        if target.1 <= opts.tol {
            let lambda = ritz
                .iter()
                .filter(|r| r.1 <= opts.tol)
                .map(|r| C64::new(sigma, 0.0) + C64::new(1.0, 0.0) / r.0)
                .min_by(|a, b| (-a.re).total_cmp(&(-b.re)))
                .unwrap_or(C64::new(sigma, 0.0) + C64::new(1.0, 0.0) / target.0);
            return Ok((lambda, target.1));
        }
        let mut next = vec![ZERO; dim];
        for r in ritz.iter().take(3) {
            for (row, v) in basis.iter().take(k).enumerate() {
                let coef = u[(row, r.2)];
                next.iter_mut().zip(v).for_each(|(x, y)| *x += coef * y);
            }
        }
        remove_trace(&mut next, n);
        v0 = next;
    }
    Err(LindbladError::IterativeNoConvergence { residual: best_res })
}

pub fn dissipative_gap(op: &Superoperator, method: GapMethod) -> Result<SpectralSummary, LindbladError> {
    let (lambda, n_zero, used, eig_residual) = match method {
        GapMethod::Dense => {
            let (l, z) = dense_gap(op)?;
            (l, z, MethodUsed::Dense, 0.0)
        }
        GapMethod::Auto if op.n_fock <= AUTO_DENSE_MAX => {
            let (l, z) = dense_gap(op)?;
            (l, z, MethodUsed::Dense, 0.0)
        }
        GapMethod::Auto => {
            let (l, r) = arnoldi_gap(op, IterativeOptions::default())?;
            (l, 1, MethodUsed::Iterative, r)
        }
        GapMethod::Iterative(opts) => {
            let (l, r) = arnoldi_gap(op, opts)?;
            (l, 1, MethodUsed::Iterative, r)
        }
    };
    let (ss, steady_residual) = steady_state_vec(op)?;
    Ok(SpectralSummary {
        gap: -lambda.re,
        gap_imag: lambda.im,
        steady_state: unvec(&ss, op.n_fock),
        n_zero_modes: n_zero,
        method: used,
        steady_residual,
        eig_residual,
    })
}

/// Eigenvalues of the Hermitian part of `ρ`, ascending.
pub fn density_eigenvalues(rho: &Mat<c64>) -> Result<Vec<f64>, LindbladError> {
    let n = rho.nrows();
    let h = Mat::<c64>::from_fn(n, n, |r, c| 0.5 * (rho[(r, c)] + rho[(c, r)].conj()));
    h.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| LindbladError::Eigensolver(format!("{e:?}")))
}

/// Normally ordered moment `⟨a†^p a^q⟩` of a density matrix.
pub fn moment(rho: &Mat<c64>, p: usize, q: usize) -> C64 {
    // ⟨a†^p a^q⟩ = Σ_n ρ_{n+q−p... } written as tr(ρ a†^p a^q)
    let n = rho.nrows();
    let mut total = ZERO;
    for k in q..n {
        // a^q |k⟩ = sqrt(k!/(k−q)!) |k−q⟩, then a†^p gives |k−q+p⟩
        let j = k - q;
        let out = j + p;
        if out >= n {
            continue;
        }
        let mut amp = 1.0;
        for t in 0..q {
            amp *= ((k - t) as f64).sqrt();
        }
        for t in 1..=p {
            amp *= ((j + t) as f64).sqrt();
        }
        // tr(ρ O) = Σ_k ⟨k|ρ O|k⟩ = Σ_k ρ_{k,out} O_{out,k}
        total += rho[(k, out)] * amp;
    }
    total
}

/// `⟨a⟩`, `⟨a²⟩`, `⟨a†a⟩` of the steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub a: C64,
    pub a2: C64,
    pub n: f64,
}

pub fn steady_state_moments(summary: &SpectralSummary) -> Moments {
    let rho = &summary.steady_state;
    Moments {
        a: moment(rho, 0, 1),
        a2: moment(rho, 0, 2),
        n: moment(rho, 1, 1).re,
    }
}

/// Diagonal of `ρ` in the Fock basis.
pub fn photon_distribution(rho: &Mat<c64>) -> Vec<f64> {
    (0..rho.nrows()).map(|k| rho[(k, k)].re).collect()
}

/// Fraction of the photon distribution at `n ≥ threshold`.
pub fn population_above(rho: &Mat<c64>, threshold: f64) -> f64 {
    photon_distribution(rho)
        .iter()
        .enumerate()
        .filter(|(k, _)| *k as f64 >= threshold)
        .map(|(_, p)| *p)
        .sum()
}

/// Truncated, renormalized coherent state `|α⟩⟨α|`, vectorized.
pub fn coherent_state_vec(alpha: C64, n: usize) -> Vec<C64> {
    let mut amp = vec![ZERO; n];
    amp[0] = C64::new(1.0, 0.0);
    for k in 1..n {
        amp[k] = amp[k - 1] * alpha / (k as f64).sqrt();
    }
    let norm2: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
    let mut rho = vec![ZERO; n * n];
    for c in 0..n {
        for r in 0..n {
            rho[r + n * c] = amp[r] * amp[c].conj() / norm2;
        }
    }
    rho
}

/// Metastable weights `[p₁, p₂]` of the wells around `wells[0]` and
/// `wells[1]`.  The left eigenvector `w` of the slowest mode is constant on
/// each basin up to `O(gap)` corrections, so `w(ρ_ss) = p₁w₁ + p₂w₂` with
/// `wᵢ` evaluated on a coherent state in well `i`.
pub fn metastable_populations(
    op: &Superoperator,
    summary: &SpectralSummary,
    wells: [C64; 2],
) -> Result<[f64; 2], LindbladError> {
    let n = op.n_fock;
    let lambda = C64::new(-summary.gap, summary.gap_imag);
    let shift = lambda.conj() * (1.0 + 1e-8) + C64::new(1e-300, 0.0);
    let lu = BandLu::factor(&op.matrix.adjoint(), shift, false)?;
    let probes = wells.map(|z| coherent_state_vec(z, n));
    let mut w: Vec<C64> = probes[0].iter().zip(&probes[1]).map(|(a, b)| a - b).collect();
    for _ in 0..4 {
        lu.solve_in_place(&mut w);
        let s = vec_norm(&w);
        if !s.is_finite() || s == 0.0 {
            return Err(LindbladError::SingularShift);
        }
        w.iter_mut().for_each(|v| *v /= s);
    }
    let [c1, c2] = probes.map(|rho| dot(&w, &rho));
    // The near-singular solve may mix in the identity (left null vector);
    // `w(ρ_ss) = p₁w₁ + p₂w₂` cancels that admixture exactly.
    let rho_ss: Vec<C64> = (0..n * n).map(|k| summary.steady_state[(k % n, k / n)]).collect();
    let css = dot(&w, &rho_ss);
    let d = c1 - c2;
    Ok([((css - c2) / d).re.clamp(0.0, 1.0), ((c1 - css) / d).re.clamp(0.0, 1.0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationEntry {
    pub n_fock: usize,
    pub gap: f64,
    /// Relative change from the previous entry.
    pub rel_change: Option<f64>,
    /// Population of the highest Fock level.
    pub top_population: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub entries: Vec<TruncationEntry>,
    /// First `N` whose gap changed by less than `TRUNCATION_TOL` from the
    /// previous entry.
    pub converged_at: Option<usize>,
    /// Set when successive changes alternate in sign above tolerance.
    pub oscillating: bool,
}

pub const TRUNCATION_TOL: f64 = 1e-4;

pub fn truncation_scan(
    params: &SystemParams,
    n_list: &[usize],
    method: GapMethod,
) -> Result<TruncationReport, LindbladError> {
    let mut entries: Vec<TruncationEntry> = Vec::new();
    let mut converged_at = None;
    for &n in n_list {
        let op = build_lindbladian(params, n)?;
        let s = dissipative_gap(&op, method)?;
        let rel = entries.last().map(|e| (s.gap - e.gap).abs() / e.gap.abs().max(f64::MIN_POSITIVE));
        let top = s.steady_state[(n - 1, n - 1)].re;
        if converged_at.is_none() && rel.is_some_and(|r| r < TRUNCATION_TOL) {
            converged_at = Some(n);
        }
        entries.push(TruncationEntry {
            n_fock: n,
            gap: s.gap,
            rel_change: rel,
            top_population: top,
        });
    }
    let diffs: Vec<f64> = entries.windows(2).map(|w| w[1].gap - w[0].gap).collect();
    let oscillating = diffs.windows(2).any(|d| {
        d[0] * d[1] < 0.0
            && d.iter().zip(&entries[1..]).all(|(x, e)| x.abs() > TRUNCATION_TOL * e.gap.abs())
    });
    Ok(TruncationReport {
        entries,
        converged_at,
        oscillating,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dephased_cat, dissipative_cat, Imperfection};

    fn damped(delta: f64, kappa1: f64) -> SystemParams {
        SystemParams {
            delta,
            kappa1,
            unit: "kappa1".into(),
            ..Default::default()
        }
    }

    #[test]
    fn damped_oscillator_spectrum() {
        let op = build_lindbladian(&damped(0.7, 0.3), 8).unwrap();
        let mut ev = dense_spectrum(&op).unwrap();
        let mut want: Vec<C64> = Vec::new();
        for m in 0..8 {
            for k in 0..8 {
                want.push(C64::new(-0.3 * (m + k) as f64 / 2.0, 0.7 * (m as f64 - k as f64)));
            }
        }
        let key = |z: &C64| (((z.re * 1e6).round() as i64), ((z.im * 1e6).round() as i64));
        ev.sort_by_key(key);
        want.sort_by_key(key);
        for (a, b) in ev.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
        let s = dissipative_gap(&op, GapMethod::Dense).unwrap();
        assert!((s.gap - 0.15).abs() < 1e-10);
    }

    #[test]
    fn trace_preservation_and_hermiticity() {
        let p = dissipative_cat(2.0, Imperfection::Lambda3(C64::new(0.1, 0.05)));
        let op = build_lindbladian(&p, 30).unwrap();
        assert!(op.trace_residual() < 1e-10 * op.matrix.frobenius_norm());
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rho = vec![ZERO; n * n];
        for r in 0..n {
            for c in 0..=r {
                let v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                rho[r + n * c] = if r == c { C64::new(v.re, 0.0) } else { v };
                rho[c + n * r] = rho[r + n * c].conj();
            }
        }
        let out = op.apply(&rho);
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                worst = worst.max((out[r + n * c] - out[c + n * r].conj()).norm());
            }
        }
        assert!(worst < 1e-10);
    }

    #[test]
    fn alpha0_form_matches_lambda2_form() {
        let p = dephased_cat(3.0, 0.2, 0.01);
        let a = build_lindbladian(&p, 12).unwrap().matrix.to_dense();
        let b = build_lindbladian(&p.to_lambda2_form(), 12).unwrap().matrix.to_dense();
        let mut worst: f64 = 0.0;
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                worst = worst.max((a[(r, c)] - b[(r, c)]).norm());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn band_lu_solves() {
        let p = dissipative_cat(1.5, Imperfection::Detuning(0.3));
        let op = build_lindbladian(&p, 10).unwrap();
        let lu = BandLu::factor(&op.matrix, C64::new(0.5, 0.1), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<C64> = (0..op.dim())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut b = op.apply(&x);
        b.iter_mut().zip(&x).for_each(|(bi, xi)| *bi -= C64::new(0.5, 0.1) * xi);
        lu.solve_in_place(&mut b);
        let err = b.iter().zip(&x).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn dense_and_iterative_agree() {
        let p = SystemParams {
            delta: 0.2,
            kerr: 0.1,
            kappa1: 0.05,
            kappa2: 1.0,
            lambda1: C64::new(0.05, 0.02),
            lambda2: C64::new(0.1, 1.3),
            lambda3: C64::new(0.04, -0.03),
            ..Default::default()
        };
        let op = build_lindbladian(&p, 20).unwrap();
        let d = dissipative_gap(&op, GapMethod::Dense).unwrap();
        let it = dissipative_gap(&op, GapMethod::Iterative(IterativeOptions::default())).unwrap();
        assert!((d.gap - it.gap).abs() < 1e-8 * d.gap, "{} vs {}", d.gap, it.gap);
    }

    #[test]
    fn steady_state_properties() {
        let p = dissipative_cat(2.0, Imperfection::None);
        let op = build_lindbladian(&p, 30).unwrap();
        let s = dissipative_gap(&op, GapMethod::Auto).unwrap();
        let norm = op.matrix.frobenius_norm();
        assert!(s.steady_residual < 1e-8 * norm);
        let ev = density_eigenvalues(&s.steady_state).unwrap();
        assert!(ev[0] > -1e-8);
        let m = steady_state_moments(&s);
        assert!(m.a.norm() < 1e-6);
        assert!((m.a2.re - 4.0).abs() < 0.08, "{}", m.a2);
        assert!(m.n >= m.a.norm_sqr());
        // independent dense diagonalization at N = 40 gives 4.9324e-8
        assert!((s.gap - 4.9324e-8).abs() < 2e-3 * 4.9324e-8, "{}", s.gap);
    }

    #[test]
    fn vacuum_moments() {
        let op = build_lindbladian(&damped(0.0, 1.0), 8).unwrap();
        let s = dissipative_gap(&op, GapMethod::Dense).unwrap();
        let m = steady_state_moments(&s);
        assert!(m.a.norm() < 1e-12 && m.a2.norm() < 1e-12 && m.n.abs() < 1e-12);
        assert!((s.gap - 0.5).abs() < 1e-10);
    }

    #[test]
    fn metastable_weights() {
        let p = dissipative_cat(1.5, Imperfection::None);
        let op = build_lindbladian(&p, 20).unwrap();
        let s = dissipative_gap(&op, GapMethod::Dense).unwrap();
        let a = C64::new(1.5, 0.0);
        let [p1, p2] = metastable_populations(&op, &s, [a, -a]).unwrap();
        assert!((p1 - 0.5).abs() < 1e-8 && (p2 - 0.5).abs() < 1e-8);

        let rho = coherent_state_vec(C64::new(0.4, -0.3), 12);
        let tr: C64 = (0..12).map(|m| rho[m + 12 * m]).sum();
        assert!((tr - 1.0).norm() < 1e-14);
    }

    #[test]
    fn truncation_scan_flags() {
        let p = dissipative_cat(2.0, Imperfection::None);
        let r = truncation_scan(&p, &[20, 25, 30, 36, 42], GapMethod::Auto).unwrap();
        assert!(r.entries[1].rel_change.unwrap() > 0.5);
        assert!(matches!(r.converged_at, Some(36) | Some(42)), "{r:?}");
        let over = dissipative_cat(3.2, Imperfection::None);
        let r = truncation_scan(&over, &[10, 11, 12], GapMethod::Dense).unwrap();
        assert_eq!(r.converged_at, None);
    }

    #[test]
    fn dimension_guard() {
        assert!(matches!(
            build_lindbladian(&damped(0.0, 1.0), 4),
            Err(LindbladError::Dimension { .. })
        ));
        assert!(matches!(
            build_lindbladian_capped(&damped(0.0, 1.0), 40, 30),
            Err(LindbladError::Dimension { .. })
        ));
    }
}
