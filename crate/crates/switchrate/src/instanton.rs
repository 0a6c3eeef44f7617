//! Saddle-point equations of motion: integration, fixed-point Jacobians and
//! repulsive-plane shooting for instanton paths.
//!
//! Integration runs in `(b, b̄, b̃_q, b̃̄_q)` with `b̃_q = i b_q`; on the slice
//! `b̄ = b*`, `b̄_q = −b_q*` the two tilde pairs are complex conjugate.

use crate::keldysh::{drift_diffusion, hamilton_xp, lindbladian_density, PhaseSpaceState};
use crate::meanfield::{fixed_points_general, MeanFieldError};
use crate::model::{ModelError, SystemParams};
use faer::{c64, Mat};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use thiserror::Error;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
/// Closest approach below which a shot counts as reaching the target.
pub const ACCEPT_RADIUS: f64 = 1e-2;
/// `𝓛`-drift budget per unit rate scale.
pub const DRIFT_BUDGET: f64 = 1e-6;
const FIXED_POINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstantonError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error("tolerance {0:e} outside [1e-12, 1e-6]")]
    InvalidTolerance(f64),
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64, last: PhaseSpaceState },
    #[error("density drift {drift:e} exceeds the abort threshold at t = {t}")]
    DriftExceeded { t: f64, drift: f64 },
    #[error("not a fixed point (|rhs| = {0:e})")]
    NotFixedPoint(f64),
    #[error("expected a 2-dimensional repulsive plane, found {0} directions")]
    RepulsivePlane(usize),
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("no shot came within {ACCEPT_RADIUS} of the target (best {best:e} at theta = {theta})")]
    NoCandidate { best: f64, theta: f64 },
    #[error("no unstable fixed point to aim at")]
    NoTarget,
}

/// `(ḃ, ḃ̄, ḃ_q, ḃ̄_q)` from Hamilton's equations of `𝓛`.
pub fn eom_rhs(params: &SystemParams, s: &PhaseSpaceState) -> PhaseSpaceState {
    let (xdot, pdot) = hamilton_xp(&params.coeffs(), s);
    PhaseSpaceState {
        b: xdot[0],
        b_bar: xdot[1],
        b_q: -pdot[1],
        b_q_bar: pdot[0],
    }
}

/// Explicit right-hand side for `κ_φ D[a†a] + κ₂ D[a² − α₀²]` alone.
pub fn eom_rhs_dephased_cat(
    kappa2: f64,
    alpha0_sq: C64,
    kappa_phi: f64,
    s: &PhaseSpaceState,
) -> PhaseSpaceState {
    let PhaseSpaceState {
        b,
        b_bar: bb,
        b_q: q,
        b_q_bar: qb,
    } = *s;
    let a0 = alpha0_sq;
    let a0c = alpha0_sq.conj();
    let k2 = kappa2;
    let kp = kappa_phi;
    PhaseSpaceState {
        b: k2 * (qb + bb) * (a0 - b * b) + kp * b * (-qb * b - q * bb - 0.5),
        b_bar: k2 * (b - q) * (a0c - bb * bb) + kp * bb * (qb * b + bb * q - 0.5),
        b_q: k2 * (qb * (a0 - b * b) + 2.0 * bb * b * q - bb * q * q)
            + kp * (-qb * b * q - bb * q * q + q / 2.0),
        b_q_bar: k2 * (qb * qb * b + 2.0 * qb * bb * b + (a0c - bb * bb) * q)
            + kp * (qb * qb * b + qb * bb * q + qb / 2.0),
    }
}

fn rhs_tilde(params: &SystemParams, u: &[C64; 4]) -> [C64; 4] {
    let d = eom_rhs(params, &PhaseSpaceState::from_tilde(*u));
    [d.b, d.b_bar, I * d.b_q, I * d.b_q_bar]
}

/// `dS/dt = −b̄_q ḃ + b_q ḃ̄`.
fn action_rate(s: &PhaseSpaceState, d: &PhaseSpaceState) -> C64 {
    -s.b_q_bar * d.b + s.b_q * d.b_bar
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    TimeLimit,
    Escaped,
    StepSizeUnderflow,
    DriftExceeded,
}

/// Accepted steps of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseSpaceState>,
    derivs: Vec<PhaseSpaceState>,
    /// Running action at each step.
    pub actions: Vec<f64>,
    /// Running `|𝓛(t) − 𝓛(0)|` at each step.
    pub drifts: Vec<f64>,
    /// Action at the end, or at the closest approach for shot paths.
    pub accumulated_action: f64,
    /// Imaginary part of the same, zero on the physical slice.
    pub action_imag: f64,
    action_imags: Vec<f64>,
    pub max_density_drift: f64,
    /// Distance to the target in the eight-real embedding (infinite if none).
    pub closest_approach: f64,
    pub closest_index: usize,
    pub max_slice_residual: f64,
    pub termination: Termination,
}

impl Trajectory {
    /// Cubic Hermite interpolation between accepted steps.
    pub fn sample(&self, t: f64) -> PhaseSpaceState {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let k = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let y0 = self.states[k].to_tilde();
        let y1 = self.states[k + 1].to_tilde();
        let f0 = tilde_deriv(&self.derivs[k]);
        let f1 = tilde_deriv(&self.derivs[k + 1]);
        let mut out = [ZERO; 4];
        for i in 0..4 {
            out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
        }
        PhaseSpaceState::from_tilde(out)
    }

    /// Dense output on a uniform grid of spacing `dt`.
    pub fn resample(&self, dt: f64) -> Vec<(f64, PhaseSpaceState)> {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap_or(&t0);
        let n = ((t1 - t0) / dt).floor() as usize;
        (0..=n).map(|k| t0 + k as f64 * dt).map(|t| (t, self.sample(t))).collect()
    }

    /// Keeps steps `0..=k`, recomputing the summary fields.
    fn truncate(&mut self, k: usize) {
        self.times.truncate(k + 1);
        self.states.truncate(k + 1);
        self.derivs.truncate(k + 1);
        self.actions.truncate(k + 1);
        self.drifts.truncate(k + 1);
        self.action_imags.truncate(k + 1);
        self.accumulated_action = self.actions[k];
        self.action_imag = self.action_imags[k];
        self.max_density_drift = self.drifts.iter().copied().fold(0.0, f64::max);
        self.max_slice_residual = self.states.iter().map(|s| s.slice_residual()).fold(0.0, f64::max);
    }
}

fn tilde_deriv(d: &PhaseSpaceState) -> [C64; 4] {
    [d.b, d.b_bar, I * d.b_q, I * d.b_q_bar]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: f64,
    pub t_max: f64,
    pub escape_radius: f64,
    pub target: Option<PhaseSpaceState>,
}

impl IntegrateOptions {
    /// Stops at `10(1 + α)` with `α` the largest fixed-point amplitude, and
    /// at `t = 50` in units of the largest rate.
    pub fn for_params(params: &SystemParams, tol: f64) -> Self {
        Self {
            tol,
            t_max: 50.0 / params.rate_scale(),
            escape_radius: 10.0 * (1.0 + amplitude_scale(params)),
            target: None,
        }
    }
}

fn amplitude_scale(params: &SystemParams) -> f64 {
    if let Some(a) = params.alpha0_sq {
        return a.norm().sqrt();
    }
    fixed_points_general(params)
        .map(|s| s.points.iter().map(|p| p.z.norm()).fold(0.0, f64::max))
        .unwrap_or(1.0)
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type Y = [C64; 5];

fn full_rhs(params: &SystemParams, y: &Y) -> Y {
    let u = [y[0], y[1], y[2], y[3]];
    let s = PhaseSpaceState::from_tilde(u);
    let d = eom_rhs(params, &s);
    let f = tilde_deriv(&d);
    [f[0], f[1], f[2], f[3], action_rate(&s, &d)]
}

fn axpy(y: &Y, h: f64, terms: &[(f64, &Y)]) -> Y {
    let mut out = *y;
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        for i in 0..5 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates with default stop criteria over `t_span`.
pub fn integrate(
    params: &SystemParams,
    initial: PhaseSpaceState,
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory, InstantonError> {
    let mut opts = IntegrateOptions::for_params(params, tol);
    opts.t_max = t_span.1 - t_span.0;
    let (mut traj, err) = integrate_inner(params, initial, t_span.0, &opts)?;
    if let Some(e) = err {
        return Err(e);
    }
    traj.accumulated_action = *traj.actions.last().unwrap_or(&0.0);
    Ok(traj)
}

pub fn integrate_with(
    params: &SystemParams,
    initial: PhaseSpaceState,
    opts: &IntegrateOptions,
) -> Result<Trajectory, InstantonError> {
    let (traj, err) = integrate_inner(params, initial, 0.0, opts)?;
    match err {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Returns the trajectory up to the stopping point together with the error
/// that stopped it, if any.
fn integrate_inner(
    params: &SystemParams,
    initial: PhaseSpaceState,
    t0: f64,
    opts: &IntegrateOptions,
) -> Result<(Trajectory, Option<InstantonError>), InstantonError> {
    params.validate()?;
    if !(1e-12..=1e-6).contains(&opts.tol) {
        return Err(InstantonError::InvalidTolerance(opts.tol));
    }
    let budget = DRIFT_BUDGET * params.rate_scale();
    let tol = opts.tol;
    let t_end = t0 + opts.t_max;
    let u0 = initial.to_tilde();
    let mut y: Y = [u0[0], u0[1], u0[2], u0[3], ZERO];
    let mut t = t0;
    let l0 = lindbladian_density(params, &initial);
    let dist = |s: &PhaseSpaceState| opts.target.map_or(f64::INFINITY, |g| s.distance(&g));

    let d0 = eom_rhs(params, &initial);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![initial],
        derivs: vec![d0],
        actions: vec![0.0],
        drifts: vec![0.0],
        accumulated_action: 0.0,
        action_imag: 0.0,
        action_imags: vec![0.0],
        max_density_drift: 0.0,
        closest_approach: dist(&initial),
        closest_index: 0,
        max_slice_residual: initial.slice_residual(),
        termination: Termination::TimeLimit,
    };

    let mut k1 = full_rhs(params, &y);
    let scale0 = (0..4).map(|i| y[i].norm()).fold(0.0, f64::max).max(1.0);
    let f0 = (0..4).map(|i| k1[i].norm()).fold(0.0, f64::max);
    let mut h = if f0 > 0.0 { (0.01 * scale0 / f0).min(opts.t_max) } else { 1e-3 * opts.t_max };
    let h_min = 1e-14 * opts.t_max.max(1.0);
    let mut failure = None;

    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let mut ks: [Y; 7] = [[ZERO; 5]; 7];
        ks[0] = k1;
        for s in 1..7 {
            let terms: Vec<(f64, &Y)> = (0..s).map(|j| (A[s][j], &ks[j])).collect();
            let ys = axpy(&y, h, &terms);
            ks[s] = full_rhs(params, &ys);
        }
        let terms: Vec<(f64, &Y)> = (0..6).map(|j| (A[6][j], &ks[j])).collect();
        let y_new = axpy(&y, h, &terms);
        let mut err = 0.0;
        for i in 0..4 {
            let mut e = ZERO;
            for j in 0..7 {
                e += E[j] * ks[j][i];
            }
            let sc = tol * (1.0 + y[i].norm().max(y_new[i].norm()));
            err += (h * e.norm() / sc).powi(2);
        }
        let err = (err / 4.0).sqrt();
        let finite = y_new.iter().all(|v| v.is_finite());
        if finite && err <= 1.0 {
            t += h;
            y = y_new;
            k1 = ks[6];
            let s = PhaseSpaceState::from_tilde([y[0], y[1], y[2], y[3]]);
            let drift = (lindbladian_density(params, &s) - l0).norm();
            traj.times.push(t);
            traj.states.push(s);
            traj.derivs.push(eom_rhs(params, &s));
            traj.actions.push(y[4].re);
            traj.drifts.push(drift);
            traj.action_imags.push(y[4].im);
            traj.action_imag = y[4].im;
            traj.max_density_drift = traj.max_density_drift.max(drift);
            traj.max_slice_residual = traj.max_slice_residual.max(s.slice_residual());
            let d = dist(&s);
            if d < traj.closest_approach {
                traj.closest_approach = d;
                traj.closest_index = traj.states.len() - 1;
            }
            if drift > 100.0 * budget {
                traj.termination = Termination::DriftExceeded;
                failure = Some(InstantonError::DriftExceeded { t, drift });
                break;
            }
            if s.norm() > opts.escape_radius {
                traj.termination = Termination::Escaped;
                break;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            let fac = if finite { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
        }
        if h < h_min && t < t_end {
            traj.termination = Termination::StepSizeUnderflow;
            failure = Some(InstantonError::StepSizeUnderflow {
                t,
                last: *traj.states.last().expect("nonempty"),
            });
            break;
        }
    }
    traj.accumulated_action = *traj.actions.last().expect("nonempty");
    Ok((traj, failure))
}

/// Linearization of the flow at a fixed point.
#[derive(Debug, Clone)]
pub struct SaddleJacobian {
    /// Holomorphic Jacobian in `(b, b̄, b̃_q, b̃̄_q)`.
    pub matrix: [[C64; 4]; 4],
    /// Same map restricted to the slice, in `(Re b, Im b, Re b̃_q, Im b̃_q)`.
    pub real_matrix: [[f64; 4]; 4],
    pub eigenvalues: Vec<C64>,
    /// Orthonormal basis of the repulsive plane in slice coordinates.
    pub repulsive_basis: Vec<[f64; 4]>,
    /// `max_λ min_μ |λ + μ|` relative to the spectral radius.
    pub pairing_residual: f64,
}

/// Jacobian of the cubic vector field by a five-point stencil, which is
/// exact up to rounding for polynomials of degree four or less.
fn holomorphic_jacobian(params: &SystemParams, u: [C64; 4]) -> [[C64; 4]; 4] {
    let scale = u.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let h = 1e-2 * scale;
    let mut j = [[ZERO; 4]; 4];
    for k in 0..4 {
        let at = |m: f64| {
            let mut v = u;
            v[k] += m * h;
            rhs_tilde(params, &v)
        };
        let (p1, p2, m1, m2) = (at(1.0), at(2.0), at(-1.0), at(-2.0));
        for r in 0..4 {
            j[r][k] = (-p2[r] + 8.0 * p1[r] - 8.0 * m1[r] + m2[r]) / (12.0 * h);
        }
    }
    j
}

fn slice_matrix(j: &[[C64; 4]; 4]) -> [[f64; 4]; 4] {
    // columns of ∂u/∂y for y = (Re b, Im b, Re b̃_q, Im b̃_q)
    let cols: [[C64; 4]; 4] = [
        [C64::new(1.0, 0.0), C64::new(1.0, 0.0), ZERO, ZERO],
        [I, -I, ZERO, ZERO],
        [ZERO, ZERO, C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
        [ZERO, ZERO, I, -I],
    ];
    let mut out = [[0.0; 4]; 4];
    for (c, dir) in cols.iter().enumerate() {
        let mut du = [ZERO; 4];
        for r in 0..4 {
            for k in 0..4 {
                du[r] += j[r][k] * dir[k];
            }
        }
        out[0][c] = du[0].re;
        out[1][c] = du[0].im;
        out[2][c] = du[2].re;
        out[3][c] = du[2].im;
    }
    out
}

fn to_slice(s: &PhaseSpaceState) -> [f64; 4] {
    let t = s.to_tilde();
    [t[0].re, t[0].im, t[2].re, t[2].im]
}

fn from_slice(y: [f64; 4]) -> PhaseSpaceState {
    let b = C64::new(y[0], y[1]);
    let q = C64::new(y[2], y[3]);
    PhaseSpaceState::from_tilde([b, b.conj(), q, q.conj()])
}

pub fn saddle_jacobian(
    params: &SystemParams,
    fixed_point: &PhaseSpaceState,
) -> Result<SaddleJacobian, InstantonError> {
    params.validate()?;
    let d = eom_rhs(params, fixed_point);
    let res = d.norm();
    if res > FIXED_POINT_TOL * params.rate_scale().max(1.0) * (1.0 + fixed_point.norm()).powi(3) {
        return Err(InstantonError::NotFixedPoint(res));
    }
    let matrix = holomorphic_jacobian(params, fixed_point.to_tilde());
    let real_matrix = slice_matrix(&matrix);
    let m = Mat::<c64>::from_fn(4, 4, |r, c| C64::new(real_matrix[r][c], 0.0));
    let eig = m
        .eigen()
        .map_err(|e| InstantonError::Eigensolver(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let eigenvalues: Vec<C64> = (0..4).map(|i| s[i]).collect();
    let radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let pairing_residual = eigenvalues
        .iter()
        .map(|l| eigenvalues.iter().map(|m| (l + m).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
        / radius;

    let mut raw: Vec<[f64; 4]> = Vec::new();
    let mut n_rep = 0;
    for i in 0..4 {
        if eigenvalues[i].re > 1e-12 * radius {
            n_rep += 1;
            raw.push([u[(0, i)].re, u[(1, i)].re, u[(2, i)].re, u[(3, i)].re]);
            raw.push([u[(0, i)].im, u[(1, i)].im, u[(2, i)].im, u[(3, i)].im]);
        }
    }
    if n_rep != 2 {
        return Err(InstantonError::RepulsivePlane(n_rep));
    }
    let mut basis: Vec<[f64; 4]> = Vec::new();
    for mut v in raw {
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = (0..4).map(|k| v[k] * b[k]).sum();
                (0..4).for_each(|k| v[k] -= c * b[k]);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 && basis.len() < 2 {
            basis.push(v.map(|x| x / n));
        }
    }
    if basis.len() != 2 {
        return Err(InstantonError::RepulsivePlane(basis.len()));
    }
    Ok(SaddleJacobian {
        matrix,
        real_matrix,
        eigenvalues,
        repulsive_basis: basis,
        pairing_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootOptions {
    /// Launch distance relative to `max(|fp|, 1)`.
    pub eps: f64,
    pub n_theta: usize,
    /// Golden-section rounds per refined local minimum.
    pub refine_iters: usize,
    /// Number of grid local minima refined, best first.
    pub max_branches: usize,
    pub tol: f64,
    /// Target amplitude; defaults to the unstable mean-field fixed point.
    pub target: Option<C64>,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            n_theta: 720,
            refine_iters: 60,
            max_branches: 8,
            tol: 1e-10,
            target: None,
        }
    }
}

/// Refined local minimum of the closest-approach scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub theta: f64,
    pub closest_approach: f64,
    /// Action at the closest approach.
    pub action: f64,
}

/// Dominant shot from a stable fixed point towards the saddle.
#[derive(Debug, Clone)]
pub struct InstantonShot {
    /// Truncated at the closest approach to the target.
    pub trajectory: Trajectory,
    pub theta: f64,
    pub closest_approach: f64,
    pub action: f64,
    pub target: C64,
    pub jacobian: SaddleJacobian,
    /// `(θ, closest approach)` over the uniform grid.
    pub scan: Vec<(f64, f64)>,
    /// Refined branches ordered by θ; the returned shot is the accepted one
    /// with the largest action.
    pub branches: Vec<Branch>,
}

struct Shooter<'a> {
    params: &'a SystemParams,
    origin: [f64; 4],
    basis: [[f64; 4]; 2],
    radius: f64,
    opts: IntegrateOptions,
}

impl Shooter<'_> {
    fn fire(&self, theta: f64) -> Result<Trajectory, InstantonError> {
        let (s, c) = theta.sin_cos();
        let y: [f64; 4] = std::array::from_fn(|k| {
            self.origin[k] + self.radius * (c * self.basis[0][k] + s * self.basis[1][k])
        });
        let (traj, _) = integrate_inner(self.params, from_slice(y), 0.0, &self.opts)?;
        Ok(traj)
    }

    fn score(&self, theta: f64) -> Result<f64, InstantonError> {
        self.fire(theta).map(|t| t.closest_approach)
    }

    /// Golden-section search on `[lo, hi]` seeded with a known point.
    fn refine(&self, lo: f64, hi: f64, seed: (f64, f64), iters: usize) -> Result<(f64, f64), InstantonError> {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (lo, hi);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let mut f1 = self.score(x1)?;
        let mut f2 = self.score(x2)?;
        let mut best = seed;
        for _ in 0..iters {
            for (x, f) in [(x1, f1), (x2, f2)] {
                if f < best.1 {
                    best = (x, f);
                }
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = self.score(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = self.score(x2)?;
            }
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f < best.1 {
                best = (x, f);
            }
        }
        Ok(best)
    }
}

pub fn shoot_instanton(
    params: &SystemParams,
    from_fp: C64,
    opts: &ShootOptions,
) -> Result<InstantonShot, InstantonError> {
    params.validate()?;
    let fp = PhaseSpaceState::noise_free(from_fp);
    let jacobian = saddle_jacobian(params, &fp)?;
    let target = match opts.target {
        Some(z) => z,
        None => nearest_unstable(params, from_fp)?,
    };
    let mut int_opts = IntegrateOptions::for_params(params, opts.tol);
    int_opts.target = Some(PhaseSpaceState::noise_free(target));
    let shooter = Shooter {
        params,
        origin: to_slice(&fp),
        basis: [jacobian.repulsive_basis[0], jacobian.repulsive_basis[1]],
        radius: opts.eps * from_fp.norm().max(1.0),
        opts: int_opts,
    };

    let n = opts.n_theta.max(3);
    let step = 2.0 * PI / n as f64;
    let mut scan = Vec::with_capacity(n);
    for k in 0..n {
        let theta = k as f64 * step;
        scan.push((theta, shooter.score(theta)?));
    }

    let mut minima: Vec<usize> = (0..n)
        .filter(|&k| {
            let c = scan[k].1;
            c < scan[(k + n - 1) % n].1 && c <= scan[(k + 1) % n].1
        })
        .collect();
    minima.sort_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1).then(a.cmp(&b)));
    minima.truncate(opts.max_branches.max(1));

    let mut branches = Vec::with_capacity(minima.len());
    for &k in &minima {
        let centre = k as f64 * step;
        let (theta, score) =
            shooter.refine(centre - step, centre + step, (centre, scan[k].1), opts.refine_iters)?;
        let theta = theta.rem_euclid(2.0 * PI);
        let traj = shooter.fire(theta)?;
        branches.push(Branch {
            theta,
            closest_approach: score.min(traj.closest_approach),
            action: traj.actions[traj.closest_index],
        });
    }
    branches.sort_by(|a, b| a.theta.total_cmp(&b.theta));

    let winner = branches
        .iter()
        .filter(|b| b.closest_approach <= ACCEPT_RADIUS)
        .max_by(|a, b| a.action.total_cmp(&b.action).then(b.theta.total_cmp(&a.theta)))
        .copied();
    let Some(winner) = winner else {
        let best = branches
            .iter()
            .min_by(|a, b| a.closest_approach.total_cmp(&b.closest_approach))
            .copied()
            .unwrap_or(Branch {
                theta: 0.0,
                closest_approach: f64::INFINITY,
                action: 0.0,
            });
        return Err(InstantonError::NoCandidate {
            best: best.closest_approach,
            theta: best.theta,
        });
    };
    let mut trajectory = shooter.fire(winner.theta)?;
    let k = trajectory.closest_index;
    trajectory.truncate(k);
    Ok(InstantonShot {
        closest_approach: trajectory.closest_approach,
        action: trajectory.accumulated_action,
        trajectory,
        theta: winner.theta,
        target,
        jacobian,
        scan,
        branches,
    })
}

fn nearest_unstable(params: &SystemParams, z: C64) -> Result<C64, InstantonError> {
    let set = fixed_points_general(params)?;
    set.unstable()
        .iter()
        .map(|p| p.z)
        .min_by(|a, b| (a - z).norm().total_cmp(&(b - z).norm()))
        .ok_or(InstantonError::NoTarget)
}

/// Noise-free relaxation from just off the saddle `from` into the basin of
/// `to`, as the curve of amplitudes it traces.
pub fn relaxation_path(
    params: &SystemParams,
    from: C64,
    to: C64,
    tol: f64,
) -> Result<Vec<C64>, InstantonError> {
    let offset = 1e-6 * (to - from).norm().max(1.0);
    let dir = (to - from) / (to - from).norm();
    let start = PhaseSpaceState::noise_free(from + offset * dir);
    let mut opts = IntegrateOptions::for_params(params, tol);
    opts.target = Some(PhaseSpaceState::noise_free(to));
    let traj = integrate_with(params, start, &opts)?;
    let mut path: Vec<C64> = vec![from];
    path.extend(traj.states[..=traj.closest_index].iter().map(|s| s.b));
    path.push(to);
    Ok(path)
}

fn point_segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a) * ab.conj()).re / len2;
    (p - (a + s.clamp(0.0, 1.0) * ab)).norm()
}

/// Largest distance from a trajectory's amplitudes `b` to a polyline.
pub fn path_deviation(traj: &Trajectory, path: &[C64]) -> f64 {
    traj.states
        .iter()
        .map(|s| {
            path.windows(2)
                .map(|w| point_segment_distance(s.b, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// `max |ḃ + A(b)|` along a path: zero when the velocity reverses the
/// noise-free drift at every point.
pub fn time_reversal_deviation(params: &SystemParams, traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .zip(&traj.derivs)
        .map(|(s, d)| (d.b + drift_diffusion(params, s.coords()).a[0]).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keldysh::{potential_phi, tr_parametrization};
    use crate::model::{dephased_cat, dissipative_cat, Imperfection};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng, w: f64) -> C64 {
        C64::new(rng.random_range(-w..w), rng.random_range(-w..w))
    }

    fn pure_cat(alpha_sq: f64) -> SystemParams {
        let mut p = dissipative_cat(alpha_sq.sqrt(), Imperfection::None);
        p.kappa1 = 0.0;
        p
    }

    #[test]
    fn explicit_dephasing_equations_match_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let a0 = rand_c(&mut rng, 3.0);
            let kp = rng.random_range(0.0..1.0);
            let k2 = rng.random_range(0.1..2.0);
            let p = SystemParams {
                kappa2: k2,
                kappa_phi: kp,
                alpha0_sq: Some(a0),
                ..Default::default()
            };
            let s = PhaseSpaceState {
                b: rand_c(&mut rng, 2.0),
                b_bar: rand_c(&mut rng, 2.0),
                b_q: rand_c(&mut rng, 2.0),
                b_q_bar: rand_c(&mut rng, 2.0),
            };
            let g = eom_rhs(&p, &s);
            let e = eom_rhs_dephased_cat(k2, a0, kp, &s);
            let d = PhaseSpaceState {
                b: g.b - e.b,
                b_bar: g.b_bar - e.b_bar,
                b_q: g.b_q - e.b_q,
                b_q_bar: g.b_q_bar - e.b_q_bar,
            };
            worst = worst.max(d.norm());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn dephased_fixed_points_are_stationary() {
        let p = dephased_cat(4.0, 0.5, 0.0);
        for sign in [1.0, -1.0] {
            let z = C64::new(sign * (4.0f64 - 0.25).sqrt(), 0.0);
            assert!(eom_rhs(&p, &PhaseSpaceState::noise_free(z)).norm() < 1e-13);
        }
    }

    #[test]
    fn tr_slice_reverses_flow() {
        let p = dissipative_cat(1.7, Imperfection::Lambda3(C64::new(0.1, -0.05)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z = rand_c(&mut rng, 2.0);
            let (b_q, b_q_bar) = tr_parametrization(&p, [z, z.conj()]).unwrap();
            let s = PhaseSpaceState {
                b: z,
                b_bar: z.conj(),
                b_q,
                b_q_bar,
            };
            let d = eom_rhs(&p, &s);
            let a = drift_diffusion(&p, [z, z.conj()]).a;
            assert!((d.b + a[0]).norm() < 1e-10 * (1.0 + a[0].norm()));
            assert!((d.b_bar + a[1]).norm() < 1e-10 * (1.0 + a[1].norm()));
        }
    }

    #[test]
    fn jacobian_at_dephased_fixed_point() {
        let p = dephased_cat(4.0, 0.5, 0.0);
        let fp = PhaseSpaceState::noise_free(C64::new(3.75f64.sqrt(), 0.0));
        let j = saddle_jacobian(&p, &fp).unwrap();
        assert_eq!(j.eigenvalues.iter().filter(|l| l.re > 0.0).count(), 2);
        assert!(j.pairing_residual < 1e-10, "{}", j.pairing_residual);
        // the repulsive plane is invariant under the slice matrix
        for v in &j.repulsive_basis {
            let w: Vec<f64> = (0..4).map(|r| (0..4).map(|c| j.real_matrix[r][c] * v[c]).sum()).collect();
            let proj: f64 = j
                .repulsive_basis
                .iter()
                .map(|b| (0..4).map(|k| b[k] * w[k]).sum::<f64>().powi(2))
                .sum();
            let wn: f64 = w.iter().map(|x| x * x).sum();
            assert!((wn - proj).abs() < 1e-10 * wn);
        }
    }

    #[test]
    fn jacobian_mirrors_mean_field_for_cat() {
        let p = dissipative_cat(2.0, Imperfection::Detuning(0.3));
        let set = fixed_points_general(&p).unwrap();
        let fp = set.stable()[0];
        let j = saddle_jacobian(&p, &PhaseSpaceState::noise_free(fp.z)).unwrap();
        for mf in fp.jacobian_eigs {
            let hit = j.eigenvalues.iter().map(|l| (l + mf).norm()).fold(f64::INFINITY, f64::min);
            assert!(hit < 1e-9, "{mf}: {:?}", j.eigenvalues);
        }
    }

    #[test]
    fn noise_free_relaxation_has_no_action() {
        let p = dissipative_cat(2.0, Imperfection::None);
        let start = PhaseSpaceState::noise_free(C64::new(1.5, 0.3));
        let t = integrate(&p, start, (0.0, 20.0), 1e-10).unwrap();
        let end = t.states.last().unwrap();
        let fp = fixed_points_general(&p).unwrap().stable().iter().map(|f| f.z).find(|z| z.re > 0.0).unwrap();
        assert!((end.b - fp).norm() < 1e-8, "{} vs {fp}", end.b);
        assert!(t.accumulated_action.abs() < 1e-12);
        assert!(t.max_density_drift < 1e-10);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tr_manifold_flow_accumulates_potential_drop() {
        let p = pure_cat(4.0);
        let z = C64::new(1.999, 0.0);
        let (b_q, b_q_bar) = tr_parametrization(&p, [z, z.conj()]).unwrap();
        let s = PhaseSpaceState {
            b: z,
            b_bar: z.conj(),
            b_q,
            b_q_bar,
        };
        let t = integrate(&p, s, (0.0, 15.0), 1e-11).unwrap();
        let end = t.states.last().unwrap();
        let want = potential_phi(&p, end.b).unwrap() - potential_phi(&p, z).unwrap();
        assert!((t.accumulated_action - want).abs() < 1e-6 * want.abs(), "{} vs {want}", t.accumulated_action);
        assert!(end.b.norm() < 1e-3);
    }

    #[test]
    fn hermite_sampling_hits_nodes() {
        let p = pure_cat(2.0);
        let t = integrate(&p, PhaseSpaceState::noise_free(C64::new(0.5, 0.5)), (0.0, 2.0), 1e-10).unwrap();
        for k in [0, t.times.len() / 2, t.times.len() - 1] {
            assert!(t.sample(t.times[k]).distance(&t.states[k]) < 1e-14);
        }
        let fine = t.resample(0.01);
        assert_eq!(fine.len(), 201);
    }

    #[test]
    fn tolerance_guard() {
        let p = pure_cat(2.0);
        let s = PhaseSpaceState::noise_free(C64::new(0.5, 0.0));
        assert!(matches!(
            integrate(&p, s, (0.0, 1.0), 1e-3),
            Err(InstantonError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn not_a_fixed_point() {
        let p = pure_cat(2.0);
        let s = PhaseSpaceState::noise_free(C64::new(0.5, 0.0));
        assert!(matches!(saddle_jacobian(&p, &s), Err(InstantonError::NotFixedPoint(_))));
    }

    #[test]
    fn htrs_shot_matches_potential_difference() {
        let p = dissipative_cat(2.0, Imperfection::Kerr(0.2));
        let set = fixed_points_general(&p).unwrap();
        let (a1, _, au) = set.triple().unwrap();
        let shot = shoot_instanton(&p, a1, &ShootOptions::default()).unwrap();
        let want = crate::keldysh::action(&p, a1, au).unwrap();
        assert!((shot.action - want).abs() < 1e-3 * want.abs(), "{} vs {want}", shot.action);
        assert!(shot.trajectory.max_density_drift < 1e-6);
        assert!(shot.jacobian.pairing_residual < 1e-10);
        for (s, _) in shot.trajectory.states.iter().zip(0..) {
            if s.b_q.norm() > 1e-3 && (s.b - au).norm() > 1e-2 {
                let (q, qb) = tr_parametrization(&p, s.coords()).unwrap();
                assert!((q - s.b_q).norm() < 1e-4 * (1.0 + q.norm()), "{q} vs {}", s.b_q);
                assert!((qb - s.b_q_bar).norm() < 1e-4 * (1.0 + qb.norm()));
            }
        }
        let relax = relaxation_path(&p, au, a1, 1e-10).unwrap();
        assert!(path_deviation(&shot.trajectory, &relax) < 1e-4);
    }

    #[test]
    fn dephased_branches_leave_the_real_axis() {
        let p = dephased_cat(4.2, 0.4, 0.0);
        let z = C64::new(2.0, 0.0);
        let shot = shoot_instanton(&p, z, &ShootOptions::default()).unwrap();
        assert!(shot.closest_approach < 1e-2);
        let accepted: Vec<&Branch> = shot.branches.iter().filter(|b| b.closest_approach < 1e-2).collect();
        assert!(accepted.len() >= 3, "{:?}", shot.branches);
        let im = shot.trajectory.states.iter().map(|s| s.b.im.abs()).fold(0.0, f64::max);
        assert!(im > 0.1, "{im}");
        let relax = relaxation_path(&p, C64::new(0.0, 0.0), z, 1e-10).unwrap();
        assert!(path_deviation(&shot.trajectory, &relax) > 0.1);
        // the on-axis branch has the more negative action
        let axis = accepted.iter().map(|b| b.action).fold(f64::INFINITY, f64::min);
        assert!(shot.action > axis + 0.5);
    }
}
