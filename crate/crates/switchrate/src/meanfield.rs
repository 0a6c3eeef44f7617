//! Mean-field fixed points.
//!
//! The noise-free amplitude obeys `α̇ = −i f(α)` with
//! `f(z) = K₁' z − K₂|z|²z + Λ₁ + 2Λ₂ z* + Λ₃* z² + 2Λ₃|z|²` and
//! `K₁' = K₁ − iκ_φ/2`.  Fixed points solve `f(z) = 0` with `z*` the literal
//! complex conjugate.

use crate::model::{Coeffs, ModelError, SystemParams};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use thiserror::Error;

const DEDUP_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-10;
const CLASSIFY_TOL: f64 = 1e-8;
const NEWTON_MAX_STEPS: usize = 50;
const NEWTON_STEP_TOL: f64 = 1e-13;
const N_ANGLES: usize = 24;
const N_RADII: usize = 12;
/// Default minimum pairwise distance for a set to count as bistable.
pub const BISTABLE_SEPARATION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeanFieldError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("multistart Newton found {found} roots, closed form predicts {expected}")]
    NoConvergence { found: usize, expected: usize },
    #[error("fixed point near {z} is degenerate (singular Jacobian)")]
    DegenerateRoots { z: C64 },
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("residual {residual:e} at {z} is too large for a fixed point")]
    ResidualTooLarge { z: C64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub z: C64,
    pub stability: Stability,
    pub jacobian_eigs: [C64; 2],
    pub residual: f64,
}

impl FixedPoint {
    pub fn is_stable(&self) -> bool {
        self.stability == Stability::Stable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet {
    /// Sorted by `(Re z, Im z)`.
    pub points: Vec<FixedPoint>,
    pub bistable: bool,
    /// Set when the stable/unstable counts leave the covered regime.
    pub diagnostic: Option<String>,
}

impl FixedPointSet {
    fn new(mut points: Vec<FixedPoint>) -> Self {
        points.sort_by(|a, b| a.z.re.total_cmp(&b.z.re).then(a.z.im.total_cmp(&b.z.im)));
        let n_stable = points.iter().filter(|p| p.is_stable()).count();
        let diagnostic = if n_stable > 2 || points.len() > 3 {
            let msg = format!(
                "{} fixed points ({} stable) exceed the covered regime",
                points.len(),
                n_stable
            );
            log::warn!("{msg}");
            Some(msg)
        } else {
            None
        };
        let mut set = Self {
            points,
            bistable: false,
            diagnostic,
        };
        set.bistable = set.is_bistable_with(BISTABLE_SEPARATION);
        set
    }

    pub fn is_bistable_with(&self, separation: f64) -> bool {
        let n_stable = self.points.iter().filter(|p| p.is_stable()).count();
        if n_stable != 2 || self.points.len() != 3 {
            return false;
        }
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                if (a.z - b.z).norm() <= separation {
                    return false;
                }
            }
        }
        true
    }

    /// Stable points ordered by `|z|` descending; ties by `(Re, Im)`.
    pub fn stable(&self) -> Vec<FixedPoint> {
        let mut s: Vec<FixedPoint> = self.points.iter().copied().filter(|p| p.is_stable()).collect();
        s.sort_by(|a, b| {
            b.z.norm()
                .total_cmp(&a.z.norm())
                .then(a.z.re.total_cmp(&b.z.re))
                .then(a.z.im.total_cmp(&b.z.im))
        });
        s
    }

    pub fn unstable(&self) -> Vec<FixedPoint> {
        self.points.iter().copied().filter(|p| !p.is_stable()).collect()
    }

    /// `(α₁, α₂, α_u)` for a bistable set, `α₁` being the brighter state.
    pub fn triple(&self) -> Option<(C64, C64, C64)> {
        if !self.bistable {
            return None;
        }
        let s = self.stable();
        let u = self.unstable();
        Some((s[0].z, s[1].z, u[0].z))
    }
}

fn k1_eff(c: &Coeffs) -> C64 {
    c.k1 - C64::new(0.0, c.kphi / 2.0)
}

/// `f(z)` and its Wirtinger derivatives `∂f/∂z`, `∂f/∂z*`.
fn f_parts(c: &Coeffs, z: C64) -> (C64, C64, C64) {
    let k1 = k1_eff(c);
    let zc = z.conj();
    let n = z.norm_sqr();
    let f = k1 * z - c.k2 * n * z + c.l1 + 2.0 * c.l2 * zc + c.l3.conj() * z * z + 2.0 * c.l3 * n;
    let fz = k1 - 2.0 * c.k2 * n + 2.0 * c.l3.conj() * z + 2.0 * c.l3 * zc;
    let fzc = -c.k2 * z * z + 2.0 * c.l2 + 2.0 * c.l3 * z;
    (f, fz, fzc)
}

/// Sum of term magnitudes, the scale against which residuals are judged.
fn f_scale(c: &Coeffs, z: C64) -> f64 {
    let n = z.norm_sqr();
    let k1 = k1_eff(c);
    (k1 * z).norm()
        + (c.k2 * n * z).norm()
        + c.l1.norm()
        + 2.0 * (c.l2 * z).norm()
        + (c.l3 * z * z).norm()
        + 2.0 * c.l3.norm() * n
}

/// Right-hand side of the mean-field equation, `α̇`.
pub fn mean_field_rhs(params: &SystemParams, z: C64) -> C64 {
    let (f, _, _) = f_parts(&params.coeffs(), z);
    C64::new(f.im, -f.re)
}

/// Modulus of `f(z)`; zero at fixed points.
pub fn residual(params: &SystemParams, z: C64) -> f64 {
    f_parts(&params.coeffs(), z).0.norm()
}

fn eig2(a: [[f64; 2]; 2]) -> [C64; 2] {
    let half_tr = 0.5 * (a[0][0] + a[1][1]);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = C64::new(half_tr * half_tr - det, 0.0).sqrt();
    [C64::new(half_tr, 0.0) + disc, C64::new(half_tr, 0.0) - disc]
}

/// Real 2×2 Jacobian of the flow `(Re α, Im α) ↦ α̇`.
fn flow_jacobian(c: &Coeffs, z: C64) -> [[f64; 2]; 2] {
    let (_, fz, fzc) = f_parts(c, z);
    let i = C64::new(0.0, 1.0);
    let gx = -i * (fz + fzc);
    let gy = fz - fzc;
    [[gx.re, gy.re], [gx.im, gy.im]]
}

fn classify_unchecked(c: &Coeffs, z: C64) -> (Stability, [C64; 2]) {
    let eigs = eig2(flow_jacobian(c, z));
    let stab = if eigs.iter().all(|e| e.re < 0.0) {
        Stability::Stable
    } else {
        Stability::Unstable
    };
    (stab, eigs)
}

/// Linear stability of a fixed point of the mean-field flow.
pub fn classify_stability(
    params: &SystemParams,
    z: C64,
) -> Result<(Stability, [C64; 2]), MeanFieldError> {
    let c = params.coeffs();
    let (f, _, _) = f_parts(&c, z);
    let tol = CLASSIFY_TOL * f_scale(&c, z).max(1.0);
    if f.norm() > tol {
        return Err(MeanFieldError::ResidualTooLarge {
            z,
            residual: f.norm(),
        });
    }
    Ok(classify_unchecked(&c, z))
}

fn newton(c: &Coeffs, mut z: C64) -> Option<C64> {
    let (mut f, mut fz, mut fzc) = f_parts(c, z);
    for _ in 0..NEWTON_MAX_STEPS {
        let i = C64::new(0.0, 1.0);
        let fx = fz + fzc;
        let fy = i * (fz - fzc);
        let (a, b, cc, d) = (fx.re, fy.re, fx.im, fy.im);
        let det = a * d - b * cc;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = -(d * f.re - b * f.im) / det;
        let dy = -(-cc * f.re + a * f.im) / det;
        let step = C64::new(dx, dy);
        let f0 = f.norm();
        let mut t = 1.0;
        let mut trial = z + step;
        let mut parts = f_parts(c, trial);
        for _ in 0..40 {
            if parts.0.norm() <= (1.0 - 1e-4 * t) * f0 || parts.0.norm() == 0.0 {
                break;
            }
            t *= 0.5;
            trial = z + step * t;
            parts = f_parts(c, trial);
        }
        let moved = (trial - z).norm();
        z = trial;
        (f, fz, fzc) = parts;
        if !z.is_finite() {
            return None;
        }
        if moved < NEWTON_STEP_TOL * z.norm().max(1.0) {
            break;
        }
    }
    let tol = RESIDUAL_TOL * f_scale(c, z).max(1.0);
    (f.norm() <= tol).then_some(z)
}

fn start_radius(c: &Coeffs) -> f64 {
    let k2 = c.k2.norm();
    [
        (2.0 * c.l2.norm() / k2).sqrt(),
        (c.l1.norm() / k2).cbrt(),
        (k1_eff(c).norm() / k2).sqrt(),
        1.0,
    ]
    .into_iter()
    .fold(0.0, f64::max)
        * 3.0
}

fn is_kerr_case(params: &SystemParams) -> bool {
    let c = params.coeffs();
    c.l2 == C64::new(0.0, 0.0) && c.l3 == C64::new(0.0, 0.0) && c.l1 != C64::new(0.0, 0.0)
}

/// All isolated fixed points by damped Newton from a deterministic polar grid.
pub fn fixed_points_general(params: &SystemParams) -> Result<FixedPointSet, MeanFieldError> {
    params.validate()?;
    let c = params.coeffs();
    if c.k2 == C64::new(0.0, 0.0) {
        return Err(ModelError::VanishingK2.into());
    }
    let r_max = start_radius(&c);
    let mut roots: Vec<C64> = Vec::new();
    let mut starts = vec![C64::new(0.0, 0.0)];
    for ir in 1..=N_RADII {
        let r = r_max * ir as f64 / N_RADII as f64;
        for ia in 0..N_ANGLES {
            let th = 2.0 * PI * (ia as f64 + 0.5 * (ir % 2) as f64) / N_ANGLES as f64;
            starts.push(C64::from_polar(r, th));
        }
    }
    for s in starts {
        if let Some(z) = newton(&c, s) {
            roots.push(z);
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut unique: Vec<C64> = Vec::new();
    for z in roots {
        if unique.iter().all(|u| (u - z).norm() > DEDUP_TOL * (1.0 + z.norm())) {
            unique.push(z);
        }
    }
    let mut points = Vec::with_capacity(unique.len());
    for z in unique {
        let (_, fz, fzc) = f_parts(&c, z);
        let jac_det = fz.norm_sqr() - fzc.norm_sqr();
        let jac_scale = (fz.norm() + fzc.norm()).powi(2);
        if jac_det.abs() <= 1e-12 * jac_scale {
            return Err(MeanFieldError::DegenerateRoots { z });
        }
        let (stability, jacobian_eigs) = classify_unchecked(&c, z);
        points.push(FixedPoint {
            z,
            stability,
            jacobian_eigs,
            residual: f_parts(&c, z).0.norm(),
        });
    }
    if points.is_empty() {
        return Err(MeanFieldError::NoConvergence {
            found: 0,
            expected: 1,
        });
    }
    if is_kerr_case(params) {
        let expected = fixed_points_kerr(params)?.points.len();
        if points.len() < expected {
            return Err(MeanFieldError::NoConvergence {
                found: points.len(),
                expected,
            });
        }
    }
    Ok(FixedPointSet::new(points))
}

/// Large-`|Λ₂|` expansion `{0, ±|2Λ₂/K₂|^½ e^{iψ₂/2} + (2Λ₃ + Λ₃* e^{iψ₂})/(2K₂)}`.
pub fn fixed_points_cat_asymptotic(params: &SystemParams) -> Result<Vec<C64>, MeanFieldError> {
    let c = params.coeffs();
    if c.l2 == C64::new(0.0, 0.0) {
        return Err(MeanFieldError::Precondition("two-photon drive must be nonzero"));
    }
    if c.k2 == C64::new(0.0, 0.0) {
        return Err(ModelError::VanishingK2.into());
    }
    let ratio = 2.0 * c.l2 / c.k2;
    if ratio.norm() < 4.0 {
        log::warn!("|2Λ₂/K₂| = {:.3} is not large; asymptotic roots are inaccurate", ratio.norm());
    }
    let psi = ratio.arg();
    let lead = C64::from_polar(ratio.norm().sqrt(), psi / 2.0);
    let shift = (2.0 * c.l3 + c.l3.conj() * C64::from_polar(1.0, psi)) / (2.0 * c.k2);
    Ok(vec![C64::new(0.0, 0.0), lead + shift, -lead + shift])
}

/// Sign and value of the Kerr cubic's discriminant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistabilityReport {
    /// `4p³ + 27q²`; negative means three real roots in `R = |z|²`.
    pub discriminant: f64,
    /// `Re(K₁* K₂)/|K₁K₂|`.
    pub cos_phi: f64,
    /// Three positive roots: needs a negative discriminant and `cos φ > 0`.
    pub bistable: bool,
}

struct KerrCubic {
    shift: f64,
    p: f64,
    q: f64,
}

fn kerr_cubic(c: &Coeffs) -> KerrCubic {
    let k1 = k1_eff(c);
    let n2 = c.k2.norm_sqr();
    let re = (k1.conj() * c.k2).re;
    let s = 2.0 * re / (3.0 * n2);
    let p = k1.norm_sqr() / n2 - 3.0 * s * s;
    let q = -2.0 * s * s * s + s * k1.norm_sqr() / n2 - c.l1.norm_sqr() / n2;
    KerrCubic { shift: s, p, q }
}

fn require_kerr(params: &SystemParams) -> Result<Coeffs, MeanFieldError> {
    params.validate()?;
    let c = params.coeffs();
    if c.l2 != C64::new(0.0, 0.0) || c.l3 != C64::new(0.0, 0.0) {
        return Err(MeanFieldError::Precondition("Kerr closed form needs Λ₂ = Λ₃ = 0"));
    }
    if c.l1 == C64::new(0.0, 0.0) {
        return Err(MeanFieldError::Precondition("Kerr closed form needs Λ₁ ≠ 0"));
    }
    if c.k2 == C64::new(0.0, 0.0) {
        return Err(ModelError::VanishingK2.into());
    }
    Ok(c)
}

pub fn bistability_region(params: &SystemParams) -> Result<BistabilityReport, MeanFieldError> {
    let c = require_kerr(params)?;
    let cub = kerr_cubic(&c);
    let disc = 4.0 * cub.p.powi(3) + 27.0 * cub.q * cub.q;
    let k1 = k1_eff(&c);
    let denom = k1.norm() * c.k2.norm();
    let cos_phi = if denom > 0.0 {
        (k1.conj() * c.k2).re / denom
    } else {
        0.0
    };
    Ok(BistabilityReport {
        discriminant: disc,
        cos_phi,
        bistable: disc < 0.0 && cos_phi > 0.0,
    })
}

/// Roots `R = |z|²` of the Kerr cubic (all real roots, ascending).
pub fn kerr_intensity_roots(params: &SystemParams) -> Result<Vec<f64>, MeanFieldError> {
    let c = require_kerr(params)?;
    let KerrCubic { shift, p, q } = kerr_cubic(&c);
    let disc = 4.0 * p.powi(3) + 27.0 * q * q;
    let mut r: Vec<f64> = if disc < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let th = arg.acos() / 3.0;
        (0..3)
            .map(|k| shift + m * (th + 2.0 * PI * k as f64 / 3.0).cos())
            .collect()
    } else {
        let sq = (q * q / 4.0 + p.powi(3) / 27.0).max(0.0).sqrt();
        vec![shift + (-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt()]
    };
    r.sort_by(f64::total_cmp);
    Ok(r)
}

/// Fixed points of the Kerr oscillator from the depressed cubic in `|z|²`.
pub fn fixed_points_kerr(params: &SystemParams) -> Result<FixedPointSet, MeanFieldError> {
    let c = require_kerr(params)?;
    let k1 = k1_eff(&c);
    let points = kerr_intensity_roots(params)?
        .into_iter()
        .filter(|&r| r >= 0.0)
        .map(|r| {
            let z = c.l1 / (c.k2 * r - k1);
            let (stability, jacobian_eigs) = classify_unchecked(&c, z);
            FixedPoint {
                z,
                stability,
                jacobian_eigs,
                residual: f_parts(&c, z).0.norm(),
            }
        })
        .collect();
    Ok(FixedPointSet::new(points))
}
