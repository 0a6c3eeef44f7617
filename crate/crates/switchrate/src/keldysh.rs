//! Keldysh phase-space machinery in the rotated variables.
//!
//! Coordinates are `X = (b, b̄)` and momenta `P = (b̄_q, −b_q)`; the
//! Lindbladian density is `𝓛 = P·A(X) + Pᵀ D(X) P`.  The barred variables
//! are independent complex coordinates; the physical slice is `b̄ = b*`,
//! `b̄_q = −b_q*`.

use crate::meanfield::{fixed_points_general, MeanFieldError};
use crate::model::{Coeffs, ModelError, SystemParams};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const BRANCH_TOL: f64 = 1e-12;
const SINGULAR_TOL: f64 = 1e-12;
const CONFLUENT_TOL: f64 = 1e-9;
const CURL_PASS: f64 = 1e-6;
const CURL_SKIP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeldyshError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error("operation requires kappa_phi = 0")]
    NotHtrs,
    #[error("diffusion is singular at ({0}, {1})")]
    SingularDiffusion(C64, C64),
    #[error("z = {z} is a branch point of the potential")]
    BranchPoint { z: C64 },
    #[error("all {0} curl samples were skipped as near-singular")]
    AllSamplesSkipped(usize),
    #[error("parameters are not bistable")]
    NotBistable,
}

/// Point of the four-dimensional complex phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseSpaceState {
    pub b: C64,
    pub b_bar: C64,
    pub b_q: C64,
    pub b_q_bar: C64,
}

impl PhaseSpaceState {
    /// Noise-free point with `b̄ = b*`.
    pub fn noise_free(z: C64) -> Self {
        Self {
            b: z,
            b_bar: z.conj(),
            b_q: ZERO,
            b_q_bar: ZERO,
        }
    }

    pub fn coords(&self) -> [C64; 2] {
        [self.b, self.b_bar]
    }

    pub fn momenta(&self) -> [C64; 2] {
        [self.b_q_bar, -self.b_q]
    }

    pub fn from_xp(x: [C64; 2], p: [C64; 2]) -> Self {
        Self {
            b: x[0],
            b_bar: x[1],
            b_q: -p[1],
            b_q_bar: p[0],
        }
    }

    /// `(b, b̄, b̃_q, b̃̄_q)` with `b̃_q = i b_q`, `b̃̄_q = i b̄_q`; on the
    /// physical slice the tilde pair is complex conjugate.
    pub fn to_tilde(&self) -> [C64; 4] {
        [self.b, self.b_bar, I * self.b_q, I * self.b_q_bar]
    }

    pub fn from_tilde(t: [C64; 4]) -> Self {
        Self {
            b: t[0],
            b_bar: t[1],
            b_q: -I * t[2],
            b_q_bar: -I * t[3],
        }
    }

    /// Euclidean norm of the eight real components.
    pub fn norm(&self) -> f64 {
        (self.b.norm_sqr() + self.b_bar.norm_sqr() + self.b_q.norm_sqr() + self.b_q_bar.norm_sqr())
            .sqrt()
    }

    pub fn distance(&self, other: &PhaseSpaceState) -> f64 {
        PhaseSpaceState {
            b: self.b - other.b,
            b_bar: self.b_bar - other.b_bar,
            b_q: self.b_q - other.b_q,
            b_q_bar: self.b_q_bar - other.b_q_bar,
        }
        .norm()
    }

    /// `|b̄ − b*| + |b̄_q + b_q*|`, zero on the physical slice.
    pub fn slice_residual(&self) -> f64 {
        (self.b_bar - self.b.conj()).norm() + (self.b_q_bar + self.b_q.conj()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.b_bar.is_finite() && self.b_q.is_finite() && self.b_q_bar.is_finite()
    }
}

/// Drift vector and symmetric diffusion matrix at a coordinate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftDiffusion {
    pub a: [C64; 2],
    pub d: [[C64; 2]; 2],
}

/// Tensors with their first coordinate derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tensors {
    pub a: [C64; 2],
    pub d: [[C64; 2]; 2],
    /// `da[k][m] = ∂A_k/∂X_m`
    pub da: [[C64; 2]; 2],
    /// `dd[k][j][m] = ∂D_kj/∂X_m`
    pub dd: [[[C64; 2]; 2]; 2],
}

pub(crate) fn tensors(c: &Coeffs, x: [C64; 2]) -> Tensors {
    let [b, bb] = x;
    let phi = c.kphi;
    let d11h = I * c.k2 * b * b / 2.0 - I * c.l2 - I * c.l3 * b;
    let d22h = -I * c.k2.conj() * bb * bb / 2.0 + I * c.l2.conj() + I * c.l3.conj() * bb;
    let dd11_b = I * c.k2 * b - I * c.l3;
    let dd22_bb = -I * c.k2.conj() * bb + I * c.l3.conj();

    let a1 = 2.0 * bb * d11h - I * c.k1 * b - I * c.l3.conj() * b * b - I * c.l1 - phi * b / 2.0;
    let a2 = 2.0 * b * d22h + I * c.k1.conj() * bb + I * c.l3 * bb * bb + I * c.l1.conj()
        - phi * bb / 2.0;

    let d11 = d11h - phi * b * b / 2.0;
    let d22 = d22h - phi * bb * bb / 2.0;
    let d12 = phi * b * bb / 2.0;

    let da = [
        [
            2.0 * bb * dd11_b - I * c.k1 - 2.0 * I * c.l3.conj() * b - phi / 2.0,
            2.0 * d11h,
        ],
        [
            2.0 * d22h,
            2.0 * b * dd22_bb + I * c.k1.conj() + 2.0 * I * c.l3 * bb - phi / 2.0,
        ],
    ];
    let dd = [
        [
            [dd11_b - phi * b, ZERO],
            [phi * bb / 2.0, phi * b / 2.0],
        ],
        [
            [phi * bb / 2.0, phi * b / 2.0],
            [ZERO, dd22_bb - phi * bb],
        ],
    ];
    Tensors {
        a: [a1, a2],
        d: [[d11, d12], [d12, d22]],
        da,
        dd,
    }
}

pub fn drift_diffusion(params: &SystemParams, x: [C64; 2]) -> DriftDiffusion {
    let t = tensors(&params.coeffs(), x);
    DriftDiffusion { a: t.a, d: t.d }
}

fn density_from(t: &Tensors, p: [C64; 2]) -> C64 {
    p[0] * t.a[0]
        + p[1] * t.a[1]
        + p[0] * p[0] * t.d[0][0]
        + 2.0 * p[0] * p[1] * t.d[0][1]
        + p[1] * p[1] * t.d[1][1]
}

/// `𝓛 = P·A + Pᵀ D P` at a phase-space point.
pub fn lindbladian_density(params: &SystemParams, s: &PhaseSpaceState) -> C64 {
    density_from(&tensors(&params.coeffs(), s.coords()), s.momenta())
}

/// Hamilton's equations `Ẋ = ∂𝓛/∂P`, `Ṗ = −∂𝓛/∂X`.
pub(crate) fn hamilton_xp(c: &Coeffs, s: &PhaseSpaceState) -> ([C64; 2], [C64; 2]) {
    let t = tensors(c, s.coords());
    let p = s.momenta();
    let mut xdot = [ZERO; 2];
    let mut pdot = [ZERO; 2];
    for k in 0..2 {
        xdot[k] = t.a[k] + 2.0 * (t.d[k][0] * p[0] + t.d[k][1] * p[1]);
    }
    for m in 0..2 {
        let mut g = ZERO;
        for k in 0..2 {
            g += p[k] * t.da[k][m];
            for j in 0..2 {
                g += p[k] * p[j] * t.dd[k][j][m];
            }
        }
        pdot[m] = -g;
    }
    (xdot, pdot)
}

fn inv2(m: [[C64; 2]; 2]) -> Option<[[C64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == ZERO || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn mul2(m: [[C64; 2]; 2], v: [C64; 2]) -> [C64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn sigma_min2(m: [[C64; 2]; 2]) -> f64 {
    let fro2 = m.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>();
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).norm();
    let s_max2 = 0.5 * (fro2 + (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt());
    if s_max2 <= 0.0 {
        0.0
    } else {
        det / s_max2.sqrt()
    }
}

fn require_htrs(params: &SystemParams) -> Result<(), KeldyshError> {
    if params.is_htrs() {
        Ok(())
    } else {
        Err(KeldyshError::NotHtrs)
    }
}

/// Momenta `(b_q, b̄_q)` of the time-reversed slice, written directly in
/// terms of the drive parameters.
pub fn tr_parametrization(params: &SystemParams, x: [C64; 2]) -> Result<(C64, C64), KeldyshError> {
    require_htrs(params)?;
    let c = params.coeffs();
    let [b, bb] = x;
    let den_q = c.k2.conj() * bb * bb - 2.0 * c.l2.conj() - 2.0 * c.l3.conj() * bb;
    let den_qb = c.k2 * b * b - 2.0 * c.l2 - 2.0 * c.l3 * b;
    if den_q.norm() < SINGULAR_TOL || den_qb.norm() < SINGULAR_TOL {
        return Err(KeldyshError::SingularDiffusion(b, bb));
    }
    let b_q = 2.0 * b
        - (2.0 * c.k1.conj() * bb + 2.0 * c.l3 * bb * bb + 2.0 * c.l1.conj()) / den_q;
    let b_q_bar =
        -2.0 * bb + (2.0 * c.k1 * b + 2.0 * c.l3.conj() * b * b + 2.0 * c.l1) / den_qb;
    Ok((b_q, b_q_bar))
}

/// `P = −D⁻¹A`, returned as `(b_q, b̄_q)`.
pub fn tr_momenta_from_tensors(
    params: &SystemParams,
    x: [C64; 2],
) -> Result<(C64, C64), KeldyshError> {
    let dd = drift_diffusion(params, x);
    let inv = inv2(dd.d).ok_or(KeldyshError::SingularDiffusion(x[0], x[1]))?;
    let p = mul2(inv, dd.a);
    Ok((p[1], -p[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurlKind {
    /// `Z′ = −D⁻¹A`
    AnsatzZPrime,
    /// `Z = D⁻¹(−A + ∂·D)`
    FokkerPlanckZ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurlReport {
    pub kind: CurlKind,
    pub max_curl: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
    pub pass: bool,
}

fn z_field(c: &Coeffs, kind: CurlKind, x: [C64; 2], scale: f64) -> Option<[C64; 2]> {
    let t = tensors(c, x);
    if sigma_min2(t.d) < CURL_SKIP * scale {
        return None;
    }
    let inv = inv2(t.d)?;
    let rhs = match kind {
        CurlKind::AnsatzZPrime => [-t.a[0], -t.a[1]],
        CurlKind::FokkerPlanckZ => [
            -t.a[0] + t.dd[0][0][0] + t.dd[0][1][1],
            -t.a[1] + t.dd[1][0][0] + t.dd[1][1][1],
        ],
    };
    Some(mul2(inv, rhs))
}

/// Checks `∂₂Z₁ = ∂₁Z₂` by central differences at seeded random points of
/// the physical slice inside `[−half_width, half_width]²`.
pub fn check_curl_condition(
    params: &SystemParams,
    kind: CurlKind,
    half_width: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CurlReport, KeldyshError> {
    params.validate()?;
    let c = params.coeffs();
    let scale = c.k2.norm() / 2.0 + c.l2.norm() + c.l3.norm() + c.kphi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_curl: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..n_samples {
        let z = C64::new(
            rng.random_range(-half_width..half_width),
            rng.random_range(-half_width..half_width),
        );
        let x = [z, z.conj()];
        let h = 1e-5 * (1.0 + z.norm());
        let shifted = |k: usize, s: f64| {
            let mut y = x;
            y[k] += h * s;
            z_field(&c, kind, y, scale)
        };
        let (Some(p2), Some(m2), Some(p1), Some(m1)) =
            (shifted(1, 1.0), shifted(1, -1.0), shifted(0, 1.0), shifted(0, -1.0))
        else {
            skipped += 1;
            continue;
        };
        if z_field(&c, kind, x, scale).is_none() {
            skipped += 1;
            continue;
        }
        let d2z1 = (p2[0] - m2[0]) / (2.0 * h);
        let d1z2 = (p1[1] - m1[1]) / (2.0 * h);
        max_curl = max_curl.max((d2z1 - d1z2).norm());
    }
    if skipped == n_samples {
        return Err(KeldyshError::AllSamplesSkipped(n_samples));
    }
    Ok(CurlReport {
        kind,
        max_curl,
        n_samples,
        n_skipped: skipped,
        pass: max_curl < CURL_PASS,
    })
}

/// Partial-fraction data of the potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialCoeffs {
    pub z_plus: C64,
    pub z_minus: C64,
    /// Unset in the confluent case.
    pub c_plus: Option<C64>,
    pub c_minus: Option<C64>,
    pub a_coef: C64,
    pub b_coef: C64,
    pub confluent: bool,
    k2: C64,
    l3: C64,
}

pub fn potential_coeffs(params: &SystemParams) -> Result<PotentialCoeffs, KeldyshError> {
    let c = params.coeffs();
    if c.k2 == ZERO {
        return Err(ModelError::VanishingK2.into());
    }
    let root = (c.l3 * c.l3 + 2.0 * c.l2 * c.k2).sqrt();
    let z_plus = (c.l3 + root) / c.k2;
    let z_minus = (c.l3 - root) / c.k2;
    let a_coef = -2.0 * c.k1 - 4.0 * c.l3.norm_sqr() / c.k2;
    let b_coef = -2.0 * c.l1 - 4.0 * c.l3.conj() * c.l2 / c.k2;
    let confluent = (z_plus - z_minus).norm() < CONFLUENT_TOL * (1.0 + z_plus.norm());
    let (c_plus, c_minus) = if confluent {
        (None, None)
    } else {
        (
            Some((a_coef * z_plus + b_coef) / (z_plus - z_minus)),
            Some((a_coef * z_minus + b_coef) / (z_minus - z_plus)),
        )
    };
    Ok(PotentialCoeffs {
        z_plus,
        z_minus,
        c_plus,
        c_minus,
        a_coef,
        b_coef,
        confluent,
        k2: c.k2,
        l3: c.l3,
    })
}

/// Logarithm with its cut on `{it : t ≤ 0}`; `arg ∈ (−π/2, 3π/2]`.
pub fn ln_cut(w: C64) -> C64 {
    (-I * w).ln() + C64::new(0.0, FRAC_PI_2)
}

fn tiny(coef: C64, scale: f64) -> bool {
    coef.norm() <= 1e-14 * scale
}

impl PotentialCoeffs {
    /// Holomorphic part `G` with `Φ = 2|z|² + 2 Re G`.
    fn g_antiderivative(&self, z: C64) -> Result<C64, KeldyshError> {
        let mut g = -2.0 * self.l3.conj() * z / self.k2;
        let scale = self.a_coef.norm() * (1.0 + self.z_plus.norm()) + self.b_coef.norm();
        if self.confluent {
            let z0 = 0.5 * (self.z_plus + self.z_minus);
            let r = self.a_coef * z0 + self.b_coef;
            let log_live = !tiny(self.a_coef, scale.max(f64::MIN_POSITIVE));
            let pole_live = !tiny(r, scale.max(f64::MIN_POSITIVE));
            if (log_live || pole_live) && (z - z0).norm() < BRANCH_TOL {
                return Err(KeldyshError::BranchPoint { z });
            }
            if log_live {
                g += self.a_coef / self.k2 * ln_cut(z - z0);
            }
            if pole_live {
                g -= r / (self.k2 * (z - z0));
            }
        } else {
            for (zr, cr) in [(self.z_plus, self.c_plus), (self.z_minus, self.c_minus)] {
                let cr = cr.unwrap_or(ZERO);
                if tiny(cr, scale.max(f64::MIN_POSITIVE)) {
                    continue;
                }
                if (z - zr).norm() < BRANCH_TOL {
                    return Err(KeldyshError::BranchPoint { z });
                }
                g += cr / self.k2 * ln_cut(z - zr);
            }
        }
        Ok(g)
    }

    fn phi_raw(&self, z: C64) -> Result<f64, KeldyshError> {
        Ok(2.0 * z.norm_sqr() + 2.0 * self.g_antiderivative(z)?.re)
    }

    /// `Φ(z)`, shifted so that `Φ(0) = 0` whenever `0` is regular.
    pub fn phi(&self, z: C64) -> Result<f64, KeldyshError> {
        let offset = self.phi_raw(ZERO).unwrap_or(0.0);
        Ok(self.phi_raw(z)? - offset)
    }
}

/// `g(z)` with `dΦ = (2z* + g) dz + c.c.`
pub fn potential_gradient(params: &SystemParams, z: C64) -> C64 {
    let c = params.coeffs();
    -(2.0 * c.k1 * z + 2.0 * c.l3.conj() * z * z + 2.0 * c.l1)
        / (c.k2 * z * z - 2.0 * c.l2 - 2.0 * c.l3 * z)
}

/// Closed-form potential `Φ(z)` of the time-reversed solution.
pub fn potential_phi(params: &SystemParams, z: C64) -> Result<f64, KeldyshError> {
    require_htrs(params)?;
    potential_coeffs(params)?.phi(z)
}

/// `iS = Φ(α_u) − Φ(α_i)`.
pub fn action(params: &SystemParams, from_fp: C64, to_unstable: C64) -> Result<f64, KeldyshError> {
    require_htrs(params)?;
    let pc = potential_coeffs(params)?;
    let s = pc.phi(to_unstable)? - pc.phi(from_fp)?;
    if s > 0.0 {
        log::warn!("positive action {s} from {from_fp} to {to_unstable}");
    }
    Ok(s)
}

/// Analytic switching-rate estimate for a bistable parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// Brighter stable state (larger `|z|`).
    pub alpha1: C64,
    pub alpha2: C64,
    pub alpha_u: C64,
    /// `iS` from `α₁` over the saddle.
    pub is_12: f64,
    pub is_21: f64,
    pub prefactor_12: f64,
    pub prefactor_21: f64,
    pub rate_12: f64,
    pub rate_21: f64,
    /// Average of the two rates.
    pub gap: f64,
}

impl RateEstimate {
    pub fn with_prefactors(&self, c12: f64, c21: f64) -> RateEstimate {
        let rate_12 = c12 * self.is_12.exp();
        let rate_21 = c21 * self.is_21.exp();
        RateEstimate {
            prefactor_12: c12,
            prefactor_21: c21,
            rate_12,
            rate_21,
            gap: 0.5 * (rate_12 + rate_21),
            ..*self
        }
    }

    /// The same estimate with the two wells relabelled.
    pub fn swapped(&self) -> RateEstimate {
        RateEstimate {
            alpha1: self.alpha2,
            alpha2: self.alpha1,
            is_12: self.is_21,
            is_21: self.is_12,
            prefactor_12: self.prefactor_21,
            prefactor_21: self.prefactor_12,
            rate_12: self.rate_21,
            rate_21: self.rate_12,
            ..*self
        }
    }
}

pub fn switching_rates(
    params: &SystemParams,
    prefactor: Option<f64>,
) -> Result<RateEstimate, KeldyshError> {
    require_htrs(params)?;
    let set = fixed_points_general(params)?;
    let (a1, a2, au) = set.triple().ok_or(KeldyshError::NotBistable)?;
    let pc = potential_coeffs(params)?;
    let phi_u = pc.phi(au)?;
    let is_12 = phi_u - pc.phi(a1)?;
    let is_21 = phi_u - pc.phi(a2)?;
    for s in [is_12, is_21] {
        if s > 0.0 {
            log::warn!("positive action {s}");
        }
    }
    let c = prefactor.unwrap_or(1.0);
    let base = RateEstimate {
        alpha1: a1,
        alpha2: a2,
        alpha_u: au,
        is_12,
        is_21,
        prefactor_12: c,
        prefactor_21: c,
        rate_12: 0.0,
        rate_21: 0.0,
        gap: 0.0,
    };
    Ok(base.with_prefactors(c, c))
}

/// Log-density `Φ(z) − ln|D(z) D̄(z*)|` of the steady complex-P function on
/// the physical slice.
pub fn complexp_potential(params: &SystemParams, z: C64) -> Result<f64, KeldyshError> {
    let phi = potential_phi(params, z)?;
    let dd = drift_diffusion(params, [z, z.conj()]);
    let prod = dd.d[0][0] * dd.d[1][1];
    if dd.d[0][0].norm() < SINGULAR_TOL || dd.d[1][1].norm() < SINGULAR_TOL {
        return Err(KeldyshError::SingularDiffusion(z, z.conj()));
    }
    Ok(phi - prod.norm().ln())
}

/// Seeded uniform sample of complex numbers in a square.
#[cfg(test)]
pub(crate) fn sample_box(rng: &mut ChaCha8Rng, half_width: f64) -> C64 {
    C64::new(
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dissipative_cat, kerr_oscillator, Imperfection};
    use approx::assert_abs_diff_eq;

    fn cat_pure() -> SystemParams {
        SystemParams {
            kappa2: 1.0,
            lambda2: C64::new(0.0, 2.0),
            ..Default::default()
        }
    }

    fn generic() -> SystemParams {
        SystemParams {
            delta: 0.3,
            kerr: -0.2,
            kappa1: 0.15,
            kappa2: 0.9,
            lambda1: C64::new(0.2, -0.4),
            lambda2: C64::new(0.5, 1.1),
            lambda3: C64::new(-0.13, 0.22),
            ..Default::default()
        }
    }

    /// Density in the original classical/quantum fields, expanded term by
    /// term and mapped to the rotated variables.
    fn density_oracle(params: &SystemParams, s: &PhaseSpaceState) -> C64 {
        let r2 = 2f64.sqrt();
        let q = s.b_q / r2;
        let qb = s.b_q_bar / r2;
        let a = r2 * s.b - q;
        let ab = r2 * s.b_bar + qb;
        let c = params.coeffs();
        let half = |a: C64, ab: C64, q: C64, qb: C64, k1: C64, k2: C64, l1: C64, l2: C64, l3: C64, ii: C64| {
            q * (ab * (-ii * k1.conj() + ii * k2.conj() / 2.0 * a * ab)
                - ii * l3 * ab * ab / r2
                - r2 * ii * l1.conj()
                - 2.0 * ii * l2.conj() * a
                - r2 * ii * l3.conj() * a * ab)
                + q * q * qb / 2.0 * (ii * k2 * ab - r2 * ii * l3.conj())
        };
        let t1 = half(a, ab, q, qb, c.k1, c.k2, c.l1, c.l2, c.l3, I);
        let t2 = half(
            ab,
            a,
            qb,
            q,
            c.k1.conj(),
            c.k2.conj(),
            c.l1.conj(),
            c.l2.conj(),
            c.l3.conj(),
            -I,
        );
        t1 - t2 + q * qb * (-2.0 * a * ab * params.kappa2 - params.kappa1)
    }

    #[test]
    fn density_matches_field_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for params in [cat_pure(), generic(), kerr_oscillator(1.0)] {
            for _ in 0..200 {
                let s = PhaseSpaceState {
                    b: sample_box(&mut rng, 2.0),
                    b_bar: sample_box(&mut rng, 2.0),
                    b_q: sample_box(&mut rng, 2.0),
                    b_q_bar: sample_box(&mut rng, 2.0),
                };
                let got = lindbladian_density(&params, &s);
                let want = density_oracle(&params, &s);
                assert!((got - want).norm() < 1e-12 * (1.0 + want.norm()), "{got} vs {want}");
            }
        }
        // fixed example state
        let s = PhaseSpaceState {
            b: C64::new(1.0, 0.0),
            b_bar: C64::new(1.0, 0.0),
            b_q: C64::new(0.1, 0.0),
            b_q_bar: C64::new(0.1, 0.0),
        };
        let got = lindbladian_density(&cat_pure(), &s);
        assert!((got - density_oracle(&cat_pure(), &s)).norm() < 1e-14);
    }

    #[test]
    fn tensor_examples() {
        let p = SystemParams {
            kappa1: 0.4,
            ..Default::default()
        };
        let b = C64::new(0.3, -0.7);
        let dd = drift_diffusion(&p, [b, b.conj()]);
        assert_eq!(dd.d[0][0], ZERO);
        assert_eq!(dd.d[1][1], ZERO);
        assert!((dd.a[0] - (-I * C64::new(0.0, -0.2) * b)).norm() < 1e-15);

        let dd = drift_diffusion(&cat_pure(), [b, b.conj()]);
        // iK₂b²/2 − iΛ₂ with K₂ = i, Λ₂ = 2i
        let want = -b * b / 2.0 + 2.0;
        assert!((dd.d[0][0] - want).norm() < 1e-15);
    }

    #[test]
    fn tr_parametrization_examples() {
        let (bq, bqb) = tr_parametrization(&cat_pure(), [C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!((bq - C64::new(2.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((bqb - C64::new(-2.0, 0.0)).norm(), 0.0, epsilon = 1e-15);

        let p = generic();
        let set = fixed_points_general(&p).unwrap();
        for fp in &set.points {
            let (bq, bqb) = tr_parametrization(&p, [fp.z, fp.z.conj()]).unwrap();
            assert!(bq.norm() < 1e-9 && bqb.norm() < 1e-9);
        }
        let dephased = SystemParams {
            kappa_phi: 0.1,
            ..cat_pure()
        };
        assert_eq!(
            tr_parametrization(&dephased, [C64::new(1.0, 0.0); 2]),
            Err(KeldyshError::NotHtrs)
        );
        assert!(matches!(
            tr_parametrization(&cat_pure(), [C64::new(2.0, 0.0), C64::new(2.0, 0.0)]),
            Err(KeldyshError::SingularDiffusion(..))
        ));
    }

    #[test]
    fn potential_coeff_examples() {
        let pc = potential_coeffs(&cat_pure()).unwrap();
        assert!((pc.z_plus - C64::new(2.0, 0.0)).norm() < 1e-14);
        assert!((pc.z_minus + C64::new(2.0, 0.0)).norm() < 1e-14);
        assert_eq!(pc.c_plus, Some(ZERO));
        assert_eq!(pc.c_minus, Some(ZERO));

        assert!(potential_coeffs(&kerr_oscillator(1.0)).unwrap().confluent);

        let p = SystemParams {
            kappa2: 1.0,
            lambda3: C64::new(1.0, 0.0),
            ..Default::default()
        };
        let pc = potential_coeffs(&p).unwrap();
        let mut roots = [pc.z_plus, pc.z_minus];
        roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        assert!(roots[0].norm() < 1e-14);
        assert!((roots[1] - C64::new(0.0, -2.0)).norm() < 1e-14);
        for z in roots {
            assert!((I * z * z - 2.0 * z).norm() < 1e-12);
        }
    }

    #[test]
    fn cat_potential_values() {
        let p = cat_pure();
        assert_abs_diff_eq!(potential_phi(&p, C64::new(2.0, 0.0)).unwrap(), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(potential_phi(&p, ZERO).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(action(&p, C64::new(2.0, 0.0), ZERO).unwrap(), -8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(action(&p, C64::new(2.0, 0.0), C64::new(2.0, 0.0)).unwrap(), 0.0);
        let r = switching_rates(&p, None).unwrap();
        assert_abs_diff_eq!(r.gap, (-8f64).exp(), epsilon = 1e-15);
        let s = r.swapped();
        assert_eq!(s.rate_12, r.rate_21);
        assert_eq!(s.gap, r.gap);
    }

    #[test]
    fn ln_cut_branch() {
        let eps = 1e-9;
        // continuous across the negative real axis
        let a = ln_cut(C64::new(-1.0, eps));
        let b = ln_cut(C64::new(-1.0, -eps));
        assert!((a - b).norm() < 1e-8);
        // jump across the negative imaginary axis
        let a = ln_cut(C64::new(eps, -1.0));
        let b = ln_cut(C64::new(-eps, -1.0));
        assert!(((a - b).im.abs() - 2.0 * std::f64::consts::PI).abs() < 1e-8);
        assert!((ln_cut(C64::new(1.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn confluent_gradient_sign() {
        let p = kerr_oscillator(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z = C64::new(rng.random_range(0.5..6.0), rng.random_range(-5.0..5.0));
            let h = 1e-5;
            let fx = (potential_phi(&p, z + h).unwrap() - potential_phi(&p, z - h).unwrap()) / (2.0 * h);
            let fy = (potential_phi(&p, z + I * h).unwrap() - potential_phi(&p, z - I * h).unwrap())
                / (2.0 * h);
            let w = 2.0 * z.conj() + potential_gradient(&p, z);
            // dΦ = w dz + w* dz*  ⇒  ∂x Φ = 2 Re w, ∂y Φ = −2 Im w
            assert!((fx - 2.0 * w.re).abs() < 1e-6 * (1.0 + w.norm()));
            assert!((fy + 2.0 * w.im).abs() < 1e-6 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn complexp_correction_for_cat() {
        let p = dissipative_cat(2.0, Imperfection::None);
        let p = SystemParams { kappa1: 0.0, ..p };
        let z = C64::new(0.7, 0.4);
        let corr = potential_phi(&p, z).unwrap() - complexp_potential(&p, z).unwrap();
        let a2 = C64::new(4.0, 0.0);
        let want = ((z * z - a2) * (z.conj() * z.conj() - a2.conj()) / 4.0).norm().ln();
        assert_abs_diff_eq!(corr, want, epsilon = 1e-12);
    }

    #[test]
    fn curl_verdicts() {
        for kind in [CurlKind::AnsatzZPrime, CurlKind::FokkerPlanckZ] {
            let r = check_curl_condition(&generic(), kind, 2.0, 200, 5).unwrap();
            assert!(r.pass, "{kind:?} {}", r.max_curl);
            let dephased = crate::model::dephased_cat(4.0, 0.4, 0.0);
            let r = check_curl_condition(&dephased, kind, 2.0, 200, 5).unwrap();
            assert!(!r.pass && r.max_curl > 1e-2, "{kind:?} {}", r.max_curl);
        }
        let phi_only = SystemParams {
            kappa_phi: 1.0,
            ..Default::default()
        };
        assert_eq!(
            check_curl_condition(&phi_only, CurlKind::AnsatzZPrime, 2.0, 50, 1),
            Err(KeldyshError::AllSamplesSkipped(50))
        );
    }
}
