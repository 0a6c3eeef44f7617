//! System parameters, derived coefficients and presets.
//!
//! The Hamiltonian in the rotating frame is
//! `H = Δ a†a − K/2 a†²a² + (Λ₁ a† + Λ₂ a†² + Λ₃ a†²a + h.c.)`
//! with dissipators `κ₁ D[a] + κ₂ D[a²] + κ_φ D[a†a]`.  When `alpha0_sq` is
//! set the two-photon dissipator reads `κ₂ D[a² − α₀²]`, which is the same
//! generator as `κ₂ D[a²]` plus an extra two-photon drive `iκ₂α₀²/2`.

use num_complex::Complex64 as C64;
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` must be non-negative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("K2 = K + i*kappa2 vanishes (K and kappa2 both zero)")]
    VanishingK2,
    #[error("the alpha0^2 representation needs kappa2 > 0")]
    NoTwoPhotonLoss,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// Microscopic Lindbladian parameters in a common frequency unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub delta: f64,
    pub kerr: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa_phi: f64,
    pub lambda1: C64,
    pub lambda2: C64,
    pub lambda3: C64,
    pub alpha0_sq: Option<C64>,
    /// Name of the frequency unit all rates are expressed in.
    pub unit: String,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            delta: 0.0,
            kerr: 0.0,
            kappa1: 0.0,
            kappa2: 0.0,
            kappa_phi: 0.0,
            lambda1: C64::new(0.0, 0.0),
            lambda2: C64::new(0.0, 0.0),
            lambda3: C64::new(0.0, 0.0),
            alpha0_sq: None,
            unit: "kappa2".to_string(),
        }
    }
}

/// `K₁ = Δ − iκ₁/2` and `K₂ = K + iκ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoeffs {
    pub k1: C64,
    pub k2: C64,
}

/// Fully resolved coefficients shared by the analytic modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Coeffs {
    pub k1: C64,
    pub k2: C64,
    pub l1: C64,
    /// Two-photon drive including the `α₀²` contribution.
    pub l2: C64,
    pub l3: C64,
    pub kphi: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let reals = [
            ("delta", self.delta),
            ("kerr", self.kerr),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa_phi", self.kappa_phi),
        ];
        for (name, v) in reals {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
        }
        for (name, v) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa_phi", self.kappa_phi),
        ] {
            if v < 0.0 {
                return Err(ModelError::NegativeRate { name, value: v });
            }
        }
        let complexes = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("alpha0_sq", self.alpha0_sq.unwrap_or_default()),
        ];
        for (name, v) in complexes {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Two-photon drive with the `α₀²` term folded in.
    pub fn lambda2_effective(&self) -> C64 {
        match self.alpha0_sq {
            Some(a2) => self.lambda2 + I * self.kappa2 * a2 / 2.0,
            None => self.lambda2,
        }
    }

    /// Same generator with `α₀²` moved into `Λ₂`.
    pub fn to_lambda2_form(&self) -> SystemParams {
        SystemParams {
            lambda2: self.lambda2_effective(),
            alpha0_sq: None,
            ..self.clone()
        }
    }

    /// Same generator with the whole two-photon drive written as `κ₂ D[a² − α₀²]`.
    pub fn to_alpha0_form(&self) -> Result<SystemParams, ModelError> {
        if self.kappa2 <= 0.0 {
            return Err(ModelError::NoTwoPhotonLoss);
        }
        let l2 = self.lambda2_effective();
        Ok(SystemParams {
            lambda2: C64::new(0.0, 0.0),
            alpha0_sq: Some(-2.0 * I * l2 / self.kappa2),
            ..self.clone()
        })
    }

    /// True when the model belongs to the family with a closed-form potential.
    pub fn is_htrs(&self) -> bool {
        self.kappa_phi == 0.0
    }

    /// Largest dissipative rate, used to scale default tolerances and times.
    pub fn rate_scale(&self) -> f64 {
        let s = self.kappa1.max(self.kappa2).max(self.kappa_phi);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub(crate) fn coeffs(&self) -> Coeffs {
        let d = derive_coeffs(self);
        Coeffs {
            k1: d.k1,
            k2: d.k2,
            l1: self.lambda1,
            l2: self.lambda2_effective(),
            l3: self.lambda3,
            kphi: self.kappa_phi,
        }
    }

    /// Short provenance token: SHA-256 over the exact bit patterns of all
    /// parameters and the optional truncation.
    pub fn provenance_hash(&self, n_fock: Option<usize>) -> String {
        let mut h = Sha256::new();
        let mut put = |x: f64| h.update(x.to_bits().to_le_bytes());
        put(self.delta);
        put(self.kerr);
        put(self.kappa1);
        put(self.kappa2);
        put(self.kappa_phi);
        for c in [self.lambda1, self.lambda2, self.lambda3] {
            put(c.re);
            put(c.im);
        }
        match self.alpha0_sq {
            Some(c) => {
                put(1.0);
                put(c.re);
                put(c.im);
            }
            None => put(0.0),
        }
        h.update(self.unit.as_bytes());
        h.update((n_fock.map_or(0u64, |n| n as u64 + 1)).to_le_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn derive_coeffs(params: &SystemParams) -> DerivedCoeffs {
    DerivedCoeffs {
        k1: C64::new(params.delta, -params.kappa1 / 2.0),
        k2: C64::new(params.kerr, params.kappa2),
    }
}

/// `derive_coeffs` for callers that go on to divide by `K₂`.
pub fn derive_coeffs_checked(params: &SystemParams) -> Result<DerivedCoeffs, ModelError> {
    let d = derive_coeffs(params);
    if d.k2 == C64::new(0.0, 0.0) {
        return Err(ModelError::VanishingK2);
    }
    Ok(d)
}

/// Complex parameter from modulus and phase in radians.
pub fn polar(modulus: f64, phase: f64) -> C64 {
    C64::from_polar(modulus, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    KerrOscillator,
    DissipativeCat,
    DephasedCat,
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kerr_oscillator" => Ok(Preset::KerrOscillator),
            "dissipative_cat" => Ok(Preset::DissipativeCat),
            "dephased_cat" => Ok(Preset::DephasedCat),
            other => Err(ModelError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::KerrOscillator => "kerr_oscillator",
            Preset::DissipativeCat => "dissipative_cat",
            Preset::DephasedCat => "dephased_cat",
        })
    }
}

impl Preset {
    /// Preset with its default scale arguments.
    pub fn params(self) -> SystemParams {
        match self {
            Preset::KerrOscillator => kerr_oscillator(1.0),
            Preset::DissipativeCat => dissipative_cat(2.0, Imperfection::None),
            Preset::DephasedCat => dephased_cat(4.0, 0.4, 0.01),
        }
    }
}

/// Look up a preset by name with default scale arguments.
pub fn preset(name: &str) -> Result<SystemParams, ModelError> {
    Ok(name.parse::<Preset>()?.params())
}

/// Kerr oscillator with `K/κ₁ = 0.1`, `2Δ/κ₁ = 6.33` and `2|Λ₁|/κ₁ = 10`.
///
/// The drive phase is `π/2`, which keeps all three fixed points in the right
/// half plane, away from the logarithm's branch cut.
pub fn kerr_oscillator(kappa1: f64) -> SystemParams {
    SystemParams {
        delta: 3.165 * kappa1,
        kerr: 0.1 * kappa1,
        kappa1,
        lambda1: polar(5.0 * kappa1, std::f64::consts::FRAC_PI_2),
        unit: "kappa1".to_string(),
        ..SystemParams::default()
    }
}

/// Optional single imperfection added to the dissipative cat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imperfection {
    None,
    Detuning(f64),
    Kerr(f64),
    Lambda3(C64),
}

/// Two-photon driven cat with `κ₂ = 1`, `κ₁ = 0.01` and `Λ₂ = iκ₂α₀²/2`.
pub fn dissipative_cat(alpha0: f64, imperfection: Imperfection) -> SystemParams {
    let kappa2 = 1.0;
    let mut p = SystemParams {
        kappa1: 0.01 * kappa2,
        kappa2,
        lambda2: I * kappa2 * alpha0 * alpha0 / 2.0,
        ..SystemParams::default()
    };
    match imperfection {
        Imperfection::None => {}
        Imperfection::Detuning(d) => p.delta = d,
        Imperfection::Kerr(k) => p.kerr = k,
        Imperfection::Lambda3(l3) => p.lambda3 = l3,
    }
    p
}

/// Cat with dephasing, written as `κ_φ D[a†a] + κ₂ D[a² − α₀²]` with `κ₂ = 1`.
pub fn dephased_cat(alpha0_sq: f64, kappa_phi: f64, kappa1: f64) -> SystemParams {
    SystemParams {
        kappa1,
        kappa2: 1.0,
        kappa_phi,
        alpha0_sq: Some(C64::new(alpha0_sq, 0.0)),
        ..SystemParams::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coeffs_substitution() {
        let p = SystemParams {
            kappa2: 1.0,
            ..Default::default()
        };
        let d = derive_coeffs(&p);
        assert_eq!(d.k1, C64::new(0.0, 0.0));
        assert_eq!(d.k2, C64::new(0.0, 1.0));

        let p = SystemParams {
            delta: 3.165,
            kerr: 0.05,
            kappa1: 1.0,
            ..Default::default()
        };
        let d = derive_coeffs(&p);
        assert_eq!(d.k1, C64::new(3.165, -0.5));
        assert_eq!(d.k2, C64::new(0.05, 0.0));

        let p = SystemParams {
            delta: 0.1,
            kappa1: 0.01,
            kappa2: 1.0,
            ..Default::default()
        };
        let d = derive_coeffs(&p);
        assert_eq!(d.k1, C64::new(0.1, -0.005));
        assert_eq!(d.k2, C64::new(0.0, 1.0));
    }

    #[test]
    fn vanishing_k2_rejected() {
        let p = SystemParams {
            kappa1: 1.0,
            ..Default::default()
        };
        assert_eq!(derive_coeffs_checked(&p), Err(ModelError::VanishingK2));
    }

    #[test]
    fn validation() {
        let p = SystemParams {
            kappa1: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ModelError::NegativeRate { name: "kappa1", .. })
        ));
        let p = SystemParams {
            delta: f64::NAN,
            ..Default::default()
        };
        assert_eq!(p.validate(), Err(ModelError::NonFinite("delta")));
    }

    #[test]
    fn presets() {
        let k = preset("kerr_oscillator").unwrap();
        assert_eq!(k.delta, 3.165);
        assert!((k.kerr - 0.1).abs() < 1e-15);
        assert!((k.lambda1.norm() - 5.0).abs() < 1e-14);
        assert_eq!(k.kappa2, 0.0);

        let c = dissipative_cat(2.0, Imperfection::None);
        assert_eq!(c.kappa2, 1.0);
        assert_eq!(c.kappa1, 0.01);
        assert_eq!(c.lambda2, C64::new(0.0, 2.0));

        let d = dephased_cat(4.0, 0.4, 0.01);
        assert_eq!(d.kappa2, 1.0);
        assert_eq!(d.kappa_phi, 0.4);
        assert_eq!(d.lambda2_effective(), C64::new(0.0, 2.0));

        assert!(matches!(preset("nope"), Err(ModelError::UnknownPreset(_))));
    }

    #[test]
    fn alpha0_round_trip() {
        let p = SystemParams {
            kappa2: 0.7,
            alpha0_sq: Some(C64::new(3.3, -1.2)),
            ..Default::default()
        };
        let back = p.to_lambda2_form().to_alpha0_form().unwrap();
        let a = back.alpha0_sq.unwrap();
        assert!((a - C64::new(3.3, -1.2)).norm() < 1e-15);
        assert_eq!(back.lambda2, C64::new(0.0, 0.0));
    }

    #[test]
    fn provenance_changes_with_truncation() {
        let p = dissipative_cat(2.0, Imperfection::None);
        assert_eq!(p.provenance_hash(Some(20)), p.provenance_hash(Some(20)));
        assert_ne!(p.provenance_hash(Some(20)), p.provenance_hash(Some(21)));
        assert_eq!(p.provenance_hash(None).len(), 16);
    }
}
