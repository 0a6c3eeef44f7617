//! Parameter sweeps comparing analytic rates, numeric gaps and shot actions.

use crate::instanton::{shoot_instanton, InstantonError, ShootOptions};
use crate::keldysh::{switching_rates, KeldyshError};
use crate::lindblad::{
    build_lindbladian, dissipative_gap, metastable_populations, GapMethod, IterativeOptions, LindbladError,
    SpectralSummary, Superoperator, TRUNCATION_TOL,
};
use crate::meanfield::{fixed_points_general, MeanFieldError};
use crate::model::{
    dephased_cat, dissipative_cat, kerr_oscillator, polar, Imperfection, ModelError, SystemParams,
};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Largest top-level population accepted by the automatic truncation.
pub const TOP_POPULATION_TOL: f64 = 1e-6;

/// Smallest metastable weight from which a per-direction rate is read off.
/// Below it the weight is comparable to the `O(gap/fast rate)` ambiguity of
/// the two-well decomposition.
pub const RESOLVABLE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error(transparent)]
    Keldysh(#[from] KeldyshError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error(transparent)]
    Instanton(#[from] InstantonError),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid is not strictly monotone")]
    NonMonotoneGrid,
    #[error("no usable points for the prefactor fit")]
    EmptyOverlap,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot reach |alpha_ss|^2 = {0}")]
    AmplitudeUnreachable(f64),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    Detuning,
    Drive1Mod,
    AlphaSsSq,
    Kerr,
    Lambda3Mod,
    KappaPhi,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            Self::Detuning => "detuning",
            Self::Drive1Mod => "drive1_mod",
            Self::AlphaSsSq => "alpha_ss_sq",
            Self::Kerr => "kerr",
            Self::Lambda3Mod => "lambda3_mod",
            Self::KappaPhi => "kappa_phi",
        }
    }

    /// Parameters with the swept quantity set to `value`.
    pub fn apply(self, fixed: &SystemParams, value: f64) -> Result<SystemParams, SweepError> {
        let mut p = fixed.clone();
        match self {
            Self::Detuning => p.delta = value,
            Self::Kerr => p.kerr = value,
            Self::KappaPhi => p.kappa_phi = value,
            Self::Drive1Mod => p.lambda1 = with_modulus(p.lambda1, value),
            Self::Lambda3Mod => p.lambda3 = with_modulus(p.lambda3, value),
            Self::AlphaSsSq => return set_alpha_ss_sq(fixed, value),
        }
        Ok(p)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            Self::Detuning,
            Self::Drive1Mod,
            Self::AlphaSsSq,
            Self::Kerr,
            Self::Lambda3Mod,
            Self::KappaPhi,
        ];
        all.into_iter().find(|v| v.name() == s).ok_or(SweepError::Unknown {
            kind: "sweep variable",
            name: s.to_string(),
        })
    }
}

fn with_modulus(z: C64, modulus: f64) -> C64 {
    let phase = if z.norm() > 0.0 { z.arg() } else { 0.0 };
    polar(modulus, phase)
}

/// Largest `|z|²` over the stable mean-field points.
fn bright_intensity(p: &SystemParams) -> Result<f64, SweepError> {
    let set = fixed_points_general(p)?;
    Ok(set
        .points
        .iter()
        .filter(|q| q.is_stable())
        .map(|q| q.z.norm_sqr())
        .fold(0.0, f64::max))
}

/// Rescales the two-photon drive (or `α₀²`) so that the brightest stable
/// fixed point has `|z|² = target`, keeping its phase.
pub fn set_alpha_ss_sq(fixed: &SystemParams, target: f64) -> Result<SystemParams, SweepError> {
    let with = |s: f64| {
        let mut p = fixed.clone();
        match fixed.alpha0_sq {
            Some(a) => p.alpha0_sq = Some(with_modulus(a, s)),
            None => {
                let unit = if fixed.lambda2.norm() > 0.0 {
                    fixed.lambda2 / fixed.lambda2.norm()
                } else {
                    C64::new(0.0, 1.0)
                };
                p.lambda2 = unit * s * fixed.kappa2.max(f64::MIN_POSITIVE) / 2.0;
            }
        }
        p
    };
    let f = |s: f64| bright_intensity(&with(s)).map(|n| n - target);
    let mut lo = 0.0;
    let mut hi = 2.0 * target + 10.0;
    let (mut flo, fhi) = (f(lo)?, f(hi)?);
    if flo > 0.0 || fhi < 0.0 {
        return Err(SweepError::AmplitudeUnreachable(target));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= 1e-13 * target.max(1.0) {
            return Ok(with(mid));
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(with(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Outputs {
    pub analytic_rate: bool,
    pub numeric_gap: bool,
    pub instanton_action: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NFock {
    Fixed(usize),
    /// Scan `start, start + step, …` until the gap changes by less than
    /// the truncation tolerance and the top level is empty.
    Auto { start: usize, step: usize, max: usize },
}

impl Default for NFock {
    fn default() -> Self {
        Self::Auto {
            start: 20,
            step: 5,
            max: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Series label carried into every row.
    pub label: String,
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub fixed: SystemParams,
    pub outputs: Outputs,
    pub n_fock: NFock,
    pub prefactor: Option<f64>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        self.fixed.validate()?;
        if self.grid.is_empty() {
            return Err(SweepError::EmptyGrid);
        }
        let up = self.grid.windows(2).all(|w| w[1] > w[0]);
        let down = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) || self.grid.iter().any(|x| !x.is_finite()) {
            return Err(SweepError::NonMonotoneGrid);
        }
        Ok(())
    }
}

/// Numeric gap with the truncation it was obtained at.
#[derive(Debug, Clone)]
pub struct NumericGap {
    pub n_fock: usize,
    pub converged: bool,
    pub summary: SpectralSummary,
    pub operator: Superoperator,
}

pub fn numeric_gap(params: &SystemParams, n_fock: NFock, seed: u64) -> Result<NumericGap, SweepError> {
    let method = |n: usize| {
        if n <= crate::lindblad::AUTO_DENSE_MAX {
            GapMethod::Dense
        } else {
            GapMethod::Iterative(IterativeOptions {
                seed,
                ..Default::default()
            })
        }
    };
    match n_fock {
        NFock::Fixed(n) => {
            let op = build_lindbladian(params, n)?;
            let summary = dissipative_gap(&op, method(n))?;
            let top = summary.steady_state[(n - 1, n - 1)].re;
            Ok(NumericGap {
                n_fock: n,
                converged: top < TOP_POPULATION_TOL,
                summary,
                operator: op,
            })
        }
        NFock::Auto { start, step, max } => {
            let mut prev: Option<f64> = None;
            let mut n = start;
            loop {
                let op = build_lindbladian(params, n)?;
                let summary = dissipative_gap(&op, method(n))?;
                let top = summary.steady_state[(n - 1, n - 1)].re;
                let settled = prev.is_some_and(|g| {
                    (summary.gap - g).abs() < TRUNCATION_TOL * g.abs().max(f64::MIN_POSITIVE)
                });
                if (settled && top < TOP_POPULATION_TOL) || n + step > max {
                    return Ok(NumericGap {
                        n_fock: n,
                        converged: settled && top < TOP_POPULATION_TOL,
                        summary,
                        operator: op,
                    });
                }
                prev = Some(summary.gap);
                n += step.max(1);
            }
        }
    }
}

/// One grid point of a sweep; optional fields are empty when not requested
/// or not defined.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepRow {
    pub label: String,
    pub variable: String,
    pub value: f64,
    pub params_hash: String,
    pub alpha1: Option<C64>,
    pub alpha2: Option<C64>,
    pub alpha_u: Option<C64>,
    pub alpha_ss_sq: Option<f64>,
    pub is_12: Option<f64>,
    pub is_21: Option<f64>,
    pub rate_12: Option<f64>,
    pub rate_21: Option<f64>,
    pub gap_analytic: Option<f64>,
    /// `e^{−2|α_ss|²}`
    pub reference: Option<f64>,
    pub n_fock: Option<usize>,
    pub converged: Option<bool>,
    pub gap_numeric: Option<f64>,
    /// Metastable weight of the well around `α₂`.
    pub pop_2: Option<f64>,
    /// `gap·p_j`; empty when `p_j < RESOLVABLE_WEIGHT`.
    pub numeric_rate_12: Option<f64>,
    pub numeric_rate_21: Option<f64>,
    pub instanton_action: Option<f64>,
    pub error: Option<String>,
}

pub const CSV_HEADER: [&str; 28] = [
    "series",
    "sweep_var",
    "value",
    "params_hash",
    "alpha1_re",
    "alpha1_im",
    "alpha2_re",
    "alpha2_im",
    "alpha_u_re",
    "alpha_u_im",
    "alpha_ss_sq",
    "is_12",
    "is_21",
    "rate_12",
    "rate_21",
    "gap_analytic",
    "reference",
    "n_fock",
    "converged",
    "gap",
    "pop_2",
    "numeric_rate_12",
    "numeric_rate_21",
    "instanton_action",
    "error",
    "kappa_phi",
    "delta",
    "kerr",
];

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.12e}")).unwrap_or_default()
}

impl SweepRow {
    /// Fields in `CSV_HEADER` order with fixed formatting.
    pub fn record(&self, params: &SystemParams) -> Vec<String> {
        let re = |z: Option<C64>| num(z.map(|z| z.re));
        let im = |z: Option<C64>| num(z.map(|z| z.im));
        vec![
            self.label.clone(),
            self.variable.clone(),
            format!("{:.12e}", self.value),
            self.params_hash.clone(),
            re(self.alpha1),
            im(self.alpha1),
            re(self.alpha2),
            im(self.alpha2),
            re(self.alpha_u),
            im(self.alpha_u),
            num(self.alpha_ss_sq),
            num(self.is_12),
            num(self.is_21),
            num(self.rate_12),
            num(self.rate_21),
            num(self.gap_analytic),
            num(self.reference),
            self.n_fock.map(|n| n.to_string()).unwrap_or_default(),
            self.converged.map(|c| c.to_string()).unwrap_or_default(),
            num(self.gap_numeric),
            num(self.pop_2),
            num(self.numeric_rate_12),
            num(self.numeric_rate_21),
            num(self.instanton_action),
            self.error.clone().unwrap_or_default(),
            format!("{:.12e}", params.kappa_phi),
            format!("{:.12e}", params.delta),
            format!("{:.12e}", params.kerr),
        ]
    }
}

/// Row together with the parameters it was evaluated at.
#[derive(Debug, Clone)]
pub struct EvaluatedRow {
    pub row: SweepRow,
    pub params: SystemParams,
}

fn append_error(row: &mut SweepRow, e: impl fmt::Display) {
    let msg = e.to_string().replace([',', '\n'], ";");
    row.error = Some(match row.error.take() {
        Some(prev) => format!("{prev} | {msg}"),
        None => msg,
    });
}

fn evaluate(spec: &SweepSpec, value: f64) -> EvaluatedRow {
    let mut row = SweepRow {
        label: spec.label.clone(),
        variable: spec.variable.name().to_string(),
        value,
        ..Default::default()
    };
    let params = match spec.variable.apply(&spec.fixed, value) {
        Ok(p) => p,
        Err(e) => {
            row.params_hash = spec.fixed.provenance_hash(None);
            append_error(&mut row, e);
            return EvaluatedRow {
                row,
                params: spec.fixed.clone(),
            };
        }
    };
    row.params_hash = params.provenance_hash(None);

    let triple = fixed_points_general(&params).map(|s| s.triple());
    match &triple {
        Ok(Some((a1, a2, au))) => {
            row.alpha1 = Some(*a1);
            row.alpha2 = Some(*a2);
            row.alpha_u = Some(*au);
            let n = a1.norm_sqr();
            row.alpha_ss_sq = Some(n);
            row.reference = Some((-2.0 * n).exp());
        }
        Ok(None) => append_error(&mut row, "parameters are not bistable"),
        Err(e) => append_error(&mut row, e),
    }

    if spec.outputs.analytic_rate {
        match switching_rates(&params, spec.prefactor) {
            Ok(r) => {
                row.is_12 = Some(r.is_12);
                row.is_21 = Some(r.is_21);
                row.rate_12 = Some(r.rate_12);
                row.rate_21 = Some(r.rate_21);
                row.gap_analytic = Some(r.gap);
            }
            Err(KeldyshError::NotHtrs | KeldyshError::NotBistable) => {}
            Err(e) => append_error(&mut row, e),
        }
    }

    if spec.outputs.numeric_gap {
        match numeric_gap(&params, spec.n_fock, spec.seed) {
            Ok(g) => {
                row.params_hash = params.provenance_hash(Some(g.n_fock));
                row.n_fock = Some(g.n_fock);
                row.converged = Some(g.converged);
                row.gap_numeric = Some(g.summary.gap);
                if let Ok(Some((a1, a2, _))) = &triple {
                    match metastable_populations(&g.operator, &g.summary, [*a1, *a2]) {
                        Ok([p1, p2]) => {
                            let rate = |p: f64| (p >= RESOLVABLE_WEIGHT).then_some(g.summary.gap * p);
                            row.pop_2 = Some(p2);
                            row.numeric_rate_12 = rate(p2);
                            row.numeric_rate_21 = rate(p1);
                        }
                        Err(e) => append_error(&mut row, e),
                    }
                }
            }
            Err(e) => append_error(&mut row, e),
        }
    }

    if spec.outputs.instanton_action {
        if let Ok(Some((a1, _, au))) = &triple {
            let opts = ShootOptions {
                target: Some(*au),
                ..Default::default()
            };
            match shoot_instanton(&params, *a1, &opts) {
                Ok(s) => row.instanton_action = Some(s.action),
                Err(e) => append_error(&mut row, e),
            }
        }
    }
    EvaluatedRow { row, params }
}

/// Evaluates every grid point; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<EvaluatedRow>, SweepError> {
    spec.validate()?;
    Ok(spec.grid.par_iter().map(|&v| evaluate(spec, v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    LargestAlpha,
    LeastSquares,
}

impl FromStr for Anchor {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "largest_alpha" => Ok(Self::LargestAlpha),
            "least_squares" => Ok(Self::LeastSquares),
            _ => Err(SweepError::Unknown {
                kind: "anchor",
                name: s.to_string(),
            }),
        }
    }
}

/// Prefactor `c` in `numeric ≈ c·e^{iS}`.  `LargestAlpha` uses the last grid
/// point; `LeastSquares` fits `ln numeric = ln c + iS`.
pub fn fit_prefactor(analytic_is: &[f64], numeric: &[f64], anchor: Anchor) -> Result<f64, SweepError> {
    if analytic_is.len() != numeric.len() {
        return Err(SweepError::LengthMismatch(analytic_is.len(), numeric.len()));
    }
    let usable = |s: f64, g: f64| s.is_finite() && g.is_finite() && g > 0.0;
    match anchor {
        Anchor::LargestAlpha => {
            let (&s, &g) = analytic_is
                .iter()
                .zip(numeric)
                .next_back()
                .ok_or(SweepError::EmptyOverlap)?;
            if !usable(s, g) {
                return Err(SweepError::EmptyOverlap);
            }
            Ok(g / s.exp())
        }
        Anchor::LeastSquares => {
            let logs: Vec<f64> = analytic_is
                .iter()
                .zip(numeric)
                .filter(|(&s, &g)| usable(s, g))
                .map(|(&s, &g)| g.ln() - s)
                .collect();
            if logs.is_empty() {
                return Err(SweepError::EmptyOverlap);
            }
            Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Fig2,
    Fig3,
    Fig4,
    Custom,
}

impl FromStr for Protocol {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            "custom" => Ok(Self::Custom),
            _ => Err(SweepError::Unknown {
                kind: "protocol",
                name: s.to_string(),
            }),
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Kerr oscillator: detuning and single-photon drive scans around the
/// preset, in units of `κ₁`.  Grid values are `Δ` and `|Λ₁|`.
pub fn fig2_specs(seed: u64) -> Vec<SweepSpec> {
    let base = kerr_oscillator(1.0);
    let outputs = Outputs {
        analytic_rate: true,
        numeric_gap: true,
        instanton_action: false,
    };
    let n_fock = NFock::Auto {
        start: 60,
        step: 10,
        max: 120,
    };
    vec![
        SweepSpec {
            label: "detuning".into(),
            variable: SweepVariable::Detuning,
            grid: linspace(5.5, 7.0, 9).iter().map(|x| x / 2.0).collect(),
            fixed: base.clone(),
            outputs,
            n_fock,
            prefactor: None,
            seed,
        },
        SweepSpec {
            label: "drive1".into(),
            variable: SweepVariable::Drive1Mod,
            grid: linspace(9.0, 11.0, 9).iter().map(|x| x / 2.0).collect(),
            fixed: base,
            outputs,
            n_fock,
            prefactor: None,
            seed,
        },
    ]
}

/// Cat qubit with one imperfection at three strengths, scanned in `|α_ss|²`.
pub fn fig3_specs(seed: u64) -> Vec<SweepSpec> {
    let outputs = Outputs {
        analytic_rate: true,
        numeric_gap: true,
        instanton_action: false,
    };
    let grid = linspace(1.0, 6.0, 11);
    let mut specs = Vec::new();
    let cases: [(&str, [f64; 3], fn(f64) -> Imperfection); 3] = [
        ("detuning", [0.1, 0.2, 0.4], Imperfection::Detuning),
        ("kerr", [0.1, 0.2, 0.4], Imperfection::Kerr),
        ("lambda3", [0.05, 0.1, 0.2], |x| Imperfection::Lambda3(C64::new(x, 0.0))),
    ];
    for (name, strengths, make) in cases {
        for s in strengths {
            specs.push(SweepSpec {
                label: format!("{name}={s}"),
                variable: SweepVariable::AlphaSsSq,
                grid: grid.clone(),
                fixed: dissipative_cat(2.0, make(s)),
                outputs,
                n_fock: NFock::default(),
                prefactor: None,
                seed,
            });
        }
    }
    specs
}

/// Dephased cat at three dephasing rates, scanned in `|α_ss|²`.
pub fn fig4_specs(seed: u64) -> Vec<SweepSpec> {
    [0.1, 0.2, 0.4]
        .into_iter()
        .map(|kp| SweepSpec {
            label: format!("kappa_phi={kp}"),
            variable: SweepVariable::AlphaSsSq,
            grid: linspace(1.0, 5.0, 9),
            fixed: dephased_cat(4.0, kp, 0.01),
            outputs: Outputs {
                analytic_rate: false,
                numeric_gap: true,
                instanton_action: true,
            },
            n_fock: NFock::default(),
            prefactor: None,
            seed,
        })
        .collect()
}
