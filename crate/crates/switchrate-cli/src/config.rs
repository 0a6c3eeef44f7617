//! TOML configuration: parameter overrides per preset and the custom sweep.

use crate::CliError;
use clap::Args;
use num_complex::Complex64 as C64;
use serde::Deserialize;
use std::path::Path;
use switchrate::model::{Preset, SystemParams};
use switchrate::sweep::{NFock, Outputs, SweepSpec, SweepVariable};

/// Parameter overrides; complex drives take `(re, im)` or `(mod, phase)`.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub kerr: Option<f64>,
    #[arg(long)]
    pub kappa1: Option<f64>,
    #[arg(long)]
    pub kappa2: Option<f64>,
    #[arg(long)]
    pub kappa_phi: Option<f64>,
    #[arg(long)]
    pub lambda1_re: Option<f64>,
    #[arg(long)]
    pub lambda1_im: Option<f64>,
    #[arg(long)]
    pub lambda1_mod: Option<f64>,
    #[arg(long)]
    pub lambda1_phase: Option<f64>,
    #[arg(long)]
    pub lambda2_re: Option<f64>,
    #[arg(long)]
    pub lambda2_im: Option<f64>,
    #[arg(long)]
    pub lambda2_mod: Option<f64>,
    #[arg(long)]
    pub lambda2_phase: Option<f64>,
    #[arg(long)]
    pub lambda3_re: Option<f64>,
    #[arg(long)]
    pub lambda3_im: Option<f64>,
    #[arg(long)]
    pub lambda3_mod: Option<f64>,
    #[arg(long)]
    pub lambda3_phase: Option<f64>,
    #[arg(long)]
    pub alpha0_sq_re: Option<f64>,
    #[arg(long)]
    pub alpha0_sq_im: Option<f64>,
    #[arg(long)]
    pub unit: Option<String>,
}

fn set_complex(
    name: &'static str,
    z: &mut C64,
    re: Option<f64>,
    im: Option<f64>,
    modulus: Option<f64>,
    phase: Option<f64>,
) -> Result<(), CliError> {
    let rect = re.is_some() || im.is_some();
    let pol = modulus.is_some() || phase.is_some();
    if rect && pol {
        return Err(CliError::Config(format!(
            "{name}: give either re/im or mod/phase, not both"
        )));
    }
    if rect {
        *z = C64::new(re.unwrap_or(z.re), im.unwrap_or(z.im));
    } else if pol {
        *z = C64::from_polar(modulus.unwrap_or(z.norm()), phase.unwrap_or(z.arg()));
    }
    Ok(())
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut SystemParams) -> Result<(), CliError> {
        let reals = [
            (self.delta, &mut p.delta),
            (self.kerr, &mut p.kerr),
            (self.kappa1, &mut p.kappa1),
            (self.kappa2, &mut p.kappa2),
            (self.kappa_phi, &mut p.kappa_phi),
        ];
        for (v, slot) in reals {
            if let Some(v) = v {
                *slot = v;
            }
        }
        set_complex(
            "lambda1",
            &mut p.lambda1,
            self.lambda1_re,
            self.lambda1_im,
            self.lambda1_mod,
            self.lambda1_phase,
        )?;
        set_complex(
            "lambda2",
            &mut p.lambda2,
            self.lambda2_re,
            self.lambda2_im,
            self.lambda2_mod,
            self.lambda2_phase,
        )?;
        set_complex(
            "lambda3",
            &mut p.lambda3,
            self.lambda3_re,
            self.lambda3_im,
            self.lambda3_mod,
            self.lambda3_phase,
        )?;
        if self.alpha0_sq_re.is_some() || self.alpha0_sq_im.is_some() {
            let old = p.alpha0_sq.unwrap_or_default();
            p.alpha0_sq = Some(C64::new(
                self.alpha0_sq_re.unwrap_or(old.re),
                self.alpha0_sq_im.unwrap_or(old.im),
            ));
        }
        if let Some(u) = &self.unit {
            p.unit = u.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NFockSetting {
    Fixed(usize),
    Keyword(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub label: Option<String>,
    pub variable: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    pub outputs: Option<Vec<String>>,
    pub n_fock: Option<NFockSetting>,
    pub n_fock_start: Option<usize>,
    pub n_fock_step: Option<usize>,
    pub n_fock_max: Option<usize>,
    pub prefactor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub params: Option<ParamOverrides>,
    pub kerr_oscillator: Option<ParamOverrides>,
    pub dissipative_cat: Option<ParamOverrides>,
    pub dephased_cat: Option<ParamOverrides>,
    pub sweep: Option<SweepSection>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }

    fn section(&self, preset: Preset) -> Option<&ParamOverrides> {
        match preset {
            Preset::KerrOscillator => self.kerr_oscillator.as_ref(),
            Preset::DissipativeCat => self.dissipative_cat.as_ref(),
            Preset::DephasedCat => self.dephased_cat.as_ref(),
        }
    }

    /// Preset defaults, then its config section, then `[params]`, then flags.
    pub fn resolve(&self, preset_flag: Option<&str>, flags: &ParamOverrides) -> Result<SystemParams, CliError> {
        let name = preset_flag.or(self.preset.as_deref());
        let mut p = match name {
            Some(n) => {
                let preset: Preset = n.parse()?;
                let mut p = preset.params();
                if let Some(s) = self.section(preset) {
                    s.apply(&mut p)?;
                }
                p
            }
            None => SystemParams::default(),
        };
        if let Some(s) = &self.params {
            s.apply(&mut p)?;
        }
        flags.apply(&mut p)?;
        p.validate()?;
        Ok(p)
    }

    pub fn custom_sweep(&self, fixed: SystemParams, seed: u64) -> Result<SweepSpec, CliError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("custom protocol needs a [sweep] section".into()))?;
        let variable: SweepVariable = s
            .variable
            .as_deref()
            .ok_or_else(|| CliError::Config("[sweep] needs `variable`".into()))?
            .parse()?;
        let grid = match (&s.grid, s.start, s.stop, s.points) {
            (Some(g), None, None, None) => g.clone(),
            (None, Some(a), Some(b), Some(n)) if n >= 2 => {
                (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
            }
            _ => {
                return Err(CliError::Config(
                    "[sweep] needs either `grid` or `start`, `stop` and `points` (>= 2)".into(),
                ))
            }
        };
        let mut outputs = Outputs::default();
        for o in s.outputs.clone().unwrap_or_else(|| vec!["analytic_rate".into()]) {
            match o.as_str() {
                "analytic_rate" => outputs.analytic_rate = true,
                "numeric_gap" => outputs.numeric_gap = true,
                "instanton_action" => outputs.instanton_action = true,
                other => return Err(CliError::Config(format!("unknown output `{other}`"))),
            }
        }
        let auto = NFock::default();
        let NFock::Auto { start, step, max } = auto else {
            unreachable!("default truncation is automatic")
        };
        let n_fock = match &s.n_fock {
            None => NFock::Auto {
                start: s.n_fock_start.unwrap_or(start),
                step: s.n_fock_step.unwrap_or(step),
                max: s.n_fock_max.unwrap_or(max),
            },
            Some(NFockSetting::Fixed(n)) => NFock::Fixed(*n),
            Some(NFockSetting::Keyword(k)) if k == "auto" => NFock::Auto {
                start: s.n_fock_start.unwrap_or(start),
                step: s.n_fock_step.unwrap_or(step),
                max: s.n_fock_max.unwrap_or(max),
            },
            Some(NFockSetting::Keyword(k)) => {
                return Err(CliError::Config(format!("n_fock must be an integer or \"auto\", got `{k}`")))
            }
        };
        let spec = SweepSpec {
            label: s.label.clone().unwrap_or_else(|| "custom".into()),
            variable,
            grid,
            fixed,
            outputs,
            n_fock,
            prefactor: s.prefactor,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layered_resolution() {
        let cfg: ConfigFile = toml::from_str(
            r#"
            preset = "dissipative_cat"
            [dissipative_cat]
            kerr = 0.2
            lambda3_mod = 0.1
            lambda3_phase = 0.0
            [kerr_oscillator]
            kerr = 9.0
            "#,
        )
        .unwrap();
        let flags = ParamOverrides {
            delta: Some(0.05),
            ..Default::default()
        };
        let p = cfg.resolve(None, &flags).unwrap();
        assert_eq!(p.kerr, 0.2);
        assert_eq!(p.delta, 0.05);
        assert!((p.lambda3 - C64::new(0.1, 0.0)).norm() < 1e-15);
        assert_eq!(p.kappa1, 0.01);
    }

    #[test]
    fn conflicting_forms_are_rejected() {
        let o = ParamOverrides {
            lambda1_re: Some(1.0),
            lambda1_mod: Some(1.0),
            ..Default::default()
        };
        assert!(o.apply(&mut SystemParams::default()).is_err());
        assert!(toml::from_str::<ConfigFile>("bogus = 1").is_err());
    }

    #[test]
    fn custom_sweep_section() {
        let cfg: ConfigFile = toml::from_str(
            r#"
            [sweep]
            variable = "detuning"
            start = 0.0
            stop = 1.0
            points = 5
            outputs = ["analytic_rate", "numeric_gap"]
            n_fock = 20
            "#,
        )
        .unwrap();
        let spec = cfg.custom_sweep(SystemParams { kappa2: 1.0, ..Default::default() }, 3).unwrap();
        assert_eq!(spec.grid, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(spec.n_fock, NFock::Fixed(20));
        assert!(spec.outputs.numeric_gap && !spec.outputs.instanton_action);
    }
}
