//! Batch front end: fixed points, rates, potentials, gaps, instantons and
//! parameter sweeps written as CSV.

mod config;
mod plot;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{ConfigFile, ParamOverrides};
use num_complex::Complex64 as C64;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use switchrate::instanton::{shoot_instanton, ShootOptions};
use switchrate::keldysh::{check_curl_condition, potential_phi, switching_rates, CurlKind};
use switchrate::lindblad::steady_state_moments;
use switchrate::meanfield::{fixed_points_general, residual};
use switchrate::sweep::{
    fig2_specs, fig3_specs, fig4_specs, fit_prefactor, numeric_gap, run_sweep, Anchor, NFock, Protocol,
    CSV_HEADER,
};
use switchrate::SystemParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] switchrate::ModelError),
    #[error(transparent)]
    MeanField(#[from] switchrate::MeanFieldError),
    #[error(transparent)]
    Keldysh(#[from] switchrate::KeldyshError),
    #[error(transparent)]
    Instanton(#[from] switchrate::InstantonError),
    #[error(transparent)]
    Sweep(#[from] switchrate::SweepError),
    #[error("{0} row(s) recorded errors")]
    RowErrors(usize),
}

#[derive(Parser)]
#[command(name = "switchrate", version, about = "Switching rates of bistable driven-dissipative modes")]
struct Cli {
    /// TOML file with `preset`, per-preset override sections, `[params]` and `[sweep]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// kerr_oscillator, dissipative_cat or dephased_cat.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// CSV output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    #[command(flatten)]
    overrides: ParamOverrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Fig2,
    Fig3,
    Fig4,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    LargestAlpha,
    LeastSquares,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    #[value(name = "12")]
    D12,
    #[value(name = "21")]
    D21,
    Gap,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-field fixed points with stability and residuals.
    FixedPoints(ParamArgs),
    /// Analytic action exponents, rates and gap.
    Rate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        prefactor: Option<f64>,
    },
    /// Potential on a rectangular grid.
    Potential {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        re_min: f64,
        #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
        re_max: f64,
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        im_min: f64,
        #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
        im_max: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Curl-free (detailed balance) conditions.
    CheckDb {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 2.5)]
        half_width: f64,
    },
    /// Numeric dissipative gap of the truncated Lindbladian.
    Gap {
        #[command(flatten)]
        params: ParamArgs,
        /// Fock truncation, or `auto`.
        #[arg(long, default_value = "auto")]
        n_fock: String,
    },
    /// Shoot the switching trajectory from a stable fixed point.
    Instanton {
        #[command(flatten)]
        params: ParamArgs,
        /// Start from the dim (`2`) instead of the bright (`1`) state.
        #[arg(long, default_value_t = 1)]
        from: u8,
        #[arg(long, default_value_t = 720)]
        n_theta: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Parameter sweep.
    Sweep {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// SVG rendering of the table.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Prefactor fit from a sweep CSV, per series.
    FitPrefactor {
        /// Sweep CSV.
        input: PathBuf,
        #[arg(long, value_enum, default_value = "largest-alpha")]
        anchor: AnchorArg,
        #[arg(long, value_enum, default_value = "gap")]
        direction: Direction,
    },
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(())
}

fn sci(x: f64) -> String {
    format!("{x:.12e}")
}

struct Ctx {
    cfg: ConfigFile,
    preset: Option<String>,
    out: Option<PathBuf>,
    seed: u64,
}

impl Ctx {
    fn params(&self, a: &ParamArgs) -> Result<SystemParams, CliError> {
        self.cfg.resolve(self.preset.as_deref(), &a.overrides)
    }

    fn emit(&self, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        if let Some(path) = &self.out {
            write_csv(path, header, rows)?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        cfg: ConfigFile::load(cli.config.as_deref())?,
        preset: cli.preset,
        out: cli.out,
        seed: cli.seed,
    };
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let io = |e| CliError::Io("stdout".into(), e);
    match cli.command {
        Command::FixedPoints(a) => {
            let p = ctx.params(&a)?;
            let set = fixed_points_general(&p)?;
            let header = ["re", "im", "stability", "eig1_re", "eig1_im", "eig2_re", "eig2_im", "residual"];
            let mut rows = Vec::new();
            writeln!(so, "{:>14} {:>14} {:>9} {:>24} {:>24} {:>10}", "re", "im", "stability", "eig1", "eig2", "residual").map_err(io)?;
            for q in &set.points {
                let stab = if q.is_stable() { "stable" } else { "unstable" };
                let r = residual(&p, q.z);
                writeln!(
                    so,
                    "{:>14.8} {:>14.8} {:>9} {:>24.6} {:>24.6} {:>10.2e}",
                    q.z.re, q.z.im, stab, q.jacobian_eigs[0], q.jacobian_eigs[1], r
                )
                .map_err(io)?;
                rows.push(vec![
                    sci(q.z.re),
                    sci(q.z.im),
                    stab.to_string(),
                    sci(q.jacobian_eigs[0].re),
                    sci(q.jacobian_eigs[0].im),
                    sci(q.jacobian_eigs[1].re),
                    sci(q.jacobian_eigs[1].im),
                    sci(r),
                ]);
            }
            writeln!(so, "bistable: {}", set.bistable).map_err(io)?;
            if let Some(d) = &set.diagnostic {
                writeln!(so, "diagnostic: {d}").map_err(io)?;
            }
            ctx.emit(&header, &rows)
        }
        Command::Rate { params, prefactor } => {
            let p = ctx.params(&params)?;
            let r = switching_rates(&p, prefactor)?;
            writeln!(so, "alpha1 {:.8}  alpha2 {:.8}  alpha_u {:.8}", r.alpha1, r.alpha2, r.alpha_u).map_err(io)?;
            writeln!(so, "iS_12 {:.10}  rate_12 {:.6e}", r.is_12, r.rate_12).map_err(io)?;
            writeln!(so, "iS_21 {:.10}  rate_21 {:.6e}", r.is_21, r.rate_21).map_err(io)?;
            writeln!(so, "gap {:.6e}  (prefactor {})", r.gap, r.prefactor_12).map_err(io)?;
            ctx.emit(
                &["is_12", "is_21", "rate_12", "rate_21", "gap", "prefactor"],
                &[vec![sci(r.is_12), sci(r.is_21), sci(r.rate_12), sci(r.rate_21), sci(r.gap), sci(r.prefactor_12)]],
            )
        }
        Command::Potential {
            params,
            re_min,
            re_max,
            im_min,
            im_max,
            points,
        } => {
            let p = ctx.params(&params)?;
            let n = points.max(2);
            let mut rows = Vec::with_capacity(n * n);
            let mut failed = 0;
            for i in 0..n {
                for k in 0..n {
                    let z = C64::new(
                        re_min + (re_max - re_min) * i as f64 / (n - 1) as f64,
                        im_min + (im_max - im_min) * k as f64 / (n - 1) as f64,
                    );
                    let phi = match potential_phi(&p, z) {
                        Ok(v) => sci(v),
                        Err(switchrate::KeldyshError::NotHtrs) => return Err(switchrate::KeldyshError::NotHtrs.into()),
                        Err(_) => {
                            failed += 1;
                            String::new()
                        }
                    };
                    rows.push(vec![sci(z.re), sci(z.im), phi]);
                }
            }
            writeln!(so, "{} grid points, {failed} at branch points", rows.len()).map_err(io)?;
            ctx.emit(&["re", "im", "phi"], &rows)
        }
        Command::CheckDb {
            params,
            samples,
            half_width,
        } => {
            let p = ctx.params(&params)?;
            writeln!(so, "{:<32} {:>12} {:>8} {:>8}", "condition", "max curl", "skipped", "verdict").map_err(io)?;
            let mut rows = Vec::new();
            for (name, kind) in [
                ("curl-free Z' = -D^-1 A", CurlKind::AnsatzZPrime),
                ("curl-free Z = D^-1(-A + dD)", CurlKind::FokkerPlanckZ),
            ] {
                let r = check_curl_condition(&p, kind, half_width, samples, ctx.seed)?;
                let verdict = if r.pass { "pass" } else { "fail" };
                writeln!(so, "{name:<32} {:>12.3e} {:>8} {verdict:>8}", r.max_curl, r.n_skipped).map_err(io)?;
                rows.push(vec![name.to_string(), sci(r.max_curl), r.n_skipped.to_string(), verdict.to_string()]);
            }
            ctx.emit(&["condition", "max_curl", "skipped", "verdict"], &rows)
        }
        Command::Gap { params, n_fock } => {
            let p = ctx.params(&params)?;
            let nf = if n_fock == "auto" {
                NFock::default()
            } else {
                NFock::Fixed(
                    n_fock
                        .parse()
                        .map_err(|_| CliError::Config(format!("--n-fock: expected integer or auto, got `{n_fock}`")))?,
                )
            };
            let g = numeric_gap(&p, nf, ctx.seed)?;
            let m = steady_state_moments(&g.summary);
            writeln!(so, "gap {:.10e}  imag {:.3e}  N {}", g.summary.gap, g.summary.gap_imag, g.n_fock).map_err(io)?;
            writeln!(so, "<a> {:.8}  <a^2> {:.8}  <n> {:.8}", m.a, m.a2, m.n).map_err(io)?;
            let note = if g.converged { "converged" } else { "NOT converged: raise the truncation" };
            writeln!(so, "truncation {note}; steady residual {:.2e}", g.summary.steady_residual).map_err(io)?;
            ctx.emit(
                &["n_fock", "gap", "gap_imag", "converged", "a_re", "a_im", "a2_re", "a2_im", "n"],
                &[vec![
                    g.n_fock.to_string(),
                    sci(g.summary.gap),
                    sci(g.summary.gap_imag),
                    g.converged.to_string(),
                    sci(m.a.re),
                    sci(m.a.im),
                    sci(m.a2.re),
                    sci(m.a2.im),
                    sci(m.n),
                ]],
            )
        }
        Command::Instanton {
            params,
            from,
            n_theta,
            tol,
        } => {
            let p = ctx.params(&params)?;
            let set = fixed_points_general(&p)?;
            let stable = set.stable();
            let start = stable
                .get(usize::from(from.saturating_sub(1)))
                .ok_or_else(|| CliError::Config(format!("no stable fixed point number {from}")))?
                .z;
            let target = set.unstable().first().map(|q| q.z);
            let opts = ShootOptions {
                n_theta,
                tol,
                target,
                ..Default::default()
            };
            let shot = shoot_instanton(&p, start, &opts)?;
            writeln!(
                so,
                "theta* {:.10}  closest approach {:.3e}  action {:.10}  drift {:.2e}",
                shot.theta, shot.closest_approach, shot.action, shot.trajectory.max_density_drift
            )
            .map_err(io)?;
            let t = &shot.trajectory;
            let rows: Vec<Vec<String>> = (0..t.states.len())
                .map(|k| {
                    let s = t.states[k];
                    vec![
                        sci(t.times[k]),
                        sci(s.b.re),
                        sci(s.b.im),
                        sci(s.b_bar.re),
                        sci(s.b_bar.im),
                        sci(s.b_q.re),
                        sci(s.b_q.im),
                        sci(s.b_q_bar.re),
                        sci(s.b_q_bar.im),
                        sci(t.actions[k]),
                        sci(t.drifts[k]),
                    ]
                })
                .collect();
            ctx.emit(
                &[
                    "t", "b_re", "b_im", "b_bar_re", "b_bar_im", "b_q_re", "b_q_im", "b_q_bar_re", "b_q_bar_im",
                    "action", "drift",
                ],
                &rows,
            )
        }
        Command::Sweep { params, protocol, plot } => {
            let specs = match protocol {
                ProtocolArg::Fig2 => fig2_specs(ctx.seed),
                ProtocolArg::Fig3 => fig3_specs(ctx.seed),
                ProtocolArg::Fig4 => fig4_specs(ctx.seed),
                ProtocolArg::Custom => vec![ctx.cfg.custom_sweep(ctx.params(&params)?, ctx.seed)?],
            };
            let name = match protocol {
                ProtocolArg::Fig2 => Protocol::Fig2,
                ProtocolArg::Fig3 => Protocol::Fig3,
                ProtocolArg::Fig4 => Protocol::Fig4,
                ProtocolArg::Custom => Protocol::Custom,
            };
            let t0 = Instant::now();
            let mut rows = Vec::new();
            let mut errors = 0;
            for spec in &specs {
                for r in run_sweep(spec)? {
                    if let Some(e) = &r.row.error {
                        errors += 1;
                        log_line(&format!("{} {}={}: {e}", spec.label, spec.variable, r.row.value));
                    }
                    rows.push(r.row.record(&r.params));
                }
            }
            writeln!(so, "{name:?}: {} rows, {errors} with errors, {:.1?}", rows.len(), t0.elapsed()).map_err(io)?;
            ctx.emit(&CSV_HEADER, &rows)?;
            if let Some(path) = plot {
                let header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
                std::fs::write(&path, plot::render_svg(&header, &rows))
                    .map_err(|e| CliError::Io(path.display().to_string(), e))?;
            }
            if errors > 0 {
                return Err(CliError::RowErrors(errors));
            }
            Ok(())
        }
        Command::FitPrefactor {
            input,
            anchor,
            direction,
        } => {
            let mut rdr = csv::Reader::from_path(&input)?;
            let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
            let col = |n: &str| {
                header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| CliError::Config(format!("{}: missing column `{n}`", input.display())))
            };
            let (series, is12, is21, g, r12, r21) = (
                col("series")?,
                col("is_12")?,
                col("is_21")?,
                col("gap")?,
                col("numeric_rate_12")?,
                col("numeric_rate_21")?,
            );
            let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
            let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let (s12, s21) = (num(&rec[is12]), num(&rec[is21]));
                let (analytic, numeric) = match direction {
                    Direction::D12 => (s12, num(&rec[r12])),
                    Direction::D21 => (s21, num(&rec[r21])),
                    Direction::Gap => ((0.5 * (s12.exp() + s21.exp())).ln(), num(&rec[g])),
                };
                let label = rec[series].to_string();
                match groups.iter_mut().find(|(l, _, _)| *l == label) {
                    Some((_, a, b)) => {
                        a.push(analytic);
                        b.push(numeric);
                    }
                    None => groups.push((label, vec![analytic], vec![numeric])),
                }
            }
            let anchor = match anchor {
                AnchorArg::LargestAlpha => Anchor::LargestAlpha,
                AnchorArg::LeastSquares => Anchor::LeastSquares,
            };
            let mut rows = Vec::new();
            for (label, a, b) in &groups {
                let cell = match fit_prefactor(a, b, anchor) {
                    Ok(c) => {
                        writeln!(so, "{label}: {c:.6e}").map_err(io)?;
                        sci(c)
                    }
                    Err(e) => {
                        writeln!(so, "{label}: {e}").map_err(io)?;
                        String::new()
                    }
                };
                rows.push(vec![label.clone(), cell]);
            }
            ctx.emit(&["series", "prefactor"], &rows)
        }
    }
}

fn log_line(msg: &str) {
    let _ = writeln!(std::io::stderr(), "{msg}");
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::RowErrors(_)) => {
            log_line(&format!("error: {e}"));
            ExitCode::from(2)
        }
        Err(e) => {
            log_line(&format!("error: {e}"));
            ExitCode::FAILURE
        }
    }
}
