use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use glchains::chains::PolyChain;
use glchains::energy::{self, SolverOptions, StepRule};
use glchains::experiment::{self, ExperimentConfig, THREADS_ENV};
use glchains::fields::{make_boundary_datum, DatumSpec, Field, Simplex};
use glchains::lowerbound::{self, BallParams};
use glchains::singular;
use glchains::{GroupElement, GroupKind, ManifoldKind, TargetManifold};

#[derive(Parser)]
#[command(
    name = "glchains",
    version,
    about = "Ginzburg-Landau energies and their singular chains"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full experiment from a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Minimize the energy starting from a field.
    Minimize {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 20000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        grad_tol: f64,
        /// Use a fixed step instead of backtracking.
        #[arg(long)]
        fixed_step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Extract the singular chain of a field.
    Extract {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        eps: f64,
        /// Grid size, or `auto` for the default from the field size and ε.
        #[arg(long, default_value = "auto")]
        h: String,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated shift `y`.
        #[arg(long)]
        y: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// CSV with offset, skeleton distance, plaquette counts and mass.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Certify an energy lower bound by the ball construction.
    Certify {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 3.0)]
        n_exp: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert a dipole `σ ∂⟦T⟧` into a field.
    Dipole {
        #[arg(long)]
        field: PathBuf,
        /// Vertices of T as `x,y[,z];x,y[,z];...`.
        #[arg(long, allow_hyphen_values = true)]
        simplex: String,
        /// Comma-separated class coordinates.
        #[arg(long, allow_hyphen_values = true)]
        class: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a boundary-datum field from a JSON descriptor (file or inline).
    MakeDatum {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value = "circle")]
        target: ManifoldKind,
        #[arg(long)]
        theta0: Option<f64>,
        #[arg(long)]
        delta_star: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale a field by `min(dist(x, spt S)/ε, 1)`.
    Regularize {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimal connection of a boundary 0-chain, or the prediction of a config.
    Plateau {
        #[arg(long, conflicts_with = "config")]
        chain: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the group norm table.
    NormTable {
        #[arg(long, default_value = "Z_circle")]
        group: GroupKind,
        #[arg(long, default_value_t = 4)]
        range: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {t:?}"))
        })
        .collect()
}

fn parse_ints(s: &str) -> Result<Vec<i64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<i64>()
                .with_context(|| format!("bad integer {t:?}"))
        })
        .collect()
}

fn read_field(p: &Path) -> Result<Field> {
    Field::read_glf(p).with_context(|| format!("reading {}", p.display()))
}

fn write_json<T: serde::Serialize>(p: &Path, v: &T) -> Result<()> {
    fs::write(p, serde_json::to_string_pretty(v)?)
        .with_context(|| format!("writing {}", p.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let report = experiment::run_experiment(&cfg)?;
            print!("{}", report.summary_csv());
            for r in &report.rows {
                if let Some(e) = &r.error {
                    eprintln!("ε = {}: {e}", r.eps);
                }
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(report.all_ok())
        }
        Cmd::Minimize {
            field,
            eps,
            max_iters,
            grad_tol,
            fixed_step,
            out,
            trace,
        } => {
            let u = read_field(&field)?;
            let mut opts = SolverOptions {
                max_iters,
                grad_tol,
                ..Default::default()
            };
            if let Some(a) = fixed_step {
                opts.step_rule = StepRule::Fixed;
                opts.initial_step = a;
            }
            let res = energy::minimize(&u, eps, &opts)?;
            res.field.write_glf(&out)?;
            if let Some(t) = trace {
                fs::write(&t, experiment::trace_csv(&res.trace))?;
            }
            println!("{}", serde_json::to_string_pretty(&res.report)?);
            println!(
                "iterations {} converged {} stalled {}",
                res.iterations, res.converged, res.stalled
            );
            Ok(true)
        }
        Cmd::Extract {
            field,
            eps,
            h,
            trials,
            seed,
            y,
            out,
            report,
        } => {
            let u = read_field(&field)?;
            let y = match y {
                Some(s) => parse_floats(&s)?,
                None => vec![0.0; u.m()],
            };
            if y.len() != u.m() {
                bail!("shift needs {} coordinates", u.m());
            }
            let h = match h.as_str() {
                "auto" => singular::default_grid_size(&u, eps),
                v => v
                    .parse::<f64>()
                    .with_context(|| format!("bad grid size {v:?}"))?,
            };
            let g = singular::choose_grid(&u, h, trials, eps, seed, singular::SKELETON_PENALTY)?;
            let chain = singular::extract_chain(&u, &g, &y)?;
            chain.write_json(&out)?;
            let r = singular::extract_report(&u, &g, &chain);
            if let Some(p) = report {
                let off: Vec<String> = r.offset[..u.dims].iter().map(|x| x.to_string()).collect();
                let csv = format!(
                    "offset,skeleton_max_dist,n_plaquettes,n_nonzero,mass\n{},{},{},{},{}\n",
                    off.join(";"),
                    r.skeleton_max_dist,
                    r.n_plaquettes,
                    r.n_nonzero,
                    r.mass
                );
                fs::write(&p, csv)?;
            }
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(true)
        }
        Cmd::Certify {
            field,
            eps,
            tau,
            c0,
            n_exp,
            out,
        } => {
            let u = read_field(&field)?;
            let mut p = BallParams::with_c0(c0, n_exp);
            p.tau = tau;
            let cert = lowerbound::ball_construction(&u, eps, &p)?;
            write_json(&out, &cert)?;
            println!(
                "bound {} energy {} class {}",
                cert.certified_bound, cert.measured_energy, cert.total_class
            );
            Ok(true)
        }
        Cmd::Dipole {
            field,
            simplex,
            class,
            out,
        } => {
            let u = read_field(&field)?;
            let vertices = simplex
                .split(';')
                .map(|v| {
                    let c = parse_floats(v)?;
                    if c.len() != u.dims {
                        bail!("vertex {v:?} needs {} coordinates", u.dims);
                    }
                    let mut p = [0.0; 3];
                    p[..c.len()].copy_from_slice(&c);
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()?;
            let sigma = GroupElement::from_ints(u.target.group().kind, &parse_ints(&class)?)?;
            let w = u.insert_dipole(&Simplex { vertices }, sigma)?;
            w.write_glf(&out)?;
            Ok(true)
        }
        Cmd::MakeDatum {
            spec,
            target,
            theta0,
            delta_star,
            out,
        } => {
            let text = if Path::new(&spec).exists() {
                fs::read_to_string(&spec)?
            } else {
                spec
            };
            let spec: DatumSpec =
                serde_json::from_str(&text).context("parsing datum descriptor")?;
            let t = TargetManifold::with_params(target, theta0, delta_star)?;
            make_boundary_datum(&spec, t)?.write_glf(&out)?;
            Ok(true)
        }
        Cmd::Regularize {
            field,
            chain,
            eps,
            out,
        } => {
            let u = read_field(&field)?;
            let s = PolyChain::read_json(&chain)?;
            u.regularize(&s, eps).write_glf(&out)?;
            Ok(true)
        }
        Cmd::Plateau { chain, config, out } => {
            let result = match (chain, config) {
                (Some(c), _) => PolyChain::read_json(&c)?.minimal_connection()?,
                (None, Some(c)) => experiment::predict_plateau(&ExperimentConfig::from_path(&c)?)?,
                (None, None) => bail!("plateau needs --chain or --config"),
            };
            result.write_json(&out)?;
            println!("mass {}", result.mass());
            Ok(true)
        }
        Cmd::NormTable { group, range, out } => {
            let csv = experiment::norm_table_csv(&experiment::norm_table(group, range)?);
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}
