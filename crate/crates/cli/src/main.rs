//! `nirsim`: command-line front end for the massless Nelson model simulator.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nirsim::config::RunConfig;
use nirsim::experiment::{run_experiment, ExperimentReport};
use nirsim::field::{g_hat0, sample_field_at_times, FieldSampleSpec};
use nirsim::kernels::{pair_kernel_momentum, FormFactor, KernelTable};
use nirsim::path::DiscretizedPath;
use nirsim::schrodinger::{solve_ground_state, GridSpec, PotentialSpec};
use nirsim::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "nirsim",
    version,
    about = "Path-integral Monte Carlo for the massless Nelson model"
)]
struct Cli {
    /// Configuration file in `key = value` format.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration entry, e.g. `--set e=0.5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair-kernel table and probes.
    Kernels {
        #[command(subcommand)]
        action: KernelsAction,
    },
    /// Free particle ground state.
    Schrodinger {
        #[command(subcommand)]
        action: SchrodingerAction,
    },
    /// Sample the Gibbs path measure at one window.
    Sample(SampleArgs),
    /// Conditional field mean and Gaussian field samples.
    Field {
        #[command(subcommand)]
        action: FieldAction,
    },
    /// Run a diagnostic and report its checks.
    Diagnose {
        /// One of divergence, convergence, localization, decay, spectral, ir-scan, kernels.
        name: String,
        /// Exit with a nonzero status when any check fails.
        #[arg(long)]
        assert: bool,
    },
    /// Run any experiment by name.
    Run { name: String },
    /// Print the effective configuration in canonical form.
    Config,
}

#[derive(Subcommand)]
enum KernelsAction {
    /// Build the interpolation table and write it in binary form.
    Table {
        #[arg(long)]
        out: PathBuf,
        /// Largest pair distance; defaults to twice the ground-state domain.
        #[arg(long)]
        r_max: Option<f64>,
        /// Largest time lag; defaults to `2T`.
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Print `r,t,W` for every pair of the given distances and lags.
    Probe {
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
        /// Interpolate from a saved table instead of direct quadrature.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SchrodingerAction {
    /// Solve for the ground state, print a JSON summary and optionally save it.
    Solve {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        step: Option<f64>,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    e: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FieldAction {
    /// `k, Re ĝ, Im ĝ` of the time-zero conditional mean along the first axis,
    /// for the path resting at `offset` on the first axis.
    Mean {
        #[arg(long, default_value_t = 4.0)]
        k_max: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
    },
    /// Joint draws of `ξ_t(h)` for Gaussian test functions `ĥ = exp(-w²k²/2)`.
    Sample {
        /// Widths `w` of the test functions.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        widths: Vec<f64>,
        /// Sampling times; bead times of the configured path grid.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Condition on the path resting at the origin instead of the free field.
        #[arg(long)]
        resting: bool,
    },
}

fn key(line: &str) -> Option<&str> {
    let line = line.split('#').next()?.trim();
    line.split_once('=').map(|(k, _)| k.trim())
}

/// Config file text with `--set` entries (and command flags) replacing lines of the same key.
fn load_config(cli: &Cli, extra: &[(String, String)]) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut entries: Vec<(String, String)> = Vec::new();
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::Config(vec![nirsim::ConfigViolation {
                key: o.clone(),
                message: "expected KEY=VALUE".into(),
            }]));
        };
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    entries.extend(extra.iter().cloned());
    let mut text: String = base
        .lines()
        .filter(|l| key(l).is_none_or(|k| !entries.iter().any(|(e, _)| e == k)))
        .map(|l| format!("{l}\n"))
        .collect();
    for (k, v) in &entries {
        let _ = writeln!(text, "{k} = {v}");
    }
    let cfg = RunConfig::parse(&text)?;
    if cfg.params.e > 1.0 {
        log::warn!(
            "coupling e = {} exceeds 1; estimators remain valid but variances grow quickly with e",
            cfg.params.e
        );
    }
    Ok(cfg)
}

fn print_report(report: &ExperimentReport, dir: &Path) {
    println!(
        "{} (config {}, version {})",
        report.experiment, report.config_hash, report.code_version
    );
    for c in &report.checks {
        println!(
            "  {} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    for f in &report.files {
        println!("  wrote {}", dir.join(&report.experiment).join(f).display());
    }
}

fn csv_out(header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{header}")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Kernels { action } => {
            let cfg = load_config(cli, &[])?;
            match action {
                KernelsAction::Table { out, r_max, t_max } => {
                    let r_max = match r_max {
                        Some(r) => *r,
                        None => {
                            let pot = PotentialSpec::from_params(&cfg.params)?;
                            2.0 * solve_ground_state(&pot, cfg.params.d, GridSpec::default())?
                                .r_max()
                        }
                    };
                    let t_max = t_max.unwrap_or(2.0 * cfg.path.t_half);
                    let table =
                        KernelTable::build(&cfg.params, r_max, t_max, cfg.table_resolution)?;
                    table.save(out)?;
                    eprintln!(
                        "wrote {} ({} x {} nodes)",
                        out.display(),
                        table.r_grid().len(),
                        table.t_grid().len()
                    );
                }
                KernelsAction::Probe { r, t, table } => {
                    let table = table.as_deref().map(KernelTable::load).transpose()?;
                    let mut rows = Vec::new();
                    for &ri in r {
                        for &ti in t {
                            let w = match &table {
                                Some(tb) => tb.interpolate(ri, ti).ok_or_else(|| {
                                    Error::Domain(format!(
                                        "(r, t) = ({ri}, {ti}) outside the table"
                                    ))
                                })?,
                                None => pair_kernel_momentum(ri, ti, &cfg.params)?,
                            };
                            rows.push(vec![ri, ti, w]);
                        }
                    }
                    csv_out("r,t,W", &rows).map_err(stdout_err)?;
                }
            }
            Ok(true)
        }
        Command::Schrodinger {
            action: SchrodingerAction::Solve { out, step },
        } => {
            let cfg = load_config(cli, &[])?;
            let pot = PotentialSpec::from_params(&cfg.params)?;
            let mut grid = GridSpec::default();
            if let Some(s) = step {
                grid.step = *s;
            }
            let gs = solve_ground_state(&pot, cfg.params.d, grid)?;
            let s = gs.summary();
            let json = serde_json::json!({
                "E_p": s.energy,
                "r_max": s.r_max,
                "grid_step": s.grid_step,
                "residual": s.residual,
            });
            println!("{json}");
            if let Some(p) = out {
                gs.save(p)?;
            }
            Ok(true)
        }
        Command::Sample(a) => {
            let mut extra = Vec::new();
            let mut push = |k: &str, v: Option<String>| {
                if let Some(v) = v {
                    extra.push((k.to_string(), v));
                }
            };
            push("T", a.t.map(|v| format!("{v:?}")));
            push("dt", a.dt.map(|v| format!("{v:?}")));
            push("e", a.e.map(|v| format!("{v:?}")));
            push("sigma", a.sigma.map(|v| format!("{v:?}")));
            push("pot_alpha", a.alpha.map(|v| format!("{v:?}")));
            push("chains", a.chains.map(|v| v.to_string()));
            push("steps", a.steps.map(|v| v.to_string()));
            push("seed", a.seed.map(|v| v.to_string()));
            push(
                "output_dir",
                a.out.as_ref().map(|p| p.display().to_string()),
            );
            // the window must also be a valid curve point
            if let Some(t) = a.t {
                push("T_list", Some(format!("{t:?}")));
            }
            let cfg = load_config(cli, &extra)?;
            let report = run_experiment(&cfg, "sample")?;
            print_report(&report, &cfg.output_dir);
            Ok(true)
        }
        Command::Field { action } => {
            let cfg = load_config(cli, &[])?;
            let n_beads = cfg.path.n_beads();
            match action {
                FieldAction::Mean { k_max, n, offset } => {
                    let path = DiscretizedPath::from_fn(n_beads, cfg.params.d, |_| {
                        let mut q = vec![0.0; cfg.params.d];
                        q[0] = *offset;
                        q
                    });
                    let mut rows = Vec::with_capacity(*n);
                    for i in 1..=*n {
                        let k = k_max * i as f64 / *n as f64;
                        let mut kv = vec![0.0; cfg.params.d];
                        kv[0] = k;
                        let g = g_hat0(&kv, &path, &cfg.path, &cfg.params)?;
                        rows.push(vec![k, g.re, g.im]);
                    }
                    csv_out("k,re_g,im_g", &rows).map_err(stdout_err)?;
                }
                FieldAction::Sample {
                    widths,
                    times,
                    count,
                    resting,
                } => {
                    let spec = FieldSampleSpec {
                        tests: widths.iter().map(|&w| FormFactor::gaussian(w)).collect(),
                        times: times.clone(),
                        grid: None,
                    };
                    let path = DiscretizedPath::zeros(n_beads, cfg.params.d);
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mcmc.seed);
                    let draws = sample_field_at_times(
                        &spec,
                        resting.then_some(&path),
                        &cfg.path,
                        &cfg.params,
                        *count,
                        &mut rng,
                    )?;
                    csv_out(&spec.labels().join(","), &draws).map_err(stdout_err)?;
                }
            }
            Ok(true)
        }
        Command::Diagnose { name, assert } => {
            let cfg = load_config(cli, &[])?;
            let report = run_experiment(&cfg, name)?;
            print_report(&report, &cfg.output_dir);
            Ok(!assert || report.passed())
        }
        Command::Run { name } => {
            let cfg = load_config(cli, &[])?;
            let report = run_experiment(&cfg, name)?;
            print_report(&report, &cfg.output_dir);
            Ok(true)
        }
        Command::Config => {
            print!("{}", load_config(cli, &[])?.serialize());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
