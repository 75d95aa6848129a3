use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use iocrelax::demos::{generate_from_optimum, load_demoset, make_noise_spec, save_demoset};
use iocrelax::estimators::{
    estimate_ep, estimate_exact_ep, estimate_exact_kkt, estimate_kkt, estimate_tr, rmse, Diagnostics, EpOptions,
    Method, DEFAULT_ACTIVATION_TOL,
};
use iocrelax::solve_ocp;
use iocrelax::systems::{make_system, SystemParams};
use iocrelax_bench::config::default_cutoff;
use iocrelax_bench::{
    emit_results, read_results, run_benchmark, run_robustness, run_verify, AnchorPolicy, ExperimentConfig, Format,
    Robustness, VerifyOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "iocrelax",
    version,
    about = "Inverse optimal control with constraint relaxation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a benchmark system and write noisy demonstrations.
    Generate {
        #[arg(long)]
        system: String,
        /// Input noise level as a fraction of the mean optimal input.
        #[arg(long, default_value_t = 0.0)]
        pct: f64,
        #[arg(long = "D", default_value_t = 10)]
        demos: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate objective weights from a demonstration file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the system recorded in the file.
        #[arg(long)]
        system: Option<String>,
        /// KKT, TR, EP, EXACT_KKT or EXACT_EP.
        #[arg(long, default_value = "EP")]
        method: String,
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long, default_value = "fixed")]
        anchor: AnchorPolicy,
        #[arg(long, default_value_t = 0)]
        anchor_index: usize,
        /// Write the estimate as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noise sweep over systems and estimators.
    Bench(ExperimentArgs),
    /// Noise sweep with an uncertain estimation-side model parameter.
    Robustness {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "car_length")]
        parameter: String,
        /// Relative half-width of the uniform perturbation.
        #[arg(long, default_value_t = 0.05)]
        half_width: f64,
    },
    /// Run the self-verification suite; exits nonzero on any failure.
    Verify {
        /// Monte Carlo draws for the smoothed-penalty check.
        #[arg(long)]
        psi_draws: Option<usize>,
        #[arg(long, hide = true)]
        inject_penalty_sign_error: bool,
    },
    /// Convert a result file between formats.
    Emit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// System name; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    system: Vec<String>,
    /// Noise levels as fractions; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pct: Vec<f64>,
    #[arg(long = "D")]
    demos: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    anchor: Option<AnchorPolicy>,
    /// TOML file with the same fields; its values override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

impl ExperimentArgs {
    fn config(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if !self.system.is_empty() {
            cfg.systems = self.system.clone();
        }
        if !self.pct.is_empty() {
            cfg.pcts = self.pct.clone();
        }
        cfg.demos = self.demos.unwrap_or(cfg.demos);
        cfg.repetitions = self.reps.unwrap_or(cfg.repetitions);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.cutoff = self.cutoff.or(cfg.cutoff);
        cfg.anchor = self.anchor.unwrap_or(cfg.anchor);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = cfg.overlay_toml(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn finish(&self, table: &iocrelax_bench::ResultTable) -> Result<()> {
        print!("{}", table.render());
        if let Some(out) = &self.out {
            let format = self.format.unwrap_or_else(|| Format::from_path(out));
            emit_results(table, out, format)?;
            eprintln!("wrote {}", out.display());
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EstimateReport {
    system: String,
    method: Method,
    theta: Vec<f64>,
    rmse: Option<f64>,
    multipliers: Vec<f64>,
    residual_norm: f64,
    diagnostics: Diagnostics,
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(match s.to_ascii_uppercase().replace('-', "_").as_str() {
        "KKT" => Method::Kkt,
        "TR" => Method::Tr,
        "EP" => Method::Ep,
        "EXACT_KKT" => Method::ExactKkt,
        "EXACT_EP" => Method::ExactEp,
        other => bail!("unknown method `{other}`"),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            system,
            pct,
            demos,
            seed,
            out,
        } => {
            let spec = make_system(&system, &SystemParams::default())?;
            let theta = spec.theta_star.clone().context("system has no reference weights")?;
            let sol = solve_ocp(&spec, &theta, None)?;
            let noise = make_noise_spec(&spec, &sol.traj.u, pct)?.with_seed(seed);
            let ds = generate_from_optimum(&spec, &theta, &sol.traj, &noise, demos)?;
            save_demoset(&ds, &out)?;
            eprintln!("wrote {demos} demonstrations of {system} to {}", out.display());
        }
        Command::Estimate {
            input,
            system,
            method,
            cutoff,
            anchor,
            anchor_index,
            out,
        } => {
            let ds = load_demoset(&input)?;
            let system = system.unwrap_or_else(|| ds.spec_name.clone());
            let spec = make_system(&system, &SystemParams::default())?;
            let truth = ds
                .truth
                .as_ref()
                .map(|t| t.theta.clone())
                .or_else(|| spec.theta_star.clone())
                .context("no reference weights to anchor on")?;
            let anchor = anchor.anchor(anchor_index, &truth)?;
            let method = parse_method(&method)?;
            let res = match method {
                Method::Kkt => estimate_kkt(&spec, &ds, &anchor)?,
                Method::Tr => estimate_tr(&spec, &ds, &anchor)?,
                Method::Ep => {
                    let c = cutoff.unwrap_or_else(|| default_cutoff(ds.noise.pct.unwrap_or(1.0)));
                    estimate_ep(&spec, &ds, &EpOptions::with_cutoff(c), &anchor)?
                }
                Method::ExactKkt | Method::ExactEp => {
                    if ds.len() != 1 {
                        bail!("{method} expects a single optimal demonstration, found {}", ds.len());
                    }
                    if method == Method::ExactKkt {
                        estimate_exact_kkt(&spec, &ds.demos[0], DEFAULT_ACTIVATION_TOL, &anchor)?
                    } else {
                        estimate_exact_ep(&spec, &ds.demos[0], &anchor)?
                    }
                }
            };
            let err = ds
                .truth
                .as_ref()
                .map(|t| rmse(res.theta.as_slice(), t.theta.as_slice()))
                .transpose()?;
            println!("method  {method}");
            println!("theta   {:?}", res.theta.as_slice());
            if let Some(e) = err {
                println!("rmse    {e:.6}");
            }
            for w in &res.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(out) = out {
                let report = EstimateReport {
                    system,
                    method,
                    theta: res.theta.as_slice().to_vec(),
                    rmse: err,
                    multipliers: res.multipliers.as_slice().to_vec(),
                    residual_norm: res.residual_norm,
                    diagnostics: res.diagnostics,
                };
                std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
        Command::Bench(args) => {
            let cfg = args.config(ExperimentConfig::default())?;
            args.finish(&run_benchmark(&cfg)?)?;
        }
        Command::Robustness {
            exp,
            parameter,
            half_width,
        } => {
            let base = ExperimentConfig {
                robustness: Some(Robustness { parameter, half_width }),
                ..ExperimentConfig::robustness_default()
            };
            let cfg = exp.config(base)?;
            exp.finish(&run_robustness(&cfg)?)?;
        }
        Command::Verify {
            psi_draws,
            inject_penalty_sign_error,
        } => {
            let report = run_verify(&VerifyOptions {
                inject_penalty_sign_error,
                psi_draws,
            });
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Emit { input, out, format } => {
            let table = read_results(&input, Format::from_path(&input))?;
            emit_results(&table, &out, format.unwrap_or_else(|| Format::from_path(&out)))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
