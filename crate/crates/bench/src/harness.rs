use iocrelax::demos::{generate_from_optimum, make_noise_spec, NOISE_CONVENTION};
use iocrelax::estimators::{estimate_ep, estimate_kkt, estimate_tr, rmse, EpOptions, Method};
use iocrelax::systems::{make_system, SystemParams};
use iocrelax::{solve_ocp, OcpSpec, Theta, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::table::{ResultRow, ResultTable};
use crate::BenchError;

/// Worker count for the repetition pool; unset or 0 uses all cores.
pub const WORKERS_ENV: &str = "IOCRELAX_WORKERS";

/// Stream of the robustness RNG; noise draws use the default stream.
const ROBUSTNESS_STREAM: u64 = 1;

struct Problem {
    name: String,
    spec: OcpSpec,
    theta_star: Theta,
    optimum: Trajectory,
}

struct Cell {
    system: usize,
    pct: usize,
    rep: usize,
    method: usize,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Vec<Problem>, BenchError> {
    cfg.systems
        .iter()
        .map(|name| {
            let spec = make_system(name, &cfg.params)?;
            let theta_star = spec
                .theta_star
                .clone()
                .ok_or_else(|| BenchError::Config(format!("{name} has no reference weights")))?;
            let optimum = solve_ocp(&spec, &theta_star, None)?.traj;
            Ok(Problem {
                name: name.clone(),
                spec,
                theta_star,
                optimum,
            })
        })
        .collect()
}

fn pool() -> Result<rayon::ThreadPool, BenchError> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| BenchError::Config(format!("{WORKERS_ENV} must be a nonnegative integer, got `{v}`")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))
}

/// Relative factor applied to the estimation-side parameter in repetition `rep`.
pub fn robustness_factor(seed: u64, rep: usize, half_width: f64) -> f64 {
    if half_width == 0.0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + rep as u64);
    rng.set_stream(ROBUSTNESS_STREAM);
    1.0 + rng.random_range(-half_width..=half_width)
}

/// Copy of `params` with the named field multiplied by `factor`.
pub fn scale_param(params: &SystemParams, name: &str, factor: f64) -> Result<SystemParams, BenchError> {
    let mut value = serde_json::to_value(params)?;
    let field = value
        .get_mut(name)
        .ok_or_else(|| BenchError::Config(format!("unknown system parameter `{name}`")))?;
    let x = field
        .as_f64()
        .filter(|_| field.is_f64())
        .ok_or_else(|| BenchError::Config(format!("parameter `{name}` is not a real number")))?;
    *field = serde_json::json!(x * factor);
    Ok(serde_json::from_value(value)?)
}

fn estimate(
    method: Method,
    spec: &OcpSpec,
    ds: &iocrelax::demos::DemoSet,
    anchor: &iocrelax::estimators::Anchor,
    cutoff: f64,
) -> iocrelax::Result<Theta> {
    let res = match method {
        Method::Kkt => estimate_kkt(spec, ds, anchor)?,
        Method::Tr => estimate_tr(spec, ds, anchor)?,
        Method::Ep => estimate_ep(spec, ds, &EpOptions::with_cutoff(cutoff), anchor)?,
        other => {
            return Err(iocrelax::Error::InvalidInput(format!(
                "{other} is not a demonstration-based estimator"
            )))
        }
    };
    Ok(res.theta)
}

fn run(cfg: &ExperimentConfig, kind: &str) -> Result<ResultTable, BenchError> {
    cfg.validate()?;
    let problems = prepare(cfg)?;
    let robust = cfg.robustness.clone();

    // Estimation-side models per (system, repetition); identical to the
    // true model outside robustness runs.
    let mut est_specs: Vec<Vec<Result<OcpSpec, String>>> = Vec::new();
    for p in &problems {
        let mut per_rep = Vec::with_capacity(cfg.repetitions);
        for r in 0..cfg.repetitions {
            per_rep.push(match &robust {
                None => Ok(p.spec.clone()),
                Some(rb) => {
                    let f = robustness_factor(cfg.seed, r, rb.half_width);
                    let params = scale_param(&cfg.params, &rb.parameter, f)?;
                    make_system(&p.name, &params).map_err(|e| e.to_string())
                }
            });
        }
        est_specs.push(per_rep);
    }

    let cells: Vec<Cell> = (0..problems.len())
        .flat_map(|system| {
            (0..cfg.pcts.len()).flat_map(move |pct| {
                (0..cfg.repetitions).flat_map(move |rep| {
                    (0..cfg.estimators.len()).map(move |method| Cell {
                        system,
                        pct,
                        rep,
                        method,
                    })
                })
            })
        })
        .collect();

    let eval = |c: &Cell| -> Result<f64, String> {
        let p = &problems[c.system];
        let pct = cfg.pcts[c.pct];
        let seed = cfg.seed + c.rep as u64;
        let noise = make_noise_spec(&p.spec, &p.optimum.u, pct)
            .map_err(|e| e.to_string())?
            .with_seed(seed);
        let ds =
            generate_from_optimum(&p.spec, &p.theta_star, &p.optimum, &noise, cfg.demos).map_err(|e| e.to_string())?;
        let spec = est_specs[c.system][c.rep].as_ref().map_err(|e| e.clone())?;
        let anchor = cfg
            .anchor
            .anchor(cfg.anchor_index, &p.theta_star)
            .map_err(|e| e.to_string())?;
        let theta =
            estimate(cfg.estimators[c.method], spec, &ds, &anchor, cfg.cutoff_for(pct)).map_err(|e| e.to_string())?;
        let e = rmse(theta.as_slice(), p.theta_star.as_slice()).map_err(|e| e.to_string())?;
        if e.is_finite() {
            Ok(e)
        } else {
            Err("non-finite estimate".into())
        }
    };

    let mut results: Vec<(usize, Result<f64, String>)> =
        pool()?.install(|| cells.par_iter().enumerate().map(|(i, c)| (i, eval(c))).collect());
    results.sort_by_key(|(i, _)| *i);

    let mut rows = Vec::new();
    for (si, p) in problems.iter().enumerate() {
        for (mi, method) in cfg.estimators.iter().enumerate() {
            for (pi, &pct) in cfg.pcts.iter().enumerate() {
                let reps: Vec<&Result<f64, String>> = cells
                    .iter()
                    .zip(&results)
                    .filter(|(c, _)| c.system == si && c.method == mi && c.pct == pi)
                    .map(|(_, (_, r))| r)
                    .collect();
                rows.push(aggregate(&p.name, method.as_str(), pct, &reps));
            }
        }
    }

    Ok(ResultTable {
        kind: kind.into(),
        config_hash: cfg.hash(),
        anchor_policy: cfg.anchor.label(cfg.anchor_index),
        noise_convention: NOISE_CONVENTION.into(),
        base_seed: cfg.seed,
        repetitions: cfg.repetitions,
        demos: cfg.demos,
        rows,
    })
}

fn aggregate(system: &str, method: &str, pct: f64, reps: &[&Result<f64, String>]) -> ResultRow {
    let ok: Vec<f64> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let note = reps
        .iter()
        .enumerate()
        .find_map(|(r, res)| res.as_ref().err().map(|e| format!("rep {r}: {e}")))
        .unwrap_or_default();
    let (mean, std) = mean_std(&ok);
    ResultRow {
        system: system.into(),
        method: method.into(),
        pct,
        mean_rmse: mean,
        std_rmse: std,
        ok_reps: ok.len(),
        failed_reps: reps.len() - ok.len(),
        note,
    }
}

/// Mean and sample standard deviation; std is 0 for one value and both are
/// NaN for none.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    match v.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (v[0], 0.0),
        n => {
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Table I protocol: fresh noisy demonstrations per repetition, each
/// estimator scored by RMSE against the true weights.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<ResultTable, BenchError> {
    let mut cfg = cfg.clone();
    cfg.robustness = None;
    run(&cfg, "benchmark")
}

/// Table II protocol: demonstrations from the true model, estimation on a
/// model whose named parameter is scaled by a per-repetition uniform factor.
pub fn run_robustness(cfg: &ExperimentConfig) -> Result<ResultTable, BenchError> {
    if cfg.robustness.is_none() {
        return Err(BenchError::Config("robustness run needs a [robustness] block".into()));
    }
    run(cfg, "robustness")
}
