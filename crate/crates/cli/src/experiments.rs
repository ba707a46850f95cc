//! The report-producing experiments behind `check-stability`,
//! `check-equivariance` and `bench`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sphcnn::conv::{conv, conv_direct, FilterBank, Kernel};
use sphcnn::ingest::{synth_signal, SynthKind};
use sphcnn::metrics::{
    equivariance_report_with_output, median, relative_rmse, stability_report_with_output, superlinearity,
    EquivarianceReport, Operator, StabilityOptions, StabilityReport,
};
use sphcnn::perturb::{apply_diffeo, make_smooth_diffeo, make_type_with, TypeOptions};
use sphcnn::scnn::{forward, random_filter, random_network, NetworkSpec};
use sphcnn::{EquiangularGrid, Rotation, So3Quadrature, SphericalSignal};

use crate::config::{
    quadrature, BenchConfig, EquivarianceConfig, NetworkConfig, StabilityConfig, ACCURACY_NOTE, EQUIVARIANCE_SCHEMA,
    STABILITY_SCHEMA,
};
use crate::CliError;

fn mixture(grid: EquiangularGrid, n: usize, seed: u64) -> Result<SphericalSignal, CliError> {
    Ok(synth_signal(&SynthKind::GaussianMixture { n, seed }, grid)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityTrial {
    pub operator: String,
    pub seed: u64,
    /// Norm of the undeformed output.
    pub output_norm: f64,
    #[serde(flatten)]
    pub report: StabilityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorSummary {
    pub operator: String,
    pub trials: usize,
    pub passed: usize,
    pub median_slack: f64,
    /// Trials whose undeformed output is identically zero.
    pub degenerate: usize,
    /// Seed the operator was actually built from.
    pub operator_seed: u64,
    /// Largest per-seed share of the quadratic term in a fit of measured
    /// distance against eps.
    pub max_superlinearity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeTrial {
    pub kind: u8,
    pub seed: u64,
    pub relative_rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TypesSummary {
    pub grid: String,
    pub network: String,
    pub network_seed: u64,
    pub trials: Vec<TypeTrial>,
    pub mean_rmse: BTreeMap<u8, f64>,
    /// Type 1 <= type 2, type 1 <= type 4 and type 4 is the largest.
    pub ordering_holds: Option<bool>,
    pub accuracy: Option<f64>,
    pub accuracy_note: &'static str,
}

#[derive(Debug, Clone)]
pub struct StabilityOutcome {
    pub trials: Vec<StabilityTrial>,
    pub summaries: Vec<OperatorSummary>,
    pub types: Option<TypesSummary>,
}

impl StabilityOutcome {
    pub fn passed(&self) -> usize {
        self.trials.iter().filter(|t| t.report.pass).count()
    }

    pub fn to_json(&self, config: &StabilityConfig) -> Value {
        json!({
            "schema": STABILITY_SCHEMA,
            "config": config,
            "note": "measured distances are upper bounds on the rotation-distance infimum",
            "summary": {
                "trials": self.trials.len(),
                "passed": self.passed(),
                "operators": self.summaries,
            },
            "trials": self.trials,
            "types": self.types,
        })
    }

    /// One row per trial; every column is deterministic.
    pub fn stability_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "operator",
            "seed",
            "eps",
            "tau_norm",
            "tau_grad_norm",
            "measured",
            "bound",
            "slack",
            "pass",
        ])?;
        for t in &self.trials {
            let r = &t.report;
            w.write_record([
                t.operator.clone(),
                t.seed.to_string(),
                r.epsilon.to_string(),
                r.tau_norm.to_string(),
                r.tau_grad_norm.to_string(),
                r.measured_distance.to_string(),
                r.analytic_bound.to_string(),
                r.slack_factor.to_string(),
                r.pass.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    pub fn types_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["type", "seed", "relative_rmse", "accuracy", "accuracy_note"])?;
        if let Some(t) = &self.types {
            for row in &t.trials {
                w.write_record([
                    row.kind.to_string(),
                    row.seed.to_string(),
                    row.relative_rmse.to_string(),
                    String::new(),
                    ACCURACY_NOTE.to_string(),
                ])?;
            }
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::validation(e.to_string()))
}

enum OwnedOperator {
    Filter(FilterBank),
    Network(NetworkSpec),
}

/// Seeds tried before giving up on finding a network with live output.
pub const LIVE_NETWORK_TRIES: u64 = 256;

/// The first network at or after `seed` whose output is not identically zero
/// on any of `probes`. Small ReLU networks are often dead, and a dead network
/// passes every stability check vacuously.
pub fn live_network(
    cfg: &NetworkConfig,
    probes: &[SphericalSignal],
    q: &So3Quadrature,
    kernel: Kernel,
) -> Result<(NetworkSpec, u64), CliError> {
    let params = cfg.params();
    for seed in cfg.seed..cfg.seed.saturating_add(LIVE_NETWORK_TRIES) {
        let net = random_network(&params, seed)?;
        let live = probes
            .par_iter()
            .map(|x| forward(&net, x, q, kernel).map(|y| y.norm() > 0.0))
            .collect::<sphcnn::Result<Vec<bool>>>()?;
        if live.iter().all(|&l| l) {
            return Ok((net, seed));
        }
    }
    Err(CliError::validation(format!(
        "no network with live output among seeds {}..{}",
        cfg.seed,
        cfg.seed.saturating_add(LIVE_NETWORK_TRIES)
    )))
}

pub fn run_stability(cfg: &StabilityConfig) -> Result<StabilityOutcome, CliError> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let q = quadrature(&grid, cfg.quadrature)?;
    let opts = StabilityOptions {
        margin: cfg.margin,
        distance_budget: cfg.distance_budget,
    };

    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|s| cfg.seed_offset + s).collect();
    let inputs = seeds
        .par_iter()
        .map(|&s| mixture(grid, cfg.input_components, s))
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut operators: Vec<(String, OwnedOperator, u64)> = Vec::new();
    if cfg.filter.enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.filter.seed);
        let h = random_filter(&mut rng, cfg.filter.target_c_h, (0.6, 1.2), 3)?;
        operators.push(("filter".into(), OwnedOperator::Filter(FilterBank::single(h)), cfg.filter.seed));
    }
    for n in &cfg.networks {
        let (net, seed) = live_network(n, &inputs, &q, cfg.kernel)?;
        operators.push((n.label(), OwnedOperator::Network(net), seed));
    }

    let jobs: Vec<(usize, usize)> = (0..operators.len())
        .flat_map(|o| (0..seeds.len()).map(move |s| (o, s)))
        .collect();
    let per_job: Vec<Result<Vec<StabilityTrial>, CliError>> = jobs
        .par_iter()
        .map(|&(o, s)| {
            let seed = seeds[s];
            let x = &inputs[s];
            let (label, owned, _) = &operators[o];
            let op = match owned {
                OwnedOperator::Filter(bank) => Operator::Filter {
                    bank,
                    quadrature: &q,
                    kernel: cfg.kernel,
                },
                OwnedOperator::Network(net) => Operator::Network {
                    net,
                    quadrature: &q,
                    kernel: cfg.kernel,
                },
            };
            let op_x = op.apply(x)?;
            cfg.eps
                .iter()
                .map(|&eps| {
                    let t = make_smooth_diffeo(grid, eps, seed)?;
                    let report = stability_report_with_output(&op, x, &op_x, &t, eps, &opts)?;
                    Ok(StabilityTrial {
                        operator: label.clone(),
                        seed,
                        output_norm: op_x.norm(),
                        report,
                    })
                })
                .collect()
        })
        .collect();
    let mut trials = Vec::new();
    for r in per_job {
        trials.extend(r?);
    }

    let summaries = operators
        .iter()
        .map(|(label, _, seed)| summarize(label, *seed, &trials, &cfg.eps))
        .collect::<Result<Vec<_>, CliError>>()?;
    let types = if cfg.types.enabled && !cfg.types.kinds.is_empty() && cfg.types.seeds > 0 {
        Some(run_types(cfg)?)
    } else {
        None
    };
    Ok(StabilityOutcome {
        trials,
        summaries,
        types,
    })
}

fn summarize(label: &str, operator_seed: u64, trials: &[StabilityTrial], eps: &[f64]) -> Result<OperatorSummary, CliError> {
    let mine: Vec<&StabilityTrial> = trials.iter().filter(|t| t.operator == label).collect();
    let slack: Vec<f64> = mine.iter().map(|t| t.report.slack_factor).collect();
    let mut by_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for t in &mine {
        by_seed
            .entry(t.seed)
            .or_default()
            .push((t.report.epsilon, t.report.measured_distance));
    }
    let mut distinct = eps.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let max_superlinearity = if distinct.len() >= 2 {
        let mut worst = 0.0f64;
        for pts in by_seed.values() {
            let (e, m): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
            worst = worst.max(superlinearity(&e, &m)?);
        }
        Some(worst)
    } else {
        None
    };
    Ok(OperatorSummary {
        operator: label.to_string(),
        trials: mine.len(),
        passed: mine.iter().filter(|t| t.report.pass).count(),
        median_slack: median(&slack),
        degenerate: mine.iter().filter(|t| t.output_norm == 0.0).count(),
        operator_seed,
        max_superlinearity,
    })
}

fn run_types(cfg: &StabilityConfig) -> Result<TypesSummary, CliError> {
    let tc = &cfg.types;
    let grid = tc.grid.grid()?;
    let q = So3Quadrature::for_grid(&grid)?;
    let seeds: Vec<u64> = (0..tc.seeds as u64).map(|s| tc.seed_offset + s).collect();
    let inputs = seeds
        .par_iter()
        .map(|&s| mixture(grid, cfg.input_components, s))
        .collect::<Result<Vec<_>, CliError>>()?;
    let (net, network_seed) = live_network(&tc.network, &inputs, &q, cfg.kernel)?;
    let opts = TypeOptions {
        random_block_offset: tc.random_block_offset,
        direction: 1.0,
    };
    let per_seed: Vec<Result<Vec<TypeTrial>, CliError>> = seeds
        .par_iter()
        .zip(&inputs)
        .map(|(&seed, x)| {
            let y = forward(&net, x, &q, cfg.kernel)?;
            tc.kinds
                .iter()
                .map(|&k| {
                    let t = make_type_with(k, grid, seed, &opts)?;
                    let yt = forward(&net, &apply_diffeo(x, &t)?, &q, cfg.kernel)?;
                    Ok(TypeTrial {
                        kind: k,
                        seed,
                        relative_rmse: relative_rmse(&y, &yt)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut trials = Vec::new();
    for r in per_seed {
        trials.extend(r?);
    }
    let mut mean_rmse = BTreeMap::new();
    for &k in &tc.kinds {
        let v: Vec<f64> = trials.iter().filter(|t| t.kind == k).map(|t| t.relative_rmse).collect();
        mean_rmse.insert(k, v.iter().sum::<f64>() / v.len() as f64);
    }
    let ordering_holds = match (mean_rmse.get(&1), mean_rmse.get(&2), mean_rmse.get(&4)) {
        (Some(t1), Some(t2), Some(t4)) => {
            let max = mean_rmse.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some(t1 <= t2 && t1 <= t4 && *t4 >= max)
        }
        _ => None,
    };
    Ok(TypesSummary {
        grid: tc.grid.to_string(),
        network: tc.network.label(),
        network_seed,
        trials,
        mean_rmse,
        ordering_holds,
        accuracy: None,
        accuracy_note: ACCURACY_NOTE,
    })
}

/// One rotation of the equivariance table.
#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceRow {
    pub label: String,
    pub euler_zyz: [f64; 3],
    #[serde(flatten)]
    pub report: EquivarianceReport,
}

pub fn rotation_list(cfg: &EquivarianceConfig) -> Result<Vec<(String, Rotation)>, CliError> {
    let mut out = Vec::new();
    for &a in &cfg.angles_deg {
        let r = Rotation::from_axis_angle(cfg.axis, a.to_radians())?;
        let axis = if cfg.axis == [0.0, 0.0, 1.0] {
            "z".to_string()
        } else {
            format!("[{} {} {}]", cfg.axis[0], cfg.axis[1], cfg.axis[2])
        };
        out.push((format!("{a}deg about {axis}"), r));
    }
    for e in &cfg.euler {
        out.push((format!("euler({},{},{})", e[0], e[1], e[2]), Rotation::from_euler(e[0], e[1], e[2])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rotation_seed);
    for k in 0..cfg.random_rotations {
        out.push((format!("random#{k}"), Rotation::random(&mut rng)));
    }
    Ok(out)
}

pub fn run_equivariance(
    cfg: &EquivarianceConfig,
    op: &Operator<'_>,
    x: &SphericalSignal,
) -> Result<Vec<EquivarianceRow>, CliError> {
    let op_x = op.apply(x)?;
    let budget = cfg.distance.then_some(&cfg.distance_budget);
    rotation_list(cfg)?
        .into_iter()
        .map(|(label, r)| {
            let (p, t, o) = r.euler_angles();
            Ok(EquivarianceRow {
                label,
                euler_zyz: [p, t, o],
                report: equivariance_report_with_output(op, x, &op_x, &r, budget)?,
            })
        })
        .collect()
}

pub fn equivariance_csv(rows: &[EquivarianceRow], grid: &EquiangularGrid) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rotation",
        "phi",
        "theta",
        "rho",
        "resolution",
        "relative_rmse",
        "rotation_distance",
        "exact_regime",
        "accuracy",
        "accuracy_note",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.euler_zyz[0].to_string(),
            r.euler_zyz[1].to_string(),
            r.euler_zyz[2].to_string(),
            format!("{}x{}", grid.n_theta(), grid.n_phi()),
            r.report.relative_rmse.to_string(),
            r.report.rotation_distance.map(|d| d.to_string()).unwrap_or_default(),
            r.report.exact_regime.to_string(),
            String::new(),
            ACCURACY_NOTE.to_string(),
        ])?;
    }
    finish_csv(w)
}

pub fn equivariance_json(rows: &[EquivarianceRow], cfg: &EquivarianceConfig) -> Value {
    json!({
        "schema": EQUIVARIANCE_SCHEMA,
        "config": cfg,
        "rows": rows,
        "accuracy": null,
        "accuracy_note": ACCURACY_NOTE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub resolution: usize,
    pub quadrature: (usize, usize, usize),
    pub kernel: &'static str,
    pub pairs: usize,
    pub wall_time_s: f64,
    pub max_abs_diff: f64,
    pub speedup: f64,
}

/// Times the direct and collapsed kernels on random filter/signal pairs.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    for &n in &cfg.resolutions {
        let grid = EquiangularGrid::square(n);
        let q = So3Quadrature::for_grid(&grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
        let (mut t_direct, mut t_zonal, mut diff) = (0.0, 0.0, 0.0f64);
        for p in 0..cfg.pairs {
            let h = random_filter(&mut rng, 1.0, cfg.width_range, 3)?;
            let x = mixture(grid, 6, cfg.seed.wrapping_add(p as u64))?;
            let t = Instant::now();
            let d = conv_direct(&h, &x, &q)?;
            t_direct += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let z = conv(&h, &x, &q, Kernel::Zonal)?;
            t_zonal += t.elapsed().as_secs_f64();
            for (a, b) in d.values().iter().zip(z.values()) {
                diff = diff.max((a - b).abs());
            }
        }
        rows.push(BenchRow {
            resolution: n,
            quadrature: q.resolutions(),
            kernel: "direct",
            pairs: cfg.pairs,
            wall_time_s: t_direct,
            max_abs_diff: 0.0,
            speedup: 1.0,
        });
        rows.push(BenchRow {
            resolution: n,
            quadrature: q.resolutions(),
            kernel: "zonal",
            pairs: cfg.pairs,
            wall_time_s: t_zonal,
            max_abs_diff: diff,
            speedup: t_direct / t_zonal,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "resolution",
        "quadrature",
        "kernel",
        "pairs",
        "wall_time_s",
        "max_abs_diff_vs_direct",
        "speedup_vs_direct",
    ])?;
    for r in rows {
        let (a, b, c) = r.quadrature;
        w.write_record([
            format!("{0}x{0}", r.resolution),
            format!("{a}x{b}x{c}"),
            r.kernel.to_string(),
            r.pairs.to_string(),
            r.wall_time_s.to_string(),
            r.max_abs_diff.to_string(),
            r.speedup.to_string(),
        ])?;
    }
    finish_csv(w)
}
