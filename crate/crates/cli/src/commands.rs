//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use icl_core::data::{sample_dataset, DataConfig, DatasetSize};
use icl_core::experiments::{
    bimodality_stat, detect_t_icl, detect_transience, fit_power_law, fit_sigmoid_k_star,
    hex_digest, measure_memorization_scaling, quantile, streams, sweep, train_timed,
    transience_curve, Manifest, RunRecord, RunStop, SweepCsvRow, SweepGrid, SweepStatus,
    TrainConfig, T_ICL_THRESHOLD,
};
use icl_core::math::{QuadratureRule, RngStream, DEFAULT_HERMITE_ORDER};
use icl_core::theory::{
    icl_iwl_relation, icl_margin, integrate_dynamics, integrate_trajectory, loss_surface,
    predict_k_star, w_transient, CSeries, LogitDistribution, RelationDirection, TheoryConfig,
};
use log::info;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::config::{decode, parse_grid, parse_list, train_snapshot, Layered};
use crate::exit::{self, ConfigError};
use crate::rundir::RunDir;
use crate::{
    Cli, Command, DataArgs, FitCommand, TheoryArgs, TheoryCommand, TrainArgs, OUT_ROOT_ENV,
};

const DEFAULT_D: i64 = 63;
const DEFAULT_N: i64 = 100;
const DEFAULT_ITERATIONS: i64 = 200_000;
const DEFAULT_SCALING_KS: [usize; 6] = [500, 1000, 2000, 4000, 8000, 16000];

pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = Layered::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => gen_data(cli, &mut cfg, a),
        Command::Train(a) => train(cli, &mut cfg, a),
        Command::Sweep(a) => {
            apply_train(&mut cfg, &a.train, cli.seed)?;
            set_list::<DatasetSize>(&mut cfg, "sweep", "ks", a.ks.as_deref(), dataset_size_value)?;
            set_list::<usize>(&mut cfg, "sweep", "ns", a.ns.as_deref(), |n| int(n as u64))?;
            set_list::<u64>(&mut cfg, "sweep", "seeds", a.seeds.as_deref(), int)?;
            run_sweep(cli, &mut cfg)
        }
        Command::Theory(t) => theory(cli, &mut cfg, t),
        Command::Fit(f) => fit(f),
        Command::ScalingLaw(a) => {
            apply_train(&mut cfg, &a.train, cli.seed)?;
            set_list::<usize>(
                &mut cfg,
                "scaling",
                "ks",
                a.ks.as_deref(),
                |k| int(k as u64),
            )?;
            scaling_law(cli, &mut cfg)
        }
    }
}

fn int(v: u64) -> Result<Value> {
    Ok(Value::Integer(i64::try_from(v).map_err(|_| {
        ConfigError(format!("{v} does not fit a config integer"))
    })?))
}

fn dataset_size_value(k: DatasetSize) -> Result<Value> {
    match k {
        DatasetSize::Finite(k) => int(k as u64),
        DatasetSize::Infinite => Ok(Value::String("inf".into())),
    }
}

fn parse_k(s: &str) -> Result<DatasetSize> {
    s.parse()
        .map_err(|e: icl_core::Error| ConfigError(e.to_string()).into())
}

fn set_list<T>(
    cfg: &mut Layered,
    section: &str,
    key: &str,
    flag: Option<&str>,
    to_value: impl Fn(T) -> Result<Value>,
) -> Result<()>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(s) = flag {
        let values = parse_list::<T>(s)?
            .into_iter()
            .map(to_value)
            .collect::<Result<Vec<_>>>()?;
        cfg.set(section, key, Some(Value::Array(values)));
    }
    Ok(())
}

fn apply_data(cfg: &mut Layered, a: &DataArgs) -> Result<()> {
    if let Some(d) = a.d {
        cfg.set("model", "d", Some(int(d as u64)?));
        cfg.set("data", "d", Some(int(d as u64)?));
    }
    if let Some(k) = &a.k {
        cfg.set("data", "k", Some(dataset_size_value(parse_k(k)?)?));
    }
    cfg.set("data", "n", a.n.map(|n| int(n as u64)).transpose()?);
    cfg.set("data", "balanced", a.balanced.then_some(true));
    cfg.set("data", "zipf_alpha", a.zipf_alpha);
    cfg.set("data", "seed", a.data_seed.map(int).transpose()?);
    Ok(())
}

fn apply_train(cfg: &mut Layered, a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    apply_data(cfg, &a.data)?;
    if let Some(f) = &a.family {
        let kind = f.replace('-', "_");
        if !["mlp_only", "minimal", "transformer"].contains(&kind.as_str()) {
            return Err(ConfigError(format!(
                "unknown family {f:?} (expected mlp_only, minimal or transformer)"
            ))
            .into());
        }
        cfg.set("model", "kind", Some(kind));
    }
    let as_int = |v: Option<usize>| v.map(|v| int(v as u64)).transpose();
    cfg.set("model", "hidden", as_int(a.hidden)?);
    cfg.set("model", "attention_init_std", a.attention_init_std);
    cfg.set("model", "beta0", a.beta0);
    cfg.set("model", "w0", a.w0);
    cfg.set("train", "iterations", as_int(a.iterations)?);
    cfg.set("train", "lr", a.lr);
    cfg.set("train", "batch", as_int(a.batch)?);
    cfg.set("train", "eval_interval", as_int(a.eval_interval)?);
    cfg.set("train", "eval_batch", as_int(a.eval_batch)?);
    cfg.set("train", "mlp_weight_decay", a.mlp_weight_decay);
    cfg.set("train", "attention_weight_decay", a.attention_weight_decay);
    cfg.set("train", "order_param_items", as_int(a.order_param_items)?);
    cfg.set("train", "seed", seed.map(int).transpose()?);
    let mut stop = Table::new();
    match (a.stop_icl, a.stop_c1) {
        (Some(icl), Some(c1)) => {
            stop.insert("rule".into(), "icl_or_memorized".into());
            stop.insert("icl".into(), icl.into());
            stop.insert("c1".into(), c1.into());
        }
        (Some(icl), None) => {
            stop.insert("rule".into(), "icl_acquired".into());
            stop.insert("icl".into(), icl.into());
        }
        (None, Some(c1)) => {
            stop.insert("rule".into(), "memorized".into());
            stop.insert("c1".into(), c1.into());
        }
        (None, None) => {}
    }
    if !stop.is_empty() {
        cfg.set("train", "stop", Some(Value::Table(stop)));
    }
    Ok(())
}

fn fill_train_defaults(cfg: &mut Layered) {
    cfg.fill("model", "kind", "minimal");
    if cfg.get("model", "d").is_none() && cfg.get("data", "d").is_none() {
        cfg.fill("model", "d", DEFAULT_D);
    }
    cfg.fill("data", "k", "inf");
    cfg.fill("data", "n", DEFAULT_N);
    cfg.fill("train", "iterations", DEFAULT_ITERATIONS);
}

fn out_dir(cli: &Cli, default_name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(default_name)
    })
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

fn short_hash(text: &str) -> String {
    hex_digest(text.as_bytes())[..10].to_string()
}

fn kind_name(cfg: &TrainConfig) -> String {
    serde_json::to_value(cfg.model.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_data(cli: &Cli, cfg: &mut Layered, a: &DataArgs) -> Result<i32> {
    apply_data(cfg, a)?;
    if a.data_seed.is_none() {
        cfg.set("data", "seed", cli.seed.map(int).transpose()?);
    }
    let mut data = cfg.section("data");
    if !data.contains_key("d") {
        data.insert(
            "d".into(),
            cfg.get("model", "d").unwrap_or(DEFAULT_D.into()),
        );
    }
    data.entry("n").or_insert(DEFAULT_N.into());
    let data: DataConfig = decode(data, "[data]")?;
    data.validate().map_err(|e| ConfigError(e.to_string()))?;
    let k = data
        .k
        .finite()
        .ok_or_else(|| ConfigError("gen-data needs a finite K".into()))?;
    let seed = data.seed.unwrap_or(0);
    let dir = RunDir::create(
        &out_dir(cli, &format!("data-D{}-K{k}-seed{seed}", data.d)),
        cli.force,
    )?;
    let dataset = sample_dataset(&data, &mut RngStream::new(seed, streams::DATASET))?;
    let mut bytes = Vec::new();
    dataset.write_to(&mut bytes)?;
    let mut snapshot = Table::new();
    snapshot.insert("data".into(), Value::try_from(&data)?);
    dir.write("config.toml", toml::to_string(&snapshot)?.as_bytes())?;
    dir.write("dataset.bin", &bytes)?;
    dir.write_json(
        "manifest.json",
        &serde_json::json!({ "data": data, "seed": seed, "items": k, "content_hash": hex_digest(&bytes) }),
    )?;
    println!("{}", dir.commit()?.display());
    Ok(exit::SUCCESS)
}

fn train(cli: &Cli, cfg: &mut Layered, a: &TrainArgs) -> Result<i32> {
    apply_train(cfg, a, cli.seed)?;
    fill_train_defaults(cfg);
    let tc = cfg.train_config()?;
    let snapshot = train_snapshot(&tc, &[])?;
    let name = format!(
        "train-{}-K{}-N{}-seed{}",
        kind_name(&tc),
        tc.data.k,
        tc.data.n,
        tc.seed
    );
    let dir = RunDir::create(&out_dir(cli, &name), cli.force)?;
    info!("training {name} for {} iterations", tc.iterations);
    let (record, _model, secs) = train_timed(&tc)?;
    let csv = record.to_csv_bytes()?;
    let manifest = Manifest {
        config: tc.clone(),
        seed: tc.seed,
        content_hash: hex_digest(&csv),
        wall_time_secs: secs,
        stop: record.stop,
        iterations: record.iterations,
        t_icl: detect_t_icl(&record.rows, T_ICL_THRESHOLD),
        transience: detect_transience(&record.rows),
    };
    dir.write("config.toml", snapshot.as_bytes())?;
    dir.write("record.csv", &csv)?;
    dir.write_json("manifest.json", &manifest)?;
    let path = dir.commit()?;
    println!("{}", path.display());
    info!(
        "stop {:?} after {} iterations, final ICL {:.3}, IWL {:.3}",
        record.stop,
        record.iterations,
        record.final_icl_acc(),
        record.final_iwl_acc()
    );
    if record.stop == RunStop::Divergence {
        eprintln!(
            "error: training diverged at iteration {}",
            record.iterations
        );
        return Ok(exit::DIVERGENCE);
    }
    Ok(exit::SUCCESS)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    ks: Option<Vec<DatasetSize>>,
    ns: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    config: &'a TrainConfig,
    grid: &'a SweepGrid,
    status: SweepStatus,
    cells: usize,
    failed: usize,
    content_hash: String,
    wall_time_secs: f64,
}

fn run_sweep(cli: &Cli, cfg: &mut Layered) -> Result<i32> {
    fill_train_defaults(cfg);
    let base = cfg.train_config()?;
    let sec: SweepSection = decode(cfg.section("sweep"), "[sweep]")?;
    let grid = SweepGrid {
        ks: sec.ks.unwrap_or_else(|| vec![base.data.k]),
        ns: sec.ns.unwrap_or_else(|| vec![base.data.n]),
        seeds: sec.seeds.unwrap_or_else(|| vec![base.seed]),
    };
    let Value::Table(grid_table) = Value::try_from(&grid)? else {
        unreachable!("a struct serializes to a table")
    };
    let snapshot = train_snapshot(&base, &[("sweep", grid_table)])?;
    let name = format!("sweep-{}-{}", kind_name(&base), short_hash(&snapshot));
    let dir = RunDir::create(&out_dir(cli, &name), cli.force)?;
    info!("sweeping {} cells on {} workers", grid.len(), workers(cli));
    let start = Instant::now();
    let result = sweep(&grid, &base, workers(cli))?;
    let secs = start.elapsed().as_secs_f64();
    let csv = result.to_csv_bytes()?;
    dir.write("config.toml", snapshot.as_bytes())?;
    dir.write("sweep.csv", &csv)?;
    for cell in &result.cells {
        if let Some(record) = &cell.record {
            dir.write(
                &format!("cells/K{}-N{}-seed{}.csv", cell.k, cell.n, cell.seed),
                &record.to_csv_bytes()?,
            )?;
        }
    }
    let status = result.status();
    let failed = result.cells.iter().filter(|c| c.record.is_none()).count();
    dir.write_json(
        "manifest.json",
        &SweepManifest {
            config: &base,
            grid: &grid,
            status,
            cells: result.cells.len(),
            failed,
            content_hash: hex_digest(&csv),
            wall_time_secs: secs,
        },
    )?;
    println!("{}", dir.commit()?.display());
    Ok(match status {
        SweepStatus::Complete => exit::SUCCESS,
        SweepStatus::Partial => {
            eprintln!("warning: {failed} of {} cells failed", result.cells.len());
            exit::PARTIAL
        }
        SweepStatus::Failed => {
            eprintln!("error: every cell failed");
            exit::FAILURE
        }
    })
}

#[derive(Serialize)]
struct ScalingRow {
    k: usize,
    c1_initial: f64,
    i_k_inf: Option<f64>,
    limit: &'static str,
    tail: f64,
}

fn scaling_law(cli: &Cli, cfg: &mut Layered) -> Result<i32> {
    cfg.set("model", "kind", Some("mlp_only"));
    cfg.fill("data", "k", DEFAULT_SCALING_KS[0] as i64);
    fill_train_defaults(cfg);
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct ScalingSection {
        ks: Option<Vec<usize>>,
    }
    let sec: ScalingSection = decode(cfg.section("scaling"), "[scaling]")?;
    let ks = sec.ks.unwrap_or_else(|| DEFAULT_SCALING_KS.to_vec());
    let base = cfg.train_config()?;
    let mut scaling_table = Table::new();
    scaling_table.insert(
        "ks".into(),
        Value::Array(ks.iter().map(|&k| int(k as u64)).collect::<Result<_>>()?),
    );
    let snapshot = train_snapshot(&base, &[("scaling", scaling_table)])?;
    let dir = RunDir::create(
        &out_dir(cli, &format!("scaling-{}", short_hash(&snapshot))),
        cli.force,
    )?;
    let start = Instant::now();
    let result = measure_memorization_scaling(&ks, &base, workers(cli))?;
    let secs = start.elapsed().as_secs_f64();
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &result.points {
        w.serialize(ScalingRow {
            k: p.k,
            c1_initial: p.c1_initial,
            i_k_inf: p.i_k.limit.value(),
            limit: if p.i_k.limit.value().is_some() {
                "finite"
            } else {
                "divergent"
            },
            tail: p.i_k.tail,
        })?;
    }
    let csv = w.into_inner().context("flushing scaling table")?;
    dir.write("config.toml", snapshot.as_bytes())?;
    dir.write("scaling.csv", &csv)?;
    dir.write_json(
        "manifest.json",
        &serde_json::json!({
            "config": base,
            "ks": ks,
            "fit": result.fit,
            "excluded": result.excluded,
            "failed": result.failed,
            "content_hash": hex_digest(&csv),
            "wall_time_secs": secs,
        }),
    )?;
    println!("{}", dir.commit()?.display());
    if let Some(fit) = &result.fit {
        info!(
            "I_K(inf) ~ K^{:.3} (R^2 {:.3})",
            fit.exponent, fit.r_squared
        );
    }
    Ok(match (result.failed.len(), result.points.len()) {
        (0, _) => exit::SUCCESS,
        (_, 0) => exit::FAILURE,
        _ => exit::PARTIAL,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TheorySection {
    n: usize,
    beta0: f64,
    w0: f64,
    lambda_w: f64,
    c1: f64,
    c2: f64,
    c_series: Option<PathBuf>,
    time_scale: f64,
    margin: f64,
    t_max: f64,
    w_damping: bool,
    nu: Option<f64>,
    calibration_n: Option<f64>,
    calibration_k: Option<f64>,
    c3: Option<f64>,
    loss: Option<f64>,
    direction: RelationDirection,
    phi: f64,
    ws: Option<Vec<f64>>,
    betas: Option<Vec<f64>>,
}

impl Default for TheorySection {
    fn default() -> Self {
        let base = TheoryConfig::new(DEFAULT_N as usize, 0.0);
        Self {
            n: base.n,
            beta0: 0.0,
            w0: 0.0,
            lambda_w: 0.0,
            c1: 0.5,
            c2: 0.5,
            c_series: None,
            time_scale: 1.0,
            margin: base.margin,
            t_max: base.t_max,
            w_damping: true,
            nu: None,
            calibration_n: None,
            calibration_k: None,
            c3: None,
            loss: None,
            direction: RelationDirection::FromIcl,
            phi: 0.0,
            ws: None,
            betas: None,
        }
    }
}

impl TheorySection {
    fn config(&self) -> Result<TheoryConfig> {
        let c_series = match &self.c_series {
            Some(path) => read_c_series(path, self.time_scale)?,
            None => CSeries::Constant {
                c1: self.c1,
                c2: self.c2,
            },
        };
        let cfg = TheoryConfig {
            n: self.n,
            beta0: self.beta0,
            w0: self.w0,
            lambda_w: self.lambda_w,
            c_series,
            margin: self.margin,
            t_max: self.t_max,
            w_damping: self.w_damping,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }
}

/// Columns `t` (or `iteration`, scaled by `time_scale`), `c1` and `c2`.
fn read_c_series(path: &Path, time_scale: f64) -> Result<CSeries> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (time_col, scale) = match (col("t"), col("iteration")) {
        (Some(c), _) => (c, 1.0),
        (None, Some(c)) => (c, time_scale),
        _ => {
            return Err(ConfigError(format!(
                "{}: needs a `t` or `iteration` column",
                path.display()
            ))
            .into())
        }
    };
    let c1_col =
        col("c1").ok_or_else(|| ConfigError(format!("{}: needs a `c1` column", path.display())))?;
    let c2_col =
        col("c2").ok_or_else(|| ConfigError(format!("{}: needs a `c2` column", path.display())))?;
    let (mut t, mut c1, mut c2) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| {
                    ConfigError(format!(
                        "{}: row {}: column {} is not a number",
                        path.display(),
                        line + 2,
                        i + 1
                    ))
                    .into()
                })
        };
        t.push(num(time_col)? * scale);
        c1.push(num(c1_col)?);
        c2.push(num(c2_col)?);
    }
    Ok(CSeries::Sampled { t, c1, c2 })
}

fn apply_theory(cfg: &mut Layered, a: &TheoryArgs) -> Result<()> {
    cfg.set("theory", "n", a.n.map(|n| int(n as u64)).transpose()?);
    cfg.set("theory", "beta0", a.beta0);
    cfg.set("theory", "w0", a.w0);
    cfg.set("theory", "lambda_w", a.lambda_w);
    cfg.set("theory", "c1", a.c1);
    cfg.set("theory", "c2", a.c2);
    Ok(())
}

fn float_array(values: Vec<f64>) -> Value {
    Value::Array(values.into_iter().map(Value::Float).collect())
}

fn theory(cli: &Cli, cfg: &mut Layered, cmd: &TheoryCommand) -> Result<i32> {
    match cmd {
        TheoryCommand::Ode {
            common,
            c_series,
            time_scale,
            margin,
            t_max,
            no_w_damping,
        } => {
            apply_theory(cfg, common)?;
            cfg.set(
                "theory",
                "c_series",
                c_series.as_ref().map(|p| p.display().to_string()),
            );
            cfg.set("theory", "time_scale", *time_scale);
            cfg.set("theory", "margin", *margin);
            cfg.set("theory", "t_max", *t_max);
            cfg.set("theory", "w_damping", no_w_damping.then_some(false));
            let sec: TheorySection = decode(cfg.section("theory"), "[theory]")?;
            let tc = sec.config()?;
            let mut snapshot = Table::new();
            snapshot.insert("theory".into(), Value::try_from(&tc)?);
            let snapshot = toml::to_string(&snapshot)?;
            let name = format!(
                "ode-N{}-beta{}-w{}-{}",
                tc.n,
                tc.beta0,
                tc.w0,
                short_hash(&snapshot)
            );
            let dir = RunDir::create(&out_dir(cli, &name), cli.force)?;
            let traj = integrate_trajectory(&tc)?;
            let prediction = integrate_dynamics(&tc)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["t", "w", "beta", "i_k", "i_prime_k", "margin"])?;
            for (t, y) in traj.times.iter().zip(&traj.states) {
                let m = icl_margin(y[0], y[1], tc.n);
                w.write_record([*t, y[0], y[1], y[2], y[3], m].map(|v| v.to_string()))?;
            }
            dir.write("config.toml", snapshot.as_bytes())?;
            dir.write(
                "trajectory.csv",
                &w.into_inner().context("flushing trajectory")?,
            )?;
            dir.write_json("prediction.json", &prediction)?;
            println!("{}", dir.commit()?.display());
            match prediction.t_icl {
                Some(t) => info!(
                    "t_ICL = {t:.6} (small-beta form {:.6})",
                    prediction.t_icl_small_beta
                ),
                None => info!("margin not reached by t = {}", tc.t_max),
            }
            Ok(exit::SUCCESS)
        }
        TheoryCommand::Predict {
            common,
            nu,
            calibration_n,
            calibration_k,
            c3,
            loss,
            direction,
        } => {
            apply_theory(cfg, common)?;
            cfg.set("theory", "nu", *nu);
            cfg.set("theory", "calibration_n", *calibration_n);
            cfg.set("theory", "calibration_k", *calibration_k);
            cfg.set("theory", "c3", *c3);
            cfg.set("theory", "loss", *loss);
            cfg.set(
                "theory",
                "direction",
                direction.as_ref().map(|d| d.replace('-', "_")),
            );
            let sec: TheorySection = decode(cfg.section("theory"), "[theory]")?;
            let tc = sec.config()?;
            let ode = integrate_dynamics(&tc)?;
            let k_star = match sec.nu {
                Some(nu) => {
                    let calibration = match (sec.calibration_n, sec.calibration_k) {
                        (Some(n), Some(k)) => Some((n, k)),
                        (None, None) => None,
                        _ => {
                            return Err(ConfigError(
                                "calibration needs both calibration_n and calibration_k".into(),
                            )
                            .into())
                        }
                    };
                    Some(
                        predict_k_star(tc.n as f64, nu, tc.beta0, calibration)
                            .map_err(|e| ConfigError(e.to_string()))?,
                    )
                }
                None => None,
            };
            let w_tr = match sec.c3 {
                Some(c3) => {
                    Some(w_transient(c3, tc.lambda_w).map_err(|e| ConfigError(e.to_string()))?)
                }
                None => None,
            };
            let relation = match sec.loss {
                Some(l) => Some(
                    icl_iwl_relation(l, sec.direction).map_err(|e| ConfigError(e.to_string()))?,
                ),
                None => None,
            };
            print_json(&serde_json::json!({
                "n": tc.n,
                "beta0": tc.beta0,
                "w0": tc.w0,
                "regime": ode.regime,
                "t_icl_small_beta": ode.t_icl_small_beta,
                "t_icl_large_negative_beta": ode.t_icl_large_negative_beta,
                "t_icl_ode": ode.t_icl,
                "i_k_at_crossing": ode.i_k_at_crossing,
                "k_star": k_star,
                "w_tr": w_tr,
                "relation": relation.map(|v| serde_json::json!({ "direction": sec.direction, "loss": sec.loss, "value": v })),
            }))?;
            Ok(exit::SUCCESS)
        }
        TheoryCommand::Surface {
            common,
            phi,
            ws,
            betas,
        } => {
            apply_theory(cfg, common)?;
            cfg.set("theory", "phi", *phi);
            cfg.set(
                "theory",
                "ws",
                ws.as_deref().map(parse_grid).transpose()?.map(float_array),
            );
            cfg.set(
                "theory",
                "betas",
                betas
                    .as_deref()
                    .map(parse_grid)
                    .transpose()?
                    .map(float_array),
            );
            let sec: TheorySection = decode(cfg.section("theory"), "[theory]")?;
            let ws = sec
                .ws
                .clone()
                .unwrap_or_else(|| (0..=16).map(|i| i as f64 * 0.25).collect());
            let betas = sec
                .betas
                .clone()
                .unwrap_or_else(|| (-8..=16).map(|i| i as f64 * 0.25).collect());
            let mut snapshot = Table::new();
            let mut t = Table::new();
            t.insert("n".into(), int(sec.n as u64)?);
            t.insert("phi".into(), sec.phi.into());
            t.insert("ws".into(), float_array(ws.clone()));
            t.insert("betas".into(), float_array(betas.clone()));
            snapshot.insert("theory".into(), Value::Table(t));
            let snapshot = toml::to_string(&snapshot)?;
            let dir = RunDir::create(
                &out_dir(
                    cli,
                    &format!("surface-N{}-{}", sec.n, short_hash(&snapshot)),
                ),
                cli.force,
            )?;
            let rule = QuadratureRule::gauss_hermite(DEFAULT_HERMITE_ORDER)?;
            let points = loss_surface(
                &LogitDistribution::constant(sec.phi),
                &ws,
                &betas,
                sec.n,
                &rule,
            )?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for p in &points {
                w.serialize(p)?;
            }
            let csv = w.into_inner().context("flushing surface")?;
            dir.write("config.toml", snapshot.as_bytes())?;
            dir.write("surface.csv", &csv)?;
            dir.write_json(
                "manifest.json",
                &serde_json::json!({ "points": points.len(), "content_hash": hex_digest(&csv) }),
            )?;
            println!("{}", dir.commit()?.display());
            Ok(exit::SUCCESS)
        }
    }
}

fn read_sweep_rows(path: &Path) -> Result<Vec<SweepCsvRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepCsvRow>, _>>()
        .with_context(|| format!("parsing sweep table {}", path.display()))
}

/// Finished cells, restricted to one context length.
fn done_cells(rows: Vec<SweepCsvRow>, n: Option<usize>) -> Result<Vec<SweepCsvRow>> {
    let rows: Vec<_> = rows
        .into_iter()
        .filter(|r| r.status == "done" && n.is_none_or(|n| r.n == n))
        .collect();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() > 1 {
        return Err(ConfigError(format!(
            "table holds several context lengths {ns:?}; pick one with --N"
        ))
        .into());
    }
    Ok(rows)
}

fn fit(cmd: &FitCommand) -> Result<i32> {
    match cmd {
        FitCommand::Sigmoid { input, n } => {
            let rows = done_cells(read_sweep_rows(input)?, *n)?;
            let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &rows {
                if let (DatasetSize::Finite(k), Some(acc)) = (parse_k(&r.k)?, r.final_icl_acc) {
                    by_k.entry(k).or_default().push(acc);
                }
            }
            let points: Vec<(f64, f64)> = by_k
                .iter()
                .map(|(&k, v)| (k as f64, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let fit = fit_sigmoid_k_star(&points)?;
            print_json(&serde_json::json!({ "fit": fit, "points": points }))?;
        }
        FitCommand::PowerLaw { input, x, y } => {
            let mut r = csv::Reader::from_path(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let headers = r.headers()?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| ConfigError(format!("{}: no column `{name}`", input.display())))
            };
            let (xc, yc) = (col(x)?, col(y)?);
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for rec in r.records() {
                let rec = rec?;
                // Empty cells mark missing values (e.g. a divergent I_K).
                let (Some(a), Some(b)) = (
                    rec.get(xc).filter(|v| !v.is_empty()),
                    rec.get(yc).filter(|v| !v.is_empty()),
                ) else {
                    continue;
                };
                xs.push(
                    a.trim()
                        .parse::<f64>()
                        .with_context(|| format!("parsing {a:?}"))?,
                );
                ys.push(
                    b.trim()
                        .parse::<f64>()
                        .with_context(|| format!("parsing {b:?}"))?,
                );
            }
            print_json(&fit_power_law(&xs, &ys)?)?;
        }
        FitCommand::Bimodality { input, k, n } => {
            let want = k.as_deref().map(parse_k).transpose()?;
            let rows = done_cells(read_sweep_rows(input)?, *n)?;
            let mut accs = Vec::new();
            for r in &rows {
                if want.is_none_or(|w| parse_k(&r.k).is_ok_and(|k| k == w)) {
                    accs.extend(r.final_icl_acc);
                }
            }
            if accs.is_empty() {
                return Err(ConfigError("no finished cells match the selection".into()).into());
            }
            print_json(
                &serde_json::json!({ "runs": accs.len(), "bimodality": bimodality_stat(&accs) }),
            )?;
        }
        FitCommand::Transience { input } => {
            let rows = RunRecord::read_csv(input)?;
            let curve = transience_curve(&rows);
            let window = curve.decay_window();
            let median = |errors: Vec<f64>| -> Result<Option<f64>> {
                let errors: Vec<f64> = errors.into_iter().filter(|e| e.is_finite()).collect();
                Ok(if errors.is_empty() {
                    None
                } else {
                    Some(quantile(&errors, 0.5)?)
                })
            };
            print_json(&serde_json::json!({
                "t_icl": detect_t_icl(&rows, T_ICL_THRESHOLD),
                "transience": detect_transience(&rows),
                "median_relative_error": median(curve.relative_errors())?,
                "decay_median_relative_error": median(window.relative_errors())?,
                "decay_memorized_median_relative_error": median(window.memorized_relative_errors())?,
                "curve": curve,
            }))?;
        }
    }
    Ok(exit::SUCCESS)
}
