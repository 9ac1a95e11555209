//! Engine execution for validated configs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::*;
use super::output::{fmt_f64, RunDir};
use crate::estimators::{
    defect_length, excess_defect_length, fit_power_law, optimize_collapse, second_moment_xi, suggest_window, Channel,
    CollapseOptions, Curve, Field, FitOptions, FitResult, SeriesPoint, XiMethod,
};
use crate::ising::{
    equilibrium_wall_density, kz_ramp_experiment, run_ensemble, LatticeSnapshot, SnapshotIndexEntry,
};
use crate::rydberg::{self, drive_at, EvolveOptions, Hamiltonian, StateVector};
use crate::scaling::{
    classify_case, excess_energy_scale, growth_exponent, kz_scales, CriticalExponents, ExponentRegistry, ScalingModel,
};
use crate::tfim::{ramp_simulate, ChainSpec};

/// A failure inside an engine, tagged with the stage that failed.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct EngineError {
    pub stage: String,
    pub message: String,
}

fn stage<E: std::fmt::Display>(name: &str) -> impl Fn(E) -> EngineError + '_ {
    move |e| EngineError { stage: name.to_string(), message: e.to_string() }
}

/// Execute the engine, writing its data files and `summary.json` into `out`.
pub fn run(cfg: &RunConfig, out: &mut RunDir) -> Result<Value, EngineError> {
    let results = match &cfg.engine {
        EngineParams::Scaling(p) => run_scaling(p, Some(out))?,
        EngineParams::Tfim1d(p) => run_tfim(p, out)?,
        EngineParams::Ising2d(p) => run_ising(p, cfg, out)?,
        EngineParams::Rydberg(p) => run_rydberg(p, cfg, out)?,
        EngineParams::Estimate(p) => run_estimate(p, cfg, out)?,
        EngineParams::Collapse(p) => run_collapse(p, out)?,
    };
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "engine": cfg.kind().name(),
        "results": results,
    });
    out.write_json("summary.json", &summary).map_err(stage("write summary"))?;
    Ok(summary)
}

pub fn resolve_class(class: &ClassRef, registry: &Option<std::path::PathBuf>) -> Result<CriticalExponents, EngineError> {
    match class {
        ClassRef::Explicit(e) => Ok(*e),
        ClassRef::Named(name) => {
            let mut reg = ExponentRegistry::default();
            if let Some(path) = registry {
                reg = reg.merged(ExponentRegistry::load(path).map_err(stage("load registry"))?);
            }
            reg.get(name).map_err(stage("resolve class"))
        }
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(fmt_f64(x)))
}

/// Scaling tasks. Without a run directory, `eval` returns its rows inline.
pub fn run_scaling(p: &ScalingParams, out: Option<&mut RunDir>) -> Result<Value, EngineError> {
    match p {
        ScalingParams::Scales { class, registry, micro, protocol } => {
            let e = resolve_class(class, registry)?;
            let kz = kz_scales(&e, micro, protocol).map_err(stage("kz scales"))?;
            Ok(json!({
                "task": "scales",
                "exponents": e,
                "t_kz": num(kz.t_kz),
                "xi_kz": num(kz.xi_kz),
                "g_kz": num(kz.g_kz),
                "excess_energy": num(excess_energy_scale(&e, &kz)),
            }))
        }
        ScalingParams::Exponent { class, registry, p } => {
            let e = resolve_class(class, registry)?;
            let g = growth_exponent(&e, *p);
            Ok(json!({ "task": "exponent", "exponents": e, "p": num(*p), "exponent": num(g.exponent), "flag": g.flag }))
        }
        ScalingParams::Classify { class, registry, micro, protocol, side, amplitudes, x_c } => {
            let e = resolve_class(class, registry)?;
            let kz = kz_scales(&e, micro, protocol).map_err(stage("kz scales"))?;
            let mut model = ScalingModel::new(e).with_amplitudes(*amplitudes);
            if let Some(x) = x_c {
                model = model.with_x_c(*x);
            }
            let case = classify_case(protocol, &kz, &model, *side).map_err(stage("classify"))?;
            let x_s = protocol.stop_time().map(|t| kz.scaled_time(t));
            Ok(json!({ "task": "classify", "case": case.label(), "x_s": x_s.map(num), "t_kz": num(kz.t_kz) }))
        }
        ScalingParams::Eval { class, registry, function, points, p, x_s, amplitudes, x_c, y_c } => {
            let e = resolve_class(class, registry)?;
            let mut model = ScalingModel::new(e).with_amplitudes(*amplitudes);
            if let Some(x) = x_c {
                model = model.with_x_c(*x);
            }
            if let Some(y) = y_c {
                model = model.with_y_c(*y);
            }
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|&x| {
                    let v = match function {
                        EvalFunction::Sweep => Ok(model.eval_f(x, *p)),
                        EvalFunction::Stopped => model.eval_F(x, x_s.unwrap_or(f64::NAN)),
                        EvalFunction::Thermal => model.eval_h(x),
                        EvalFunction::XStar => model.crossover_xstar(x),
                    };
                    match v {
                        Ok(v) => vec![fmt_f64(x), fmt_f64(v), String::new()],
                        Err(err) => vec![fmt_f64(x), "nan".into(), err.to_string()],
                    }
                })
                .collect();
            let failures = rows.iter().filter(|r| !r[2].is_empty()).count();
            let mut summary = json!({ "task": "eval", "function": function, "points": points.len(), "failures": failures });
            match out {
                Some(out) => {
                    out.write_csv("eval.csv", &["point", "value", "error"], &rows).map_err(stage("write eval.csv"))?;
                    summary["file"] = json!("eval.csv");
                }
                None => {
                    summary["rows"] = rows
                        .iter()
                        .zip(points)
                        .map(|(r, &x)| json!({ "point": num(x), "value": r[1].parse::<f64>().ok().map(num), "error": (!r[2].is_empty()).then(|| r[2].clone()) }))
                        .collect();
                }
            }
            Ok(summary)
        }
    }
}

fn fit_or_note(series: &[SeriesPoint], window: Option<(f64, f64)>, seed: u64, resamples: usize) -> (Option<FitResult>, Option<String>) {
    let Some(w) = window.or_else(|| suggest_window(series)) else {
        return (None, Some("no positive points to fit".into()));
    };
    match fit_power_law(series, w, FitOptions { resamples, seed }) {
        Ok(f) => (Some(f), None),
        Err(e) => {
            log::warn!("power-law fit skipped: {e}");
            (None, Some(e.to_string()))
        }
    }
}

fn fit_json(fit: &Option<FitResult>, note: &Option<String>) -> Value {
    let mut v = json!({ "schema_version": SCHEMA_VERSION, "fit": fit });
    if let Some(n) = note {
        v["note"] = Value::String(n.clone());
    }
    v
}

pub fn run_tfim(p: &TfimParams, out: &mut RunDir) -> Result<Value, EngineError> {
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut drift: f64 = 0.0;
    for &tau in &p.taus {
        let mut spec = ChainSpec::new(p.l, tau, p.p);
        spec.g_end = p.g_end;
        spec.tolerance = p.tolerance;
        if let Some(g) = p.g_start {
            spec.g_start = g;
        }
        log::info!("tfim1d: L = {}, tau = {tau}", p.l);
        let r = ramp_simulate(&spec).map_err(stage("tfim1d ramp"))?;
        drift = drift.max(r.max_norm_drift);
        rows.push(vec![fmt_f64(tau), fmt_f64(r.density), fmt_f64(r.length)]);
        series.push(SeriesPoint { t: tau, y: r.density, err: None });
        if p.write_modes {
            out.write_bytes(&format!("modes/tau_{}.csv", fmt_f64(tau)), r.to_csv().as_bytes()).map_err(stage("write modes"))?;
        }
    }
    out.write_csv("tau_sweep.csv", &["tau", "n", "length"], &rows).map_err(stage("write tau_sweep.csv"))?;
    let (fit, note) = fit_or_note(&series, p.fit_window, FitOptions::default().seed, FitOptions::default().resamples);
    out.write_json("fit.json", &fit_json(&fit, &note)).map_err(stage("write fit.json"))?;
    Ok(json!({
        "l": p.l,
        "ramps": p.taus.len(),
        "max_norm_drift": num(drift),
        "slope": fit.as_ref().map(|f| num(f.exponent)),
        "slope_stderr": fit.as_ref().map(|f| num(f.stderr)),
        "files": ["tau_sweep.csv", "fit.json"],
    }))
}

/// Index of a snapshot directory written by an ising2d protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotIndex {
    pub schema_version: u32,
    pub lx: usize,
    pub ly: usize,
    pub replicas: Vec<ReplicaIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaIndex {
    pub seed: u64,
    pub snapshots: Vec<SnapshotIndexEntry>,
}

/// One row of a length-versus-time table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthRow {
    pub t: u64,
    pub mean: f64,
    pub stderr: f64,
    pub temperature: f64,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pooled structure-factor length with a leave-one-out jackknife error;
/// `NaN` when the estimator declines (no signal, no peak, saturated).
fn pooled_length(fields: &[Field], channel: Channel, method: XiMethod) -> (f64, f64) {
    let xi = match second_moment_xi(fields, channel, method) {
        Ok(x) => x,
        Err(e) => {
            log::warn!("length estimator declined: {e}");
            return (f64::NAN, f64::NAN);
        }
    };
    let n = fields.len();
    if n < 2 {
        return (xi, f64::NAN);
    }
    let jack: Vec<f64> = (0..n)
        .filter_map(|k| {
            let rest: Vec<Field> = fields.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, f)| f.clone()).collect();
            second_moment_xi(&rest, channel, method).ok()
        })
        .collect();
    if jack.len() < n {
        return (xi, f64::NAN);
    }
    let m = jack.iter().sum::<f64>() / n as f64;
    let var = jack.iter().map(|j| (j - m).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (xi, var.sqrt())
}

/// `by_time[i][replica]` snapshots at a common time, reduced to one row per time.
pub fn length_table(by_time: &[Vec<LatticeSnapshot>], estimator: LengthEstimator, channel: Channel) -> Vec<LengthRow> {
    by_time
        .iter()
        .filter(|snaps| !snaps.is_empty())
        .map(|snaps| {
            let s0 = &snaps[0];
            let (mean, stderr) = match estimator {
                LengthEstimator::Walls => {
                    mean_stderr(&snaps.iter().map(|s| defect_length(s.lx, s.ly, &s.spins)).collect::<Vec<_>>())
                }
                LengthEstimator::ExcessWalls => {
                    let rho = equilibrium_wall_density(s0.temperature);
                    mean_stderr(&snaps.iter().map(|s| excess_defect_length(s.lx, s.ly, &s.spins, rho)).collect::<Vec<_>>())
                }
                LengthEstimator::SecondMoment | LengthEstimator::OrnsteinZernike => {
                    let fields: Vec<Field> = snaps.iter().map(|s| Field::from_spins(s.lx, s.ly, &s.spins)).collect();
                    let method = if estimator == LengthEstimator::SecondMoment { XiMethod::SecondMoment } else { XiMethod::OrnsteinZernike };
                    pooled_length(&fields, channel, method)
                }
            };
            LengthRow { t: s0.time, mean, stderr, temperature: s0.temperature }
        })
        .collect()
}

fn length_rows_csv(rows: &[LengthRow]) -> Vec<Vec<String>> {
    rows.iter().map(|r| vec![r.t.to_string(), fmt_f64(r.mean), fmt_f64(r.stderr), fmt_f64(r.temperature)]).collect()
}

fn length_series(rows: &[LengthRow]) -> Vec<SeriesPoint> {
    rows.iter()
        .filter(|r| r.t > 0 && r.mean.is_finite() && r.mean > 0.0)
        .map(|r| SeriesPoint { t: r.t as f64, y: r.mean, err: r.stderr.is_finite().then_some(r.stderr) })
        .collect()
}

const LENGTH_HEADER: [&str; 4] = ["t", "ell_mean", "ell_stderr", "T"];

fn run_ising(p: &IsingParams, cfg: &RunConfig, out: &mut RunDir) -> Result<Value, EngineError> {
    match p {
        IsingParams::Protocol { lx, ly, protocol, length, write_snapshots } => {
            let total = protocol.total_duration();
            let times: Vec<u64> =
                if cfg.snapshots.is_empty() { vec![total] } else { cfg.snapshots.iter().map(|&t| t as u64).collect() };
            log::info!("ising2d: {lx}x{ly}, {} replicas, {} snapshot times", cfg.seeds.len(), times.len());
            let runs = run_ensemble(*lx, *ly, &cfg.seeds, protocol, &times, |s| s.clone()).map_err(stage("ising2d run"))?;
            let mut index = SnapshotIndex { schema_version: SCHEMA_VERSION, lx: *lx, ly: *ly, replicas: Vec::new() };
            if *write_snapshots {
                for (seed, snaps) in cfg.seeds.iter().zip(&runs) {
                    let mut entries = Vec::new();
                    for s in snaps {
                        let rel = format!("snapshots/seed_{seed}/t_{:010}.kzis", s.time);
                        out.write_bytes(&rel, &s.to_bytes()).map_err(stage("write snapshot"))?;
                        entries.push(s.index_entry(rel.trim_start_matches("snapshots/")));
                    }
                    index.replicas.push(ReplicaIndex { seed: *seed, snapshots: entries });
                }
                out.write_json("snapshots/index.json", &index).map_err(stage("write snapshot index"))?;
            }
            let n_times = runs.first().map_or(0, Vec::len);
            let by_time: Vec<Vec<LatticeSnapshot>> =
                (0..n_times).map(|i| runs.iter().map(|r| r[i].clone()).collect()).collect();
            let rows = length_table(&by_time, *length, Channel::Magnetization);
            out.write_csv("lengths.csv", &LENGTH_HEADER, &length_rows_csv(&rows)).map_err(stage("write lengths.csv"))?;
            let last = rows.last();
            Ok(json!({
                "task": "protocol",
                "replicas": cfg.seeds.len(),
                "times": n_times,
                "length_estimator": length,
                "final_length": last.map(|r| num(r.mean)),
                "final_length_stderr": last.map(|r| num(r.stderr)),
                "snapshots_written": write_snapshots,
            }))
        }
        IsingParams::KzRamp { .. } => {
            let kz = p.kz_config(&cfg.seeds).expect("kz ramp params");
            let res = kz_ramp_experiment(&kz).map_err(stage("kz ramp experiment"))?;
            let rows: Vec<Vec<String>> = res
                .rows
                .iter()
                .map(|r| vec![r.tau.to_string(), fmt_f64(r.xi), fmt_f64(r.xi_err), r.seeds.to_string(), r.finite_size_warning.to_string()])
                .collect();
            out.write_csv("kz_ramp.csv", &["tau", "xi", "xi_err", "seeds", "finite_size_warning"], &rows)
                .map_err(stage("write kz_ramp.csv"))?;
            Ok(json!({
                "task": "kz_ramp",
                "exponent": num(res.exponent),
                "exponent_err": num(res.exponent_err),
                "amplitude": num(res.amplitude),
                "excluded_taus": res.excluded_taus,
            }))
        }
    }
}

fn initial_state(p: &RydbergRunParams) -> Result<StateVector, EngineError> {
    let n = p.geometry.sites();
    match &p.initial {
        RydbergInitial::Basis { index } => Ok(StateVector::basis(n, *index)),
        RydbergInitial::Checkpoint { path } => {
            let s = StateVector::read_checkpoint(path).map_err(stage("read checkpoint"))?;
            if s.sites != n {
                return Err(EngineError { stage: "read checkpoint".into(), message: format!("checkpoint has {} sites, geometry {n}", s.sites) });
            }
            Ok(s)
        }
        _ => {
            let mask = p.mask().expect("mask-based initial state");
            rydberg::prepare_domain_wall(&p.geometry, &mask).map_err(stage("prepare initial state"))
        }
    }
}

fn run_rydberg(p: &RydbergRunParams, cfg: &RunConfig, out: &mut RunDir) -> Result<Value, EngineError> {
    let h = Hamiltonian::new(p.geometry, p.hamiltonian).map_err(stage("build hamiltonian"))?;
    let psi0 = initial_state(p)?;
    let total: f64 = p.schedule.iter().map(|s| s.duration).sum();
    let mut times = cfg.snapshots.clone();
    times.push(total);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let opts: EvolveOptions = p.evolve.into();
    let geom = p.geometry;

    let reference: Option<Vec<Vec<f64>>> = if p.reference {
        let neel = rydberg::prepare_domain_wall(&geom, &rydberg::DetuningMask::uniform(geom.sites())).map_err(stage("prepare reference"))?;
        let mut dens = Vec::new();
        log::info!("rydberg: evolving the Neel reference");
        rydberg::evolve(&h, &p.schedule, &neel, &opts, &times, |s| dens.push(s.densities())).map_err(stage("evolve reference"))?;
        Some(dens)
    } else {
        None
    };

    struct Obs {
        t: f64,
        energy: f64,
        m_s: f64,
        s_stag: f64,
        norm: f64,
        dens: Vec<f64>,
    }
    let mut obs: Vec<Obs> = Vec::new();
    let mut energy_err = None;
    log::info!("rydberg: {} sites, t_end = {total}", geom.sites());
    let last = rydberg::evolve(&h, &p.schedule, &psi0, &opts, &times, |s| {
        let (om, de) = drive_at(&p.schedule, s.time).unwrap_or((p.hamiltonian.omega, p.hamiltonian.delta));
        let energy = match h.energy_with(om, de, s) {
            Ok(e) => e,
            Err(e) => {
                energy_err = Some(e);
                f64::NAN
            }
        };
        obs.push(Obs {
            t: s.time,
            energy,
            m_s: s.staggered_magnetization(&geom),
            s_stag: s.staggered_structure_factor(&geom),
            norm: s.norm_sqr(),
            dens: s.densities(),
        });
    })
    .map_err(stage("evolve"))?;
    if let Some(e) = energy_err {
        return Err(stage("energy")(e));
    }

    let excess: Vec<Option<f64>> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| reference.as_ref().map(|r| rydberg::excess_density(&o.dens, &r[i])))
        .collect();
    let rows: Vec<Vec<String>> = obs
        .iter()
        .zip(&excess)
        .map(|(o, e)| {
            vec![
                fmt_f64(o.t),
                fmt_f64(o.energy),
                fmt_f64(o.m_s),
                fmt_f64(o.s_stag),
                fmt_f64(o.norm),
                e.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    out.write_csv("observables.csv", &["t", "energy", "staggered_magnetization", "staggered_structure_factor", "norm", "excess_density"], &rows)
        .map_err(stage("write observables.csv"))?;
    let mut drows = Vec::new();
    for o in &obs {
        for (i, n) in o.dens.iter().enumerate() {
            drows.push(vec![fmt_f64(o.t), i.to_string(), (i / geom.cols).to_string(), (i % geom.cols).to_string(), fmt_f64(*n)]);
        }
    }
    out.write_csv("densities.csv", &["t", "site", "row", "col", "n"], &drows).map_err(stage("write densities.csv"))?;
    if p.checkpoint {
        out.write_bytes("state_final.bin", &last.to_bytes()).map_err(stage("write checkpoint"))?;
    }
    let ex: Vec<f64> = excess.iter().flatten().copied().collect();
    let avg_excess = (!ex.is_empty()).then(|| ex.iter().sum::<f64>() / ex.len() as f64);
    let max_drift = obs.iter().map(|o| (o.norm - 1.0).abs()).fold(0.0, f64::max);
    Ok(json!({
        "sites": geom.sites(),
        "t_end": num(total),
        "snapshots": obs.len(),
        "final_staggered_magnetization": obs.last().map(|o| num(o.m_s)),
        "final_staggered_structure_factor": obs.last().map(|o| num(o.s_stag)),
        "time_averaged_excess_density": avg_excess.map(num),
        "max_norm_drift": num(max_drift),
    }))
}

fn read_series(path: &Path) -> Result<Vec<SeriesPoint>, EngineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(stage("read series"))?;
    let headers = rdr.headers().map_err(stage("read series"))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ti), Some(yi)) = (col("t"), col("y")) else {
        return Err(EngineError { stage: "read series".into(), message: "CSV needs `t` and `y` columns".into() });
    };
    let ei = col("err");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(stage("read series"))?;
        let parse = |i: usize| -> Result<f64, EngineError> {
            rec.get(i).unwrap_or("").trim().parse::<f64>().map_err(|e| EngineError {
                stage: "read series".into(),
                message: format!("row {}: {e}", line + 2),
            })
        };
        let err = match ei {
            Some(i) if !rec.get(i).unwrap_or("").trim().is_empty() => Some(parse(i)?),
            _ => None,
        };
        out.push(SeriesPoint { t: parse(ti)?, y: parse(yi)?, err });
    }
    Ok(out)
}

fn run_estimate(p: &EstimateParams, cfg: &RunConfig, out: &mut RunDir) -> Result<Value, EngineError> {
    let seed = cfg.seeds[0];
    match p {
        EstimateParams::Fit { series, window, resamples } => {
            let pts = read_series(series)?;
            let w = window.or_else(|| suggest_window(&pts)).ok_or_else(|| EngineError {
                stage: "fit".into(),
                message: "series has no positive points".into(),
            })?;
            let fit = fit_power_law(&pts, w, FitOptions { resamples: *resamples, seed }).map_err(stage("fit"))?;
            out.write_json("fit.json", &fit_json(&Some(fit.clone()), &None)).map_err(stage("write fit.json"))?;
            Ok(json!({ "task": "fit", "exponent": num(fit.exponent), "stderr": num(fit.stderr), "points": fit.points }))
        }
        EstimateParams::Lengths { index, length, channel, fit_window } => {
            let text = fs::read_to_string(index).map_err(stage("read index"))?;
            let idx: SnapshotIndex = serde_json::from_str(&text).map_err(stage("parse index"))?;
            let dir = index.parent().unwrap_or(Path::new("."));
            let mut by_time: BTreeMap<u64, Vec<LatticeSnapshot>> = BTreeMap::new();
            for rep in &idx.replicas {
                for e in &rep.snapshots {
                    let s = LatticeSnapshot::read(&dir.join(&e.file)).map_err(stage("read snapshot"))?;
                    by_time.entry(e.time).or_default().push(s);
                }
            }
            let groups: Vec<Vec<LatticeSnapshot>> = by_time.into_values().collect();
            let rows = length_table(&groups, *length, *channel);
            out.write_csv("lengths.csv", &LENGTH_HEADER, &length_rows_csv(&rows)).map_err(stage("write lengths.csv"))?;
            let (fit, note) = fit_or_note(&length_series(&rows), *fit_window, seed, FitOptions::default().resamples);
            out.write_json("fit.json", &fit_json(&fit, &note)).map_err(stage("write fit.json"))?;
            Ok(json!({
                "task": "lengths",
                "times": rows.len(),
                "length_estimator": length,
                "exponent": fit.as_ref().map(|f| num(f.exponent)),
                "stderr": fit.as_ref().map(|f| num(f.stderr)),
            }))
        }
    }
}

fn read_curves(path: &Path) -> Result<Vec<Curve>, EngineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(stage("read curves"))?;
    let headers = rdr.headers().map_err(stage("read curves"))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ai), Some(ti), Some(li)) = (col("tau"), col("t"), col("l")) else {
        return Err(EngineError { stage: "read curves".into(), message: "CSV needs `tau`, `t` and `l` columns".into() });
    };
    let mut curves: Vec<Curve> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(stage("read curves"))?;
        let f = |i: usize| -> Result<f64, EngineError> {
            rec.get(i).unwrap_or("").trim().parse::<f64>().map_err(|e| EngineError {
                stage: "read curves".into(),
                message: format!("row {}: {e}", line + 2),
            })
        };
        let (tau, t, l) = (f(ai)?, f(ti)?, f(li)?);
        match curves.iter_mut().find(|c| c.tau == tau) {
            Some(c) => {
                c.t.push(t);
                c.l.push(l);
            }
            None => curves.push(Curve { tau, t: vec![t], l: vec![l] }),
        }
    }
    Ok(curves)
}

fn run_collapse(p: &CollapseParams, out: &mut RunDir) -> Result<Value, EngineError> {
    let curves = read_curves(&p.curves)?;
    let opts = CollapseOptions { bandwidth: p.bandwidth, alpha_xi_range: p.alpha_xi_range, alpha_t_range: p.alpha_t_range, grid: p.grid };
    let res = optimize_collapse(&curves, &opts).map_err(stage("collapse"))?;
    let mut rows = Vec::new();
    for c in &curves {
        for (t, l) in c.t.iter().zip(&c.l) {
            let x = t / c.tau.powf(res.alpha_t);
            let y = l / c.tau.powf(res.alpha_xi);
            rows.push(vec![fmt_f64(c.tau), fmt_f64(*t), fmt_f64(*l), fmt_f64(x), fmt_f64(y)]);
        }
    }
    out.write_csv("collapsed.csv", &["tau", "t", "l", "x", "y"], &rows).map_err(stage("write collapsed.csv"))?;
    out.write_json("collapse.json", &json!({ "schema_version": SCHEMA_VERSION, "collapse": res })).map_err(stage("write collapse.json"))?;
    Ok(json!({
        "curves": curves.len(),
        "alpha_xi": num(res.alpha_xi),
        "alpha_t": num(res.alpha_t),
        "alpha_xi_err": num(res.alpha_xi_err),
        "alpha_t_err": num(res.alpha_t_err),
        "residual": num(res.residual),
    }))
}
