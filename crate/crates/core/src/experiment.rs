//! Sweep orchestration, result files and the oracle comparison.
//!
//! Every `(policy, sweep value, seed)` triple becomes one row of `runs.csv`.
//! Rows already present for the same config hash are reused, so an
//! interrupted sweep resumes where it stopped and ends with the same bytes
//! as an uninterrupted one.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::baselines::{calibrate_baseline, calibrate_knob, Baseline, BaselineConfig, Calibration};
use crate::config::{ExperimentConfig, PolicyName, SweepAxis};
use crate::env::{ChannelState, EnvSpec};
use crate::error::{Error, Result};
use crate::mdp::{build_mdp, evaluate_policy_on_mdp, relative_value_iteration, write_solution_csv};
use crate::multimec::{simulate_fleet, FleetOptions, FleetPolicyConfig, FleetSlot, FleetSpec};
use crate::plot::{render_svg, Chart, Point, Series};
use crate::policy::{ClosedFormPolicy, Observation, Policy};
use crate::simulator::{monte_carlo, run, write_slot_csv, RunMetrics, RunOptions, Summary};
use crate::sysmodel::SystemParams;

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const ORACLE_VALUES_FILE: &str = "oracle_values.csv";

const RUN_HEADER: [&str; 11] = [
    "config_hash",
    "policy",
    "axis",
    "value",
    "seed",
    "knob",
    "avg_delay",
    "avg_power",
    "avg_cost",
    "max_q_l",
    "max_q_r",
];

const SUMMARY_HEADER: [&str; 14] = [
    "policy",
    "axis",
    "value",
    "config_hash",
    "seed_lo",
    "seed_hi",
    "runs",
    "knob",
    "delay_mean",
    "delay_ci",
    "power_mean",
    "power_ci",
    "cost_mean",
    "cost_ci",
];

/// Axis label used when nothing is swept.
pub const NO_AXIS: &str = "none";

/// One simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub config_hash: String,
    pub policy: String,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    /// β of the proposed policy or the calibrated baseline knob.
    pub knob: f64,
    pub avg_delay: f64,
    pub avg_power: f64,
    pub avg_cost: f64,
    pub max_q_l: f64,
    pub max_q_r: f64,
}

impl RunRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.config_hash.clone(),
            self.policy.clone(),
            self.axis.clone(),
            self.value.to_string(),
            self.seed.to_string(),
            self.knob.to_string(),
            self.avg_delay.to_string(),
            self.avg_power.to_string(),
            self.avg_cost.to_string(),
            self.max_q_l.to_string(),
            self.max_q_r.to_string(),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Option<Self> {
        let f = |i: usize| rec.get(i)?.parse::<f64>().ok();
        Some(Self {
            config_hash: rec.get(0)?.to_string(),
            policy: rec.get(1)?.to_string(),
            axis: rec.get(2)?.to_string(),
            value: f(3)?,
            seed: rec.get(4)?.parse().ok()?,
            knob: f(5)?,
            avg_delay: f(6)?,
            avg_power: f(7)?,
            avg_cost: f(8)?,
            max_q_l: f(9)?,
            max_q_r: f(10)?,
        })
    }
}

/// Across-seed statistics of one (policy, sweep value).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub axis: String,
    pub value: f64,
    pub config_hash: String,
    pub seed_lo: u64,
    pub seed_hi: u64,
    pub knob: f64,
    pub delay: Summary,
    pub power: Summary,
    pub cost: Summary,
}

impl SummaryRow {
    fn of(rows: &[RunRow]) -> Self {
        let first = &rows[0];
        let pick = |f: fn(&RunRow) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            policy: first.policy.clone(),
            axis: first.axis.clone(),
            value: first.value,
            config_hash: first.config_hash.clone(),
            seed_lo: rows.iter().map(|r| r.seed).min().unwrap_or(0),
            seed_hi: rows.iter().map(|r| r.seed).max().unwrap_or(0),
            knob: first.knob,
            delay: pick(|r| r.avg_delay),
            power: pick(|r| r.avg_power),
            cost: pick(|r| r.avg_cost),
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.policy.clone(),
            self.axis.clone(),
            self.value.to_string(),
            self.config_hash.clone(),
            self.seed_lo.to_string(),
            self.seed_hi.to_string(),
            self.delay.n.to_string(),
            self.knob.to_string(),
            self.delay.mean.to_string(),
            self.delay.ci_half.to_string(),
            self.power.mean.to_string(),
            self.power.ci_half.to_string(),
            self.cost.mean.to_string(),
            self.cost.ci_half.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub runs_path: PathBuf,
    pub summary_path: PathBuf,
    pub traces: Vec<PathBuf>,
    /// Runs simulated by this invocation.
    pub computed: usize,
    /// Runs taken from an earlier `runs.csv`.
    pub reused: usize,
}

/// Everything that varies with the sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetup {
    pub params: SystemParams,
    pub spec: EnvSpec,
    pub power_budget: f64,
    pub mts: usize,
    pub servers: usize,
}

/// Applies one sweep value on top of the base configuration.
pub fn point_setup(cfg: &ExperimentConfig, value: Option<f64>) -> Result<PointSetup> {
    let mut params = cfg.params;
    let mut arrivals = cfg.arrivals.clone();
    let mut budget = cfg.power_budget;
    let mut csi_delay = cfg.csi_delay;
    let (mut mts, mut servers) = cfg.fleet.map_or((1, 1), |f| (f.mts, f.servers));
    if let (Some(sweep), Some(v)) = (&cfg.sweep, value) {
        sweep.axis.check(v).map_err(Error::Validation)?;
        match sweep.axis {
            SweepAxis::Beta => params.beta = v,
            SweepAxis::ArrivalRate => {
                params.arrival_rate = v;
                arrivals = arrivals.rescaled_to(v, params.tau)?;
            }
            SweepAxis::PowerBudget => budget = v,
            SweepAxis::Capacitance => params.capacitance = v,
            SweepAxis::RemoteRate => params.remote_rate = v,
            SweepAxis::Mts => mts = v as usize,
            SweepAxis::Servers => servers = v as usize,
            SweepAxis::CsiDelay => csi_delay = v as usize,
            SweepAxis::EpsFloor => params.eps_floor = v,
        }
    }
    params.validate()?;
    Ok(PointSetup {
        params,
        spec: EnvSpec {
            arrivals,
            service: cfg.service,
            csi_delay,
        },
        power_budget: budget,
        mts,
        servers,
    })
}

fn run_options(cfg: &ExperimentConfig, record_trace: bool) -> RunOptions {
    RunOptions {
        warmup: cfg.warmup,
        transfer: cfg.transfer,
        record_trace,
        ..RunOptions::new(cfg.horizon)
    }
}

fn fleet_parts(
    cfg: &ExperimentConfig,
    pt: &PointSetup,
    record_trace: bool,
) -> (FleetSpec, FleetPolicyConfig, FleetOptions) {
    let f = cfg.fleet.unwrap_or_default();
    let mut spec = FleetSpec::uniform(&pt.params, pt.mts, pt.servers, pt.params.remote_rate);
    spec.service = cfg.service;
    spec.csi_delay = pt.spec.csi_delay;
    for mt in &mut spec.mts {
        mt.arrivals = pt.spec.arrivals.clone();
    }
    let policy = FleetPolicyConfig {
        window: cfg.policy.window,
        input: cfg.policy.input,
        smoothing: f.smoothing,
        p_max: cfg.policy.p_max,
    };
    let opts = FleetOptions {
        warmup: cfg.warmup,
        transfer: cfg.transfer,
        attribution: f.attribution,
        control_delay: f.control_delay,
        record_trace,
        ..FleetOptions::new(cfg.horizon)
    };
    (spec, policy, opts)
}

/// Builds a fresh policy instance for one run.
pub fn make_policy(
    name: PolicyName,
    params: &SystemParams,
    cfg: &ExperimentConfig,
    budget: f64,
    knob: f64,
) -> Result<Box<dyn Policy>> {
    Ok(match name {
        PolicyName::Proposed => {
            let p = SystemParams { beta: knob, ..*params };
            Box::new(ClosedFormPolicy::new(&p, cfg.policy)?)
        }
        PolicyName::Baseline(kind) => Box::new(Baseline::with_knob(params, BaselineConfig::new(kind, budget), knob)?),
    })
}

/// Finds the knob giving `budget` watts of mean power on the config's seeds.
///
/// For the proposed policy the knob is β (bracketed secant in log space);
/// for baselines it is their own power knob.
pub fn calibrate_policy(name: PolicyName, cfg: &ExperimentConfig, pt: &PointSetup, budget: f64) -> Result<Calibration> {
    let opts = run_options(cfg, false);
    match name {
        PolicyName::Proposed => {
            let measure = |beta: f64| -> Result<f64> {
                let agg = monte_carlo(
                    &pt.params,
                    || make_policy(name, &pt.params, cfg, budget, beta),
                    &pt.spec,
                    &opts,
                    cfg.runs,
                    cfg.base_seed,
                )?;
                Ok(agg.power.mean)
            };
            calibrate_knob(measure, budget, pt.params.beta, false)
        }
        PolicyName::Baseline(kind) => calibrate_baseline(
            &pt.params,
            &BaselineConfig::new(kind, budget),
            &pt.spec,
            &opts,
            cfg.runs,
            cfg.base_seed,
        ),
    }
}

fn knob_for(name: PolicyName, cfg: &ExperimentConfig, pt: &PointSetup) -> Result<f64> {
    match name {
        PolicyName::Proposed if !cfg.fair => Ok(pt.params.beta),
        _ => {
            let cal = calibrate_policy(name, cfg, pt, pt.power_budget)?;
            info!(
                "calibrated {name}: knob {:.6e}, power {:.6e} W ({} evaluations)",
                cal.knob, cal.power, cal.evaluations
            );
            Ok(cal.knob)
        }
    }
}

fn row_from(cfg: &ExperimentConfig, name: PolicyName, axis: &str, value: f64, knob: f64, m: &RunMetrics) -> RunRow {
    RunRow {
        config_hash: cfg.hash.clone(),
        policy: name.to_string(),
        axis: axis.to_string(),
        value,
        seed: m.seed,
        knob,
        avg_delay: m.avg_delay,
        avg_power: m.avg_power,
        avg_cost: m.avg_cost,
        max_q_l: m.max_q_l,
        max_q_r: m.max_q_r,
    }
}

fn simulate_seeds(
    cfg: &ExperimentConfig,
    name: PolicyName,
    pt: &PointSetup,
    knob: f64,
    seeds: &[u64],
    axis: &str,
    value: f64,
) -> Result<Vec<RunRow>> {
    if cfg.is_fleet() {
        let (spec, policy, opts) = fleet_parts(cfg, pt, false);
        return seeds
            .par_iter()
            .map(|&seed| {
                let m = simulate_fleet(&spec, policy, &opts, seed)?.metrics;
                let p = &pt.params;
                Ok(RunRow {
                    config_hash: cfg.hash.clone(),
                    policy: name.to_string(),
                    axis: axis.to_string(),
                    value,
                    seed,
                    knob,
                    avg_delay: m.delay,
                    avg_power: m.power,
                    avg_cost: p.alpha * m.delay + p.beta * m.power,
                    max_q_l: m.max_q_l,
                    max_q_r: m.max_q_r,
                })
            })
            .collect();
    }
    let opts = run_options(cfg, false);
    seeds
        .par_iter()
        .map(|&seed| {
            let mut policy = make_policy(name, &pt.params, cfg, pt.power_budget, knob)?;
            let out = run(&pt.params, policy.as_mut(), &pt.spec, &opts, seed)?;
            Ok(row_from(cfg, name, axis, value, knob, &out.metrics))
        })
        .collect()
}

fn write_fleet_trace<W: Write>(w: W, trace: &[FleetSlot]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slot", "mt", "server", "q_l", "q_r_server", "p_l", "p_t"])?;
    for s in trace {
        for (i, d) in s.decisions.iter().enumerate() {
            let server = s.access.server_of(i);
            let q_r = server.map_or(f64::NAN, |j| s.state.q_r[j]);
            out.write_record([
                s.slot.to_string(),
                i.to_string(),
                server.map_or_else(|| "-".to_string(), |j| j.to_string()),
                s.state.q_l[i].to_string(),
                q_r.to_string(),
                d.p_l.to_string(),
                d.p_t.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn dump_trace(cfg: &ExperimentConfig, name: PolicyName, pt: &PointSetup, knob: f64, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    if cfg.is_fleet() {
        let (spec, policy, opts) = fleet_parts(cfg, pt, true);
        let out = simulate_fleet(&spec, policy, &opts, cfg.base_seed)?;
        return write_fleet_trace(std::io::BufWriter::new(file), &out.trace);
    }
    let mut policy = make_policy(name, &pt.params, cfg, pt.power_budget, knob)?;
    let out = run(
        &pt.params,
        policy.as_mut(),
        &pt.spec,
        &run_options(cfg, true),
        cfg.base_seed,
    )?;
    write_slot_csv(std::io::BufWriter::new(file), &out.trace)
}

/// Fails early when `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Rows of an earlier `runs.csv`, or nothing if absent or foreign.
pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(RUN_HEADER) {
        warn!("{} has an unexpected header; ignoring it", path.display());
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        match RunRow::parse(&rec?) {
            Some(r) => rows.push(r),
            None => warn!("skipping malformed row in {}", path.display()),
        }
    }
    Ok(rows)
}

fn write_atomic(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a summary file written by [`run_experiment`].
pub fn read_summary(path: &Path) -> Result<Vec<HashMap<String, String>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    rdr.records()
        .map(|rec| Ok(header.iter().cloned().zip(rec?.iter().map(str::to_string)).collect()))
        .collect()
}

/// Runs the configured sweep and writes `runs.csv`, `summary.csv` and
/// optional traces into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.policies.is_empty() {
        return Err(Error::Validation("at least one policy is required".into()));
    }
    let dir = &cfg.out_dir;
    ensure_writable(dir)?;
    let runs_path = dir.join(RUNS_FILE);
    let summary_path = dir.join(SUMMARY_FILE);

    let axis = cfg
        .sweep
        .as_ref()
        .map_or(NO_AXIS.to_string(), |s| s.axis.key().to_string());
    let key = |policy: &str, value: f64, seed: u64| (policy.to_string(), value.to_bits(), seed);
    let cache: HashMap<_, RunRow> = read_runs(&runs_path)?
        .into_iter()
        .filter(|r| r.config_hash == cfg.hash && r.axis == axis)
        .map(|r| (key(&r.policy, r.value, r.seed), r))
        .collect();

    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|k| cfg.base_seed + k).collect();
    let mut groups: Vec<Vec<RunRow>> = Vec::new();
    let mut traces = Vec::new();
    let (mut computed, mut reused) = (0, 0);

    for (pi, point) in cfg.points().into_iter().enumerate() {
        let value = point.unwrap_or(0.0);
        let pt = point_setup(cfg, point)?;
        for &name in &cfg.policies {
            let have: Vec<Option<RunRow>> = seeds
                .iter()
                .map(|&s| cache.get(&key(name.name(), value, s)).cloned())
                .collect();
            let missing: Vec<u64> = seeds
                .iter()
                .zip(&have)
                .filter(|(_, h)| h.is_none())
                .map(|(s, _)| *s)
                .collect();
            let knob = match have.iter().flatten().next() {
                Some(r) => r.knob,
                None => knob_for(name, cfg, &pt)?,
            };
            let fresh = if missing.is_empty() {
                Vec::new()
            } else {
                info!("{name} at {axis} = {value}: simulating {} runs", missing.len());
                simulate_seeds(cfg, name, &pt, knob, &missing, &axis, value)?
            };
            computed += fresh.len();
            reused += seeds.len() - missing.len();
            let mut fresh = fresh.into_iter();
            let rows: Vec<RunRow> = have
                .into_iter()
                .map(|h| h.or_else(|| fresh.next()).expect("one row per seed"))
                .collect();
            groups.push(rows);
            write_atomic(&runs_path, &RUN_HEADER, groups.iter().flatten().map(RunRow::record))?;

            if cfg.trace {
                let path = dir.join(format!("trace_{name}_{pi}.csv"));
                dump_trace(cfg, name, &pt, knob, &path)?;
                traces.push(path);
            }
        }
    }

    let summary: Vec<SummaryRow> = groups.iter().map(|g| SummaryRow::of(g)).collect();
    write_atomic(&summary_path, &SUMMARY_HEADER, summary.iter().map(SummaryRow::record))?;
    Ok(ExperimentOutput {
        runs: groups.into_iter().flatten().collect(),
        summary,
        runs_path,
        summary_path,
        traces,
        computed,
        reused,
    })
}

/// One chart per sweep axis from a summary file: mean delay with CI whiskers,
/// one series per policy. Returns the files written.
pub fn emit_plots(summary_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_summary(summary_path)?;
    if rows.is_empty() {
        warn!("{} is empty; no plots written", summary_path.display());
        return Ok(Vec::new());
    }
    let mut axes: Vec<String> = Vec::new();
    let mut series: HashMap<(String, String), Vec<Point>> = HashMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for row in &rows {
        let get = |k: &str| row.get(k).map(String::as_str).unwrap_or("");
        let axis = get("axis").to_string();
        if axis == NO_AXIS {
            continue;
        }
        let num = |k: &str| get(k).parse::<f64>().unwrap_or(f64::NAN);
        let (x, y, ci) = (num("value"), num("delay_mean"), num("delay_ci"));
        if !x.is_finite() || !y.is_finite() {
            warn!("skipping {} point at {axis} = {x}: non-finite cell", get("policy"));
            continue;
        }
        if !axes.contains(&axis) {
            axes.push(axis.clone());
        }
        let k = (axis, get("policy").to_string());
        if !series.contains_key(&k) {
            order.push(k.clone());
        }
        series.entry(k).or_default().push(Point {
            x,
            y,
            ci: if ci.is_finite() { ci } else { 0.0 },
        });
    }
    if axes.is_empty() {
        warn!("{} has no sweep points to plot", summary_path.display());
        return Ok(Vec::new());
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for axis in axes {
        let chart = Chart {
            title: format!("Mean delay vs {axis}"),
            x_label: axis.clone(),
            y_label: "mean delay (s)".into(),
            series: order
                .iter()
                .filter(|(a, _)| *a == axis)
                .map(|k| Series {
                    name: k.1.clone(),
                    points: series[k].clone(),
                })
                .collect(),
        };
        let path = out_dir.join(format!("{axis}_delay.svg"));
        fs::write(&path, render_svg(&chart))?;
        files.push(path);
    }
    Ok(files)
}

/// One policy's long-run cost on the discretized chain.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub policy: String,
    pub theta: f64,
    /// `theta / θ*`.
    pub ratio: f64,
    pub boundary_mass: f64,
    pub classes: usize,
    pub resolution_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub states: usize,
    pub sweeps: usize,
    pub span: f64,
    pub rows: Vec<OracleRow>,
    pub path: PathBuf,
}

/// Solves the configured MDP by RVI and evaluates every listed policy on it.
///
/// The proposed policy is evaluated as a stationary rule, frozen at its
/// initial rate estimate. Baselines are calibrated to the power budget in
/// simulation first.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<OracleReport> {
    ensure_writable(&cfg.out_dir)?;
    let pt = point_setup(cfg, None)?;
    let params = pt.params;
    let mdp = build_mdp(&params, cfg.oracle.clone())?;
    info!("oracle: {} states, {} actions", mdp.num_states(), mdp.num_actions());
    let sol = relative_value_iteration(&mdp)?;
    info!("oracle: θ* = {} after {} sweeps", sol.theta, sol.sweeps);
    let values = fs::File::create(cfg.out_dir.join(ORACLE_VALUES_FILE))?;
    write_solution_csv(std::io::BufWriter::new(values), &mdp, &sol)?;

    let optimal: Vec<_> = (0..mdp.num_states()).map(|i| sol.decision(&mdp, i)).collect();
    let mut evals = vec![("optimal".to_string(), crate::mdp::evaluate_decisions(&mdp, &optimal)?)];
    for &name in &cfg.policies {
        let ev = match name {
            PolicyName::Proposed => {
                let pol = ClosedFormPolicy::new(&params, cfg.policy)?;
                evaluate_policy_on_mdp(&mdp, |q_l, q_r, h| pol.decide_with(q_l, q_r, h))?
            }
            PolicyName::Baseline(_) => {
                let knob = knob_for(name, cfg, &pt)?;
                let base = make_policy(name, &params, cfg, pt.power_budget, knob)?;
                let base = std::sync::Mutex::new(base);
                evaluate_policy_on_mdp(&mdp, |q_l, q_r, channel: ChannelState| {
                    let obs = Observation {
                        slot: 0,
                        q_l,
                        q_r,
                        channel,
                    };
                    base.lock().expect("baseline lock").decide(&obs)
                })?
            }
        };
        evals.push((name.to_string(), ev));
    }

    let rows: Vec<OracleRow> = evals
        .into_iter()
        .map(|(policy, ev)| OracleRow {
            ratio: ev.theta / sol.theta,
            theta: ev.theta,
            boundary_mass: ev.boundary_mass,
            classes: ev.classes.len(),
            resolution_warning: ev.resolution_warning(),
            policy,
        })
        .collect();
    let path = cfg.out_dir.join(ORACLE_FILE);
    write_atomic(
        &path,
        &[
            "policy",
            "theta",
            "ratio",
            "boundary_mass",
            "classes",
            "resolution_warning",
        ],
        rows.iter().map(|r| {
            vec![
                r.policy.clone(),
                r.theta.to_string(),
                r.ratio.to_string(),
                r.boundary_mass.to_string(),
                r.classes.to_string(),
                r.resolution_warning.to_string(),
            ]
        }),
    )?;
    Ok(OracleReport {
        states: mdp.num_states(),
        sweeps: sol.sweeps,
        span: sol.span,
        rows,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    fn config(text: &str, dir: &Path) -> ExperimentConfig {
        let mut cfg = parse_str(text, dir).unwrap();
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn point_setup_applies_axis() {
        let cfg = parse_str("lambda_sweep = 2, 3", Path::new(".")).unwrap();
        let pt = point_setup(&cfg, Some(3.0)).unwrap();
        assert_eq!(pt.params.arrival_rate, 3.0);
        assert_eq!(pt.spec.arrivals.rate, 3.0);
        let cfg = parse_str("csi_delay_sweep = 0, 4", Path::new(".")).unwrap();
        assert_eq!(point_setup(&cfg, Some(4.0)).unwrap().spec.csi_delay, 4);
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("runs = 3\nhorizon = 40\nbeta_sweep = 10, 1000", dir.path());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.runs.len(), 6);
        assert_eq!(out.summary.len(), 2);
        assert_eq!(read_runs(&out.runs_path).unwrap(), out.runs);
        let again = run_experiment(&cfg).unwrap();
        assert_eq!((again.computed, again.reused), (0, 6));
    }

    #[test]
    fn no_sweep_means_no_plot() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("runs = 2\nhorizon = 20", dir.path());
        let out = run_experiment(&cfg).unwrap();
        assert!(emit_plots(&out.summary_path, dir.path()).unwrap().is_empty());
    }
}
