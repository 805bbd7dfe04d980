//! Slotted simulation of the cascaded local/remote queues.

use std::io::Write;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{ChannelHistory, EnvSpec, Environment, SlotDraw};
use crate::error::{Error, Result};
use crate::policy::{Decision, Observation, Policy, PolicyDiagnostics};
use crate::sysmodel::{local_rate_unchecked, SystemParams};

/// Local and remote backlogs in packets.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QueueState {
    pub q_l: f64,
    pub q_r: f64,
}

/// How transmitted packets enter the remote queue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TransferMode {
    /// Transfers are limited by the local backlog left after local service.
    #[default]
    Capped,
    /// The full `v_t·τ` is credited to the remote queue.
    Strict,
}

/// Everything that happened in one slot. Queues are the start-of-slot state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub gain: f64,
    /// Gain the policy decided on (differs under stale CSI).
    pub gain_used: f64,
    pub arrivals: f64,
    pub p_l: f64,
    pub p_t: f64,
    pub v_l: f64,
    pub v_t: f64,
    pub v_out: f64,
    pub served_local: f64,
    pub served_tx: f64,
    pub served_remote: f64,
    pub q_l: f64,
    pub q_r: f64,
    pub cost: f64,
}

pub const SLOT_CSV_HEADER: &str =
    "slot,gain,gain_used,arrivals,p_l,p_t,v_l,v_t,v_out,served_local,served_tx,served_remote,q_l,q_r,cost";

impl SlotRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.slot,
            self.gain,
            self.gain_used,
            self.arrivals,
            self.p_l,
            self.p_t,
            self.v_l,
            self.v_t,
            self.v_out,
            self.served_local,
            self.served_tx,
            self.served_remote,
            self.q_l,
            self.q_r,
            self.cost
        )
    }
}

pub fn write_slot_csv<W: Write>(mut w: W, records: &[SlotRecord]) -> Result<()> {
    writeln!(w, "{SLOT_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Stage cost `(α/λ̄)(Q_l + Q_r) + β(P_l + P_t)`.
pub fn stage_cost(params: &SystemParams, state: QueueState, d: Decision) -> f64 {
    params.alpha / params.arrival_rate * (state.q_l + state.q_r) + params.beta * (d.p_l + d.p_t)
}

/// Advances the queues by one slot.
pub fn step(
    state: QueueState,
    decision: Decision,
    draw: &SlotDraw,
    params: &SystemParams,
    mode: TransferMode,
) -> (QueueState, SlotRecord) {
    let tau = params.tau;
    let v_l = local_rate_unchecked(decision.p_l, draw.scale_factor, params.capacitance);
    let v_t = params.tx_rate_unchecked(decision.p_t, draw.channel.gain);
    let local_budget = v_l * tau;
    let tx_budget = v_t * tau;

    let q_l_next = (state.q_l - tx_budget - local_budget).max(0.0) + draw.arrivals;
    let served_local = local_budget.min(state.q_l);
    let after_local = (state.q_l - local_budget).max(0.0);
    let served_tx = match mode {
        TransferMode::Capped => tx_budget.min(after_local),
        TransferMode::Strict => tx_budget,
    };
    let remote_budget = draw.remote_rate * tau;
    let served_remote = remote_budget.min(state.q_r);
    let q_r_next = (state.q_r - remote_budget).max(0.0) + served_tx;

    let record = SlotRecord {
        slot: 0,
        gain: draw.channel.gain,
        gain_used: draw.channel.gain,
        arrivals: draw.arrivals,
        p_l: decision.p_l,
        p_t: decision.p_t,
        v_l,
        v_t,
        v_out: draw.remote_rate,
        served_local,
        served_tx,
        served_remote,
        q_l: state.q_l,
        q_r: state.q_r,
        cost: stage_cost(params, state, decision),
    };
    (
        QueueState {
            q_l: q_l_next,
            q_r: q_r_next,
        },
        record,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub horizon: usize,
    /// Leading slots excluded from the averages.
    pub warmup: usize,
    pub transfer: TransferMode,
    pub initial: QueueState,
    /// Keep the per-slot `(Q_l, Q_r)` series in the metrics.
    pub record_series: bool,
    /// Keep every [`SlotRecord`].
    pub record_trace: bool,
}

impl RunOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            warmup: 0,
            transfer: TransferMode::Capped,
            initial: QueueState::default(),
            record_series: false,
            record_trace: false,
        }
    }
}

/// Per-run summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub slots: usize,
    pub avg_delay: f64,
    pub avg_power: f64,
    pub avg_local_power: f64,
    pub avg_tx_power: f64,
    pub avg_cost: f64,
    pub mean_q_l: f64,
    pub mean_q_r: f64,
    pub max_q_l: f64,
    pub max_q_r: f64,
    pub arrivals_total: f64,
    pub served_local_total: f64,
    pub served_remote_total: f64,
    pub final_state: QueueState,
    pub stale_csi_fallbacks: u64,
    pub policy: PolicyDiagnostics,
    /// Start-of-slot `(Q_l, Q_r)` for every slot, when requested.
    pub queue_series: Vec<(f64, f64)>,
}

impl RunMetrics {
    /// `arrivals − served_local − served_remote − Q_l(end) − Q_r(end)`, relative
    /// to the total arrivals (including the initial backlog).
    pub fn conservation_error(&self, initial: QueueState) -> f64 {
        let inflow = self.arrivals_total + initial.q_l + initial.q_r;
        let outflow = self.served_local_total + self.served_remote_total + self.final_state.q_l + self.final_state.q_r;
        (inflow - outflow).abs() / inflow.max(1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trace: Vec<SlotRecord>,
}

/// Simulates one closed-loop run.
pub fn run(
    params: &SystemParams,
    policy: &mut dyn Policy,
    spec: &EnvSpec,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunOutput> {
    let mut env = Environment::new(params, spec, seed);
    run_in(params, policy, &mut env, opts, seed)
}

/// Like [`run`] with a caller-supplied environment.
pub fn run_in(
    params: &SystemParams,
    policy: &mut dyn Policy,
    env: &mut Environment,
    opts: &RunOptions,
    seed: u64,
) -> Result<RunOutput> {
    if opts.horizon == 0 {
        return Err(Error::contract("horizon must be at least one slot"));
    }
    let delay = env.spec().csi_delay;
    let mut history = ChannelHistory::new(delay);
    let mut state = opts.initial;
    let mut acc = Accumulator::default();
    let mut trace = Vec::new();
    let mut series = Vec::new();
    let mut stale_fallbacks = 0u64;

    for slot in 0..opts.horizon {
        let draw = env.next_slot()?;
        history.push(draw.channel);
        let csi = history.stale(draw.channel, delay);
        if csi.fell_back {
            stale_fallbacks += 1;
        }
        let obs = Observation {
            slot,
            q_l: state.q_l,
            q_r: state.q_r,
            channel: csi.channel,
        };
        let d = policy.decide(&obs)?;
        if !(d.p_l >= 0.0 && d.p_t >= 0.0 && d.p_l.is_finite() && d.p_t.is_finite()) {
            return Err(Error::contract(format!(
                "policy {} returned invalid powers ({}, {}) at slot {slot}",
                policy.name(),
                d.p_l,
                d.p_t
            )));
        }
        let (next, mut rec) = step(state, d, &draw, params, opts.transfer);
        rec.slot = slot;
        rec.gain_used = csi.channel.gain;
        policy.observe(&rec);

        acc.totals(&rec);
        if slot >= opts.warmup {
            acc.average(&rec);
        }
        if opts.record_series {
            series.push((state.q_l, state.q_r));
        }
        if opts.record_trace {
            trace.push(rec);
        }
        state = next;
    }

    let n = acc.count.max(1) as f64;
    let mean_q_l = acc.q_l / n;
    let mean_q_r = acc.q_r / n;
    let metrics = RunMetrics {
        seed,
        slots: acc.count,
        avg_delay: (acc.q_l + acc.q_r) / n / params.arrival_rate,
        avg_power: (acc.p_l + acc.p_t) / n,
        avg_local_power: acc.p_l / n,
        avg_tx_power: acc.p_t / n,
        avg_cost: acc.cost / n,
        mean_q_l,
        mean_q_r,
        max_q_l: acc.max_q_l.max(state.q_l),
        max_q_r: acc.max_q_r.max(state.q_r),
        arrivals_total: acc.arrivals,
        served_local_total: acc.served_local,
        served_remote_total: acc.served_remote,
        final_state: state,
        stale_csi_fallbacks: stale_fallbacks,
        policy: policy.diagnostics(),
        queue_series: series,
    };
    Ok(RunOutput { metrics, trace })
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    q_l: f64,
    q_r: f64,
    p_l: f64,
    p_t: f64,
    cost: f64,
    max_q_l: f64,
    max_q_r: f64,
    arrivals: f64,
    served_local: f64,
    served_remote: f64,
}

impl Accumulator {
    fn totals(&mut self, r: &SlotRecord) {
        self.arrivals += r.arrivals;
        self.served_local += r.served_local;
        self.served_remote += r.served_remote;
        self.max_q_l = self.max_q_l.max(r.q_l);
        self.max_q_r = self.max_q_r.max(r.q_r);
    }

    fn average(&mut self, r: &SlotRecord) {
        self.count += 1;
        self.q_l += r.q_l;
        self.q_r += r.q_r;
        self.p_l += r.p_l;
        self.p_t += r.p_t;
        self.cost += r.cost;
    }
}

/// Sample mean with a two-sided 95% Student-t confidence half-width.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci_half: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std_dev: f64::NAN,
                ci_half: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                n,
                mean,
                std_dev: 0.0,
                ci_half: 0.0,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        Self {
            n,
            mean,
            std_dev,
            ci_half: t_quantile_975(n - 1) * std_dev / (n as f64).sqrt(),
        }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.ci_half
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.ci_half
    }

    pub fn excludes_zero(&self) -> bool {
        self.lo() > 0.0 || self.hi() < 0.0
    }

    pub fn overlaps(&self, other: &Summary) -> bool {
        self.lo() <= other.hi() && other.lo() <= self.hi()
    }
}

fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(1.959963984540054)
}

/// Across-seed statistics of one policy at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub runs: Vec<RunMetrics>,
    pub delay: Summary,
    pub power: Summary,
    pub cost: Summary,
}

impl Aggregate {
    pub fn from_runs(mut runs: Vec<RunMetrics>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let pick = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            delay: pick(|r| r.avg_delay),
            power: pick(|r| r.avg_power),
            cost: pick(|r| r.avg_cost),
            runs,
        }
    }
}

/// Runs seeds `base_seed..base_seed + runs` in parallel.
///
/// The factory builds a fresh policy per run; environments are keyed by seed
/// only, so two policies evaluated with the same seeds see identical channel,
/// arrival and service sequences.
pub fn monte_carlo<F>(
    params: &SystemParams,
    factory: F,
    spec: &EnvSpec,
    opts: &RunOptions,
    runs: usize,
    base_seed: u64,
) -> Result<Aggregate>
where
    F: Fn() -> Result<Box<dyn Policy>> + Sync,
{
    if runs == 0 {
        return Err(Error::contract("at least one run is required"));
    }
    let metrics = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            let mut policy = factory()?;
            run(params, policy.as_mut(), spec, opts, seed).map(|o| o.metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregate::from_runs(metrics))
}

/// Seed-matched differences `a − b` of a per-run metric.
pub fn paired_difference(a: &Aggregate, b: &Aggregate, metric: fn(&RunMetrics) -> f64) -> Result<Summary> {
    if a.runs.len() != b.runs.len() || a.runs.iter().zip(&b.runs).any(|(x, y)| x.seed != y.seed) {
        return Err(Error::contract("paired comparison needs identical seed sets"));
    }
    let diffs: Vec<f64> = a.runs.iter().zip(&b.runs).map(|(x, y)| metric(x) - metric(y)).collect();
    Ok(Summary::of(&diffs))
}

pub const STABILITY_MIN_SLOTS: usize = 100_000;
pub const STABILITY_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Suspect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// Relative change of mean `Q_l²` from the middle to the final third.
    pub local_change: f64,
    pub remote_change: f64,
}

/// Plateau test on the second moments of both queues.
pub fn stability_probe(series: &[(f64, f64)]) -> Result<StabilityReport> {
    if series.len() < STABILITY_MIN_SLOTS {
        return Err(Error::contract(format!(
            "stability probe needs at least {STABILITY_MIN_SLOTS} slots, got {}",
            series.len()
        )));
    }
    let third = series.len() / 3;
    let middle = &series[third..2 * third];
    let last = &series[2 * third..];
    let second_moment =
        |xs: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| xs.iter().map(|s| f(s).powi(2)).sum::<f64>() / xs.len() as f64;
    let change = |f: fn(&(f64, f64)) -> f64| {
        let m = second_moment(middle, f);
        let l = second_moment(last, f);
        if m == 0.0 && l == 0.0 {
            0.0
        } else {
            (l - m).abs() / m.max(f64::MIN_POSITIVE)
        }
    };
    let local_change = change(|s| s.0);
    let remote_change = change(|s| s.1);
    let verdict = if local_change < STABILITY_TOLERANCE && remote_change < STABILITY_TOLERANCE {
        Verdict::Stable
    } else {
        Verdict::Suspect
    };
    Ok(StabilityReport {
        verdict,
        local_change,
        remote_change,
    })
}
