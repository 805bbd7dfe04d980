//! Comparison policies: GT, COWF, QWWF, LODCO and TSO.
//!
//! Each baseline has one scalar knob that sets its average power; the
//! calibration helpers tune that knob until the measured average power meets
//! a budget, so that delays are compared at equal power.

use std::fmt;
use std::str::FromStr;

use crate::env::{ChannelState, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{Decision, Observation, Policy};
use crate::simulator::{monte_carlo, QueueState, RunOptions};
use crate::sysmodel::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineKind {
    Gt,
    Cowf,
    Qwwf,
    Lodco,
    Tso,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [Self::Gt, Self::Cowf, Self::Qwwf, Self::Lodco, Self::Tso];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gt => "gt",
            Self::Cowf => "cowf",
            Self::Qwwf => "qwwf",
            Self::Lodco => "lodco",
            Self::Tso => "tso",
        }
    }

    /// Whether average power grows with the knob.
    pub fn knob_increases_power(self) -> bool {
        !matches!(self, Self::Lodco)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("policy", format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Average power target (W).
    pub power_budget: f64,
    /// Local power of COWF and QWWF (W).
    pub fixed_p_l: f64,
    /// Penalty weight of LODCO.
    pub lyapunov_v: f64,
    /// Grid size for the LODCO power search and the TSO ratio search.
    pub search_grid: usize,
    /// Largest power on the LODCO grid (W).
    pub grid_p_max: f64,
    /// QWWF queue normaliser `q_ref` (packets).
    pub q_ref: f64,
    /// QWWF cap on the queue weight.
    pub q_cap: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, power_budget: f64) -> Self {
        Self {
            kind,
            power_budget,
            fixed_p_l: 0.0,
            lyapunov_v: 1.0,
            search_grid: 101,
            grid_p_max: 4.0,
            q_ref: 1.0,
            q_cap: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("power_budget", self.power_budget),
            ("fixed_p_l", self.fixed_p_l),
            ("grid_p_max", self.grid_p_max),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.lyapunov_v > 0.0) {
            return Err(Error::param("lyapunov_v", "must be positive"));
        }
        if self.search_grid < 2 {
            return Err(Error::param("search_grid", "needs at least two points"));
        }
        if !(self.q_ref > 0.0 && self.q_cap > 0.0) {
            return Err(Error::param("q_ref", "queue weighting constants must be positive"));
        }
        Ok(())
    }
}

fn v_local(params: &SystemParams, p: f64) -> f64 {
    params.compute_scale / params.capacitance.sqrt() * p.sqrt()
}

fn v_tx(params: &SystemParams, p: f64, h: ChannelState) -> f64 {
    params.tx_rate_unchecked(p, h.gain)
}

/// Splits a fixed total power between local computing and transmission so
/// that the sum rate is maximal.
pub fn best_split(params: &SystemParams, total: f64, h: ChannelState) -> Decision {
    if !(total > 0.0) {
        return Decision::IDLE;
    }
    let rate = |p_l: f64| v_local(params, p_l) + v_tx(params, total - p_l, h);
    // The sum rate is concave in P_l: coarse scan, then golden section.
    let n: usize = 64;
    let best = (0..=n)
        .max_by(|&a, &b| {
            let fa = rate(total * a as f64 / n as f64);
            let fb = rate(total * b as f64 / n as f64);
            fa.total_cmp(&fb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let mut lo = total * best.saturating_sub(1) as f64 / n as f64;
    let mut hi = total * (best + 1).min(n) as f64 / n as f64;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if rate(a) >= rate(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mut p_l = 0.5 * (lo + hi);
    for edge in [0.0, total] {
        if rate(edge) > rate(p_l) {
            p_l = edge;
        }
    }
    Decision { p_l, p_t: total - p_l }
}

/// GT: the full per-slot power `total` whenever there is local backlog.
pub fn gt_decide(state: QueueState, h: ChannelState, total: f64, params: &SystemParams) -> Decision {
    if state.q_l <= 0.0 {
        return Decision::IDLE;
    }
    best_split(params, total, h)
}

/// COWF: fixed local power and channel-only water-filling at level `w`.
pub fn cowf_decide(h: ChannelState, w: f64, cfg: &BaselineConfig, params: &SystemParams) -> Decision {
    Decision {
        p_l: cfg.fixed_p_l,
        p_t: (w - params.noise_power / h.gain).max(0.0),
    }
}

/// QWWF: water level scaled by the normalised local backlog.
pub fn qwwf_decide(
    state: QueueState,
    h: ChannelState,
    w: f64,
    cfg: &BaselineConfig,
    params: &SystemParams,
) -> Decision {
    let weight = (state.q_l / cfg.q_ref).min(cfg.q_cap);
    Decision {
        p_l: if state.q_l > 0.0 { cfg.fixed_p_l } else { 0.0 },
        p_t: (w * weight - params.noise_power / h.gain).max(0.0),
    }
}

/// Power grid `{0} ∪ logspace(p_max·1e-6, p_max, n − 1)`.
pub fn power_grid(p_max: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let lo = (p_max * 1e-6).ln();
    let hi = p_max.ln();
    std::iter::once(0.0)
        .chain((0..n - 1).map(|i| (lo + (hi - lo) * i as f64 / (n - 2).max(1) as f64).exp()))
        .collect()
}

fn argmin_on(grid: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    grid.iter()
        .copied()
        .min_by(|&a, &b| f(a).total_cmp(&f(b)).then(a.total_cmp(&b)))
        .unwrap_or(0.0)
}

/// LODCO (simplified, no task dropping): per-slot drift-plus-penalty
/// `V·(P_l + P_t) − Q_l·v_l·τ − (Q_l − Q_r)·v_t·τ` minimised on a power grid.
pub fn lodco_decide(state: QueueState, h: ChannelState, v: f64, grid: &[f64], params: &SystemParams) -> Decision {
    let tau = params.tau;
    let p_l = argmin_on(grid, |p| v * p - state.q_l * v_local(params, p) * tau);
    let p_t = argmin_on(grid, |p| v * p - (state.q_l - state.q_r) * v_tx(params, p, h) * tau);
    Decision { p_l, p_t }
}

/// Outcome of the TSO ratio search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsoChoice {
    pub ratio: f64,
    pub decision: Decision,
    /// Backlog expected to remain after the slot.
    pub leftover: f64,
}

/// Evaluates splitting ratio `r` (share computed locally) under power cap `cap`.
pub fn tso_evaluate(state: QueueState, h: ChannelState, r: f64, cap: f64, params: &SystemParams) -> TsoChoice {
    let tau = params.tau;
    let need_l = r * state.q_l;
    let need_t = (1.0 - r) * state.q_l;
    let p_l_req = params.local_power_for_rate(need_l / tau);
    let p_t_req = params.tx_power_for_rate(need_t / tau, h.gain);
    let p_l = p_l_req.min(r * cap);
    let p_t = p_t_req.min((1.0 - r) * cap);
    let leftover = (need_l - v_local(params, p_l) * tau).max(0.0) + (need_t - v_tx(params, p_t, h) * tau).max(0.0);
    TsoChoice {
        ratio: r,
        decision: Decision { p_l, p_t },
        leftover,
    }
}

/// TSO: one-dimensional search over the local/offload split of the backlog.
pub fn tso_decide(state: QueueState, h: ChannelState, cap: f64, grid: usize, params: &SystemParams) -> TsoChoice {
    let n = grid.max(2);
    (0..n)
        .map(|i| tso_evaluate(state, h, i as f64 / (n - 1) as f64, cap, params))
        .min_by(|a, b| {
            let tol = 1e-12 * state.q_l.max(1.0);
            if (a.leftover - b.leftover).abs() > tol {
                a.leftover.total_cmp(&b.leftover)
            } else {
                a.decision.total().total_cmp(&b.decision.total())
            }
        })
        .unwrap_or(TsoChoice {
            ratio: 0.0,
            decision: Decision::IDLE,
            leftover: state.q_l,
        })
}

/// A baseline policy with its calibration knob.
#[derive(Debug, Clone)]
pub struct Baseline {
    params: SystemParams,
    cfg: BaselineConfig,
    knob: Option<f64>,
    grid: Vec<f64>,
}

impl Baseline {
    /// Builds an uncalibrated baseline. GT, LODCO and TSO fall back to the
    /// budget (or `lyapunov_v`) as knob; COWF and QWWF require calibration.
    pub fn new(params: &SystemParams, cfg: BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        let knob = match cfg.kind {
            BaselineKind::Gt | BaselineKind::Tso => Some(cfg.power_budget),
            BaselineKind::Lodco => Some(cfg.lyapunov_v),
            BaselineKind::Cowf | BaselineKind::Qwwf => None,
        };
        Ok(Self {
            params: *params,
            grid: power_grid(cfg.grid_p_max, cfg.search_grid),
            cfg,
            knob,
        })
    }

    pub fn with_knob(params: &SystemParams, cfg: BaselineConfig, knob: f64) -> Result<Self> {
        let mut b = Self::new(params, cfg)?;
        b.knob = Some(knob);
        Ok(b)
    }

    pub fn kind(&self) -> BaselineKind {
        self.cfg.kind
    }

    pub fn knob(&self) -> Option<f64> {
        self.knob
    }
}

impl Policy for Baseline {
    fn name(&self) -> &str {
        self.cfg.kind.name()
    }

    fn decide(&mut self, obs: &Observation) -> Result<Decision> {
        let knob = self
            .knob
            .ok_or_else(|| Error::Uncalibrated(format!("{} water level has not been calibrated", self.cfg.kind)))?;
        let state = QueueState {
            q_l: obs.q_l,
            q_r: obs.q_r,
        };
        let h = obs.channel;
        let p = &self.params;
        Ok(match self.cfg.kind {
            BaselineKind::Gt => gt_decide(state, h, knob, p),
            BaselineKind::Cowf => cowf_decide(h, knob, &self.cfg, p),
            BaselineKind::Qwwf => qwwf_decide(state, h, knob, &self.cfg, p),
            BaselineKind::Lodco => lodco_decide(state, h, knob, &self.grid, p),
            BaselineKind::Tso => tso_decide(state, h, knob, self.cfg.search_grid, p).decision,
        })
    }
}

/// Result of a power-budget calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub knob: f64,
    pub power: f64,
    pub target: f64,
    pub evaluations: usize,
}

impl Calibration {
    pub fn relative_error(&self) -> f64 {
        (self.power - self.target).abs() / self.target
    }
}

pub const CALIBRATION_TOLERANCE: f64 = 0.005;

/// Finds a knob value whose measured power is within
/// [`CALIBRATION_TOLERANCE`] of `target`, searching in log space.
///
/// `measure` must be monotone in the knob; `increasing` gives the direction.
pub fn calibrate_knob<F>(measure: F, target: f64, start: f64, increasing: bool) -> Result<Calibration>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(target > 0.0) {
        return Err(Error::param("power_budget", "calibration target must be positive"));
    }
    let mut evaluations = 0;
    let mut eval = |k: f64| -> Result<f64> {
        evaluations += 1;
        measure(k)
    };
    // Signed residual that is increasing in log(knob).
    let resid = |p: f64| if increasing { p - target } else { target - p };

    let mut best = (start, eval(start)?);
    let within = |p: f64| (p - target).abs() <= CALIBRATION_TOLERANCE * target;
    if within(best.1) {
        return Ok(Calibration {
            knob: best.0,
            power: best.1,
            target,
            evaluations,
        });
    }
    let (mut lo, mut hi) = (start.ln(), start.ln());
    let (mut r_lo, mut r_hi) = (resid(best.1), resid(best.1));
    let mut stride = 1.0f64;
    while r_lo > 0.0 || r_hi < 0.0 {
        if r_lo > 0.0 {
            hi = lo;
            r_hi = r_lo;
            lo -= stride;
            let p = eval(lo.exp())?;
            r_lo = resid(p);
            if (p - target).abs() < (best.1 - target).abs() {
                best = (lo.exp(), p);
            }
        } else {
            lo = hi;
            r_lo = r_hi;
            hi += stride;
            let p = eval(hi.exp())?;
            r_hi = resid(p);
            if (p - target).abs() < (best.1 - target).abs() {
                best = (hi.exp(), p);
            }
        }
        stride *= 1.6;
        if stride > 200.0 {
            return Err(Error::Uncalibrated(format!(
                "power target {target} W not reachable; closest {} W at knob {}",
                best.1, best.0
            )));
        }
    }
    // Illinois-modified regula falsi in log space.
    let mut side = 0i8;
    for _ in 0..80 {
        if within(best.1) {
            break;
        }
        let mid = if r_hi - r_lo > 0.0 {
            let m = hi - r_hi * (hi - lo) / (r_hi - r_lo);
            if m > lo && m < hi {
                m
            } else {
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        let p = eval(mid.exp())?;
        if (p - target).abs() < (best.1 - target).abs() {
            best = (mid.exp(), p);
        }
        let r = resid(p);
        if r < 0.0 {
            lo = mid;
            r_lo = r;
            if side == -1 {
                r_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            r_hi = r;
            if side == 1 {
                r_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(Calibration {
        knob: best.0,
        power: best.1,
        target,
        evaluations,
    })
}

/// Calibrates a baseline's knob to its power budget on the given seeds.
pub fn calibrate_baseline(
    params: &SystemParams,
    cfg: &BaselineConfig,
    spec: &EnvSpec,
    opts: &RunOptions,
    runs: usize,
    base_seed: u64,
) -> Result<Calibration> {
    cfg.validate()?;
    let measure = |knob: f64| -> Result<f64> {
        let agg = monte_carlo(
            params,
            || Ok(Box::new(Baseline::with_knob(params, *cfg, knob)?) as Box<dyn Policy>),
            spec,
            opts,
            runs,
            base_seed,
        )?;
        Ok(agg.power.mean)
    };
    let start = match cfg.kind {
        BaselineKind::Lodco => cfg.lyapunov_v,
        _ => cfg.power_budget.max(1e-9),
    };
    calibrate_knob(measure, cfg.power_budget, start, cfg.kind.knob_increases_power())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(gain: f64) -> ChannelState {
        ChannelState { gain }
    }

    fn busy(q_l: f64, q_r: f64) -> QueueState {
        QueueState { q_l, q_r }
    }

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("nope".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn gt_edge_cases() {
        let p = SystemParams::default();
        assert_eq!(gt_decide(busy(3.0, 0.0), h(p.mean_gain), 0.0, &p), Decision::IDLE);
        let d = gt_decide(busy(3.0, 0.0), h(1e-300), 0.1, &p);
        assert!((d.p_l - 0.1).abs() < 1e-12 && d.p_t.abs() < 1e-12);
        assert_eq!(gt_decide(busy(0.0, 0.0), h(p.mean_gain), 0.1, &p), Decision::IDLE);
    }

    #[test]
    fn gt_split_matches_exhaustive_grid() {
        let p = SystemParams {
            compute_scale: 3e-6,
            ..SystemParams::default()
        };
        for &gain in &[1e-11, 1e-10, p.mean_gain, 1e-8] {
            let total = 0.1;
            let d = best_split(&p, total, h(gain));
            let rate = |pl: f64| v_local(&p, pl) + v_tx(&p, total - pl, h(gain));
            let n = 10_000;
            let grid_best =
                (0..=n)
                    .map(|i| total * i as f64 / n as f64)
                    .fold(0.0, |b, x| if rate(x) > rate(b) { x } else { b });
            assert!((d.p_l - grid_best).abs() <= 1e-4 * total + total / n as f64, "{gain}");
            assert!(rate(d.p_l) >= rate(grid_best) - 1e-12);
        }
    }

    #[test]
    fn cowf_and_qwwf_clamps() {
        let p = SystemParams::default();
        let cfg = BaselineConfig::new(BaselineKind::Cowf, 0.1);
        let g = 1e-10;
        assert_eq!(cowf_decide(h(g), 0.5 * p.noise_power / g, &cfg, &p).p_t, 0.0);
        for w in [1e-4, 1e-3, 1e-2] {
            assert!(cowf_decide(h(g), 2.0 * w, &cfg, &p).p_t >= cowf_decide(h(g), w, &cfg, &p).p_t);
        }
        assert_eq!(qwwf_decide(busy(0.0, 5.0), h(g), 1.0, &cfg, &p).p_t, 0.0);
        let mut prev = 0.0;
        for q in [0.1, 0.5, 1.0, 4.0, 30.0] {
            let pt = qwwf_decide(busy(q, 0.0), h(g), 1e-3, &cfg, &p).p_t;
            assert!(pt >= prev);
            prev = pt;
        }
    }

    #[test]
    fn uncalibrated_water_filling_errors() {
        let p = SystemParams::default();
        let mut b = Baseline::new(&p, BaselineConfig::new(BaselineKind::Cowf, 0.1)).unwrap();
        let obs = Observation {
            slot: 0,
            q_l: 1.0,
            q_r: 0.0,
            channel: h(p.mean_gain),
        };
        assert!(matches!(b.decide(&obs), Err(Error::Uncalibrated(_))));
    }

    #[test]
    fn lodco_idles_without_backlog() {
        let p = SystemParams::default();
        let grid = power_grid(4.0, 101);
        assert_eq!(
            lodco_decide(busy(0.0, 0.0), h(p.mean_gain), 1.0, &grid, &p),
            Decision::IDLE
        );
    }

    #[test]
    fn lodco_grid_refinement() {
        let p = SystemParams::default();
        let coarse = power_grid(4.0, 101);
        let fine = power_grid(4.0, 100 * 100 + 1);
        let v = 1e-3;
        for &(ql, qr, gain) in &[
            (5.0, 0.0, p.mean_gain),
            (12.0, 3.0, 3.0 * p.mean_gain),
            (2.0, 1.0, 0.2 * p.mean_gain),
        ] {
            let c = lodco_decide(busy(ql, qr), h(gain), v, &coarse, &p);
            let f = lodco_decide(busy(ql, qr), h(gain), v, &fine, &p);
            let cell = |x: f64| {
                let i = coarse.partition_point(|&g| g < x);
                i as isize
            };
            assert!((cell(c.p_t) - cell(f.p_t)).abs() <= 1, "{c:?} vs {f:?}");
        }
    }

    #[test]
    fn tso_cases() {
        let p = SystemParams::default();
        let empty = tso_decide(busy(0.0, 0.0), h(p.mean_gain), 0.1, 101, &p);
        assert_eq!(empty.decision, Decision::IDLE);
        let strong = tso_decide(busy(4.0, 0.0), h(1e3), 0.1, 101, &p);
        assert_eq!(strong.ratio, 0.0);
        assert_eq!(strong.leftover, 0.0);
    }

    #[test]
    fn tso_search_matches_dense_scan() {
        let p = SystemParams {
            compute_scale: 3e-6,
            ..SystemParams::default()
        };
        let state = busy(3.0, 0.0);
        let gain = 0.05 * p.mean_gain;
        let cap = 0.05;
        let grid = 101;
        let c = tso_decide(state, h(gain), cap, grid, &p);
        let n = 10_000;
        let best = (0..=n)
            .map(|i| tso_evaluate(state, h(gain), i as f64 / n as f64, cap, &p))
            .min_by(|a, b| a.leftover.total_cmp(&b.leftover))
            .unwrap();
        assert!((c.ratio - best.ratio).abs() <= 1.0 / (grid - 1) as f64 + 1e-12);
    }

    #[test]
    fn knob_search_hits_target() {
        let c = calibrate_knob(|k| Ok(3.0 * k.sqrt()), 0.2, 1.0, true).unwrap();
        assert!(c.relative_error() <= CALIBRATION_TOLERANCE);
        let d = calibrate_knob(|k| Ok(1.0 / k), 0.2, 1.0, false).unwrap();
        assert!(d.relative_error() <= CALIBRATION_TOLERANCE);
        assert!(calibrate_knob(|_| Ok(0.0), 0.2, 1.0, true).is_err());
    }
}
