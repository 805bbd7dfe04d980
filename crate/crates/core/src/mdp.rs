//! Discretized average-cost MDP of the cascaded queues, solved by relative
//! value iteration. Used as a brute-force yardstick for other policies.
//!
//! Queues live on a grid of `queue_step` packets up to `q_max`; the channel
//! takes `M` equiprobable levels (conditional means of the exponential gain
//! over its quantile bins). Fractional service amounts are randomly rounded
//! to neighbouring grid points so that expected service is preserved.

use std::io::Write;

use rayon::prelude::*;

use crate::env::ChannelState;
use crate::error::{Error, Result};
use crate::policy::Decision;
use crate::sysmodel::{local_rate_unchecked, SystemParams};

pub const RVI_TOLERANCE: f64 = 1e-8;
pub const RVI_MAX_SWEEPS: usize = 100_000;
pub const STATIONARY_TOLERANCE: f64 = 1e-10;
pub const BOUNDARY_MASS_LIMIT: f64 = 0.01;
/// Aperiodicity factor: each sweep moves `h` only this far towards `Th`.
pub const DAMPING: f64 = 0.95;

/// Per-slot arrivals in the discretized chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    /// Poisson packet counts with mean `λ̄·τ`.
    Poisson,
    /// A fixed amount (packets) every slot.
    Deterministic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub q_max: f64,
    pub queue_step: f64,
    pub channel_levels: usize,
    pub actions: Vec<Decision>,
    pub arrivals: ArrivalModel,
}

impl MdpConfig {
    /// Desk-scale instance: 30 packets, unit steps, 8 channel levels and a
    /// 9×9 power grid up to 1 W.
    pub fn desk_scale() -> Self {
        Self {
            q_max: 30.0,
            queue_step: 1.0,
            channel_levels: 8,
            actions: action_grid(1.0, 9),
            arrivals: ArrivalModel::Poisson,
        }
    }
}

/// `{0} ∪ logspace(p_max·1e-5, p_max, n − 1)` per power, as an `n×n` product.
pub fn action_grid(p_max: f64, n: usize) -> Vec<Decision> {
    let levels = power_levels(p_max, n);
    levels
        .iter()
        .flat_map(|&p_l| levels.iter().map(move |&p_t| Decision { p_l, p_t }))
        .collect()
}

pub fn power_levels(p_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    let lo = (p_max * 1e-5).ln();
    let hi = p_max.ln();
    let k = n - 1;
    std::iter::once(0.0)
        .chain((0..k).map(|i| {
            if k == 1 {
                p_max
            } else {
                (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp()
            }
        }))
        .collect()
}

/// An amount in grid units, randomly rounded: `lo` w.p. `1 − p_hi`, `lo + 1` w.p. `p_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rounded {
    lo: usize,
    p_hi: f64,
}

impl Rounded {
    fn new(units: f64, cap: usize) -> Self {
        let units = units.max(0.0);
        if units >= cap as f64 {
            return Self { lo: cap, p_hi: 0.0 };
        }
        let lo = units.floor();
        let mut frac = units - lo;
        let mut lo = lo as usize;
        if frac < 1e-9 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-9 {
            frac = 0.0;
            lo += 1;
        }
        Self { lo, p_hi: frac }
    }

    fn outcomes(self) -> impl Iterator<Item = (usize, f64)> {
        let a = (self.lo, 1.0 - self.p_hi);
        let b = (self.lo + 1, self.p_hi);
        std::iter::once(a).chain((self.p_hi > 0.0).then_some(b))
    }
}

/// Exponential-gain quantization: `M` equiprobable bins, each represented by
/// its conditional mean.
pub fn channel_levels(mean_gain: f64, m: usize) -> Vec<f64> {
    let m = m.max(1);
    // Antiderivative of h·e^{-h/L}/L is −(h + L)e^{-h/L}.
    let upper = |u: f64| {
        if u >= 1.0 {
            0.0
        } else {
            -(-(1.0 - u).ln() * mean_gain + mean_gain) * (1.0 - u)
        }
    };
    (0..m)
        .map(|j| {
            let a = j as f64 / m as f64;
            let b = (j + 1) as f64 / m as f64;
            (upper(b) - upper(a)) * m as f64
        })
        .collect()
}

/// Discretized MDP with a factorized kernel.
#[derive(Debug, Clone)]
pub struct DiscreteMdp {
    params: SystemParams,
    cfg: MdpConfig,
    /// Queue levels per dimension (`q_max/step + 1`).
    n: usize,
    gains: Vec<f64>,
    arrivals: Vec<(usize, f64)>,
    remote: Rounded,
    /// Local service per action.
    local: Vec<Rounded>,
    /// Transmission per (level, action).
    tx: Vec<Rounded>,
}

/// Index of a discrete state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateIx {
    pub q_l: usize,
    pub q_r: usize,
    pub level: usize,
}

impl DiscreteMdp {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn config(&self) -> &MdpConfig {
        &self.cfg
    }

    pub fn queue_levels(&self) -> usize {
        self.n
    }

    pub fn channel_gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn num_states(&self) -> usize {
        self.n * self.n * self.gains.len()
    }

    pub fn num_actions(&self) -> usize {
        self.cfg.actions.len()
    }

    pub fn index(&self, s: StateIx) -> usize {
        (s.q_l * self.n + s.q_r) * self.gains.len() + s.level
    }

    pub fn state(&self, idx: usize) -> StateIx {
        let m = self.gains.len();
        let level = idx % m;
        let q = idx / m;
        StateIx {
            q_l: q / self.n,
            q_r: q % self.n,
            level,
        }
    }

    /// Backlogs in packets and the channel of a state.
    pub fn physical(&self, s: StateIx) -> (f64, f64, ChannelState) {
        let step = self.cfg.queue_step;
        (
            s.q_l as f64 * step,
            s.q_r as f64 * step,
            ChannelState {
                gain: self.gains[s.level],
            },
        )
    }

    pub fn stage_cost(&self, s: StateIx, d: Decision) -> f64 {
        let (q_l, q_r, _) = self.physical(s);
        self.params.alpha / self.params.arrival_rate * (q_l + q_r) + self.params.beta * (d.p_l + d.p_t)
    }

    fn local_units(&self, d: Decision) -> Rounded {
        let v = local_rate_unchecked(d.p_l, self.params.compute_scale, self.params.capacitance);
        Rounded::new(v * self.params.tau / self.cfg.queue_step, self.n)
    }

    fn tx_units(&self, d: Decision, level: usize) -> Rounded {
        let v = self.params.tx_rate_unchecked(d.p_t, self.gains[level]);
        Rounded::new(v * self.params.tau / self.cfg.queue_step, self.n)
    }

    /// Queue-pair successors `(q_l, q_r, prob)` before the channel redraw.
    fn queue_successors(&self, s: StateIx, local: Rounded, tx: Rounded, mut visit: impl FnMut(usize, usize, f64)) {
        let top = self.n - 1;
        for (lu, pl) in local.outcomes() {
            for (tu, pt) in tx.outcomes() {
                let served_l = lu.min(s.q_l);
                let sent = tu.min(s.q_l - served_l);
                let left = s.q_l - served_l - sent;
                for (ru, pr) in self.remote.outcomes() {
                    let q_r = (s.q_r.saturating_sub(ru) + sent).min(top);
                    for &(a, pa) in &self.arrivals {
                        visit((left + a).min(top), q_r, pl * pt * pr * pa);
                    }
                }
            }
        }
    }

    /// Explicit transition row for an arbitrary decision, merged by state.
    pub fn transition_row(&self, s: StateIx, d: Decision) -> Vec<(usize, f64)> {
        let m = self.gains.len();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        self.queue_successors(s, self.local_units(d), self.tx_units(d, s.level), |l, r, p| match pairs
            .iter_mut()
            .find(|(a, b, _)| *a == l && *b == r)
        {
            Some(e) => e.2 += p,
            None => pairs.push((l, r, p)),
        });
        let mut row: Vec<(usize, f64)> = pairs
            .into_iter()
            .filter(|e| e.2 > 0.0)
            .flat_map(|(l, r, p)| (0..m).map(move |level| ((l * self.n + r) * m + level, p / m as f64)))
            .collect();
        row.sort_by_key(|e| e.0);
        row
    }

    /// Row of the action with grid index `a`.
    pub fn transition_row_action(&self, s: StateIx, a: usize) -> Vec<(usize, f64)> {
        self.transition_row(s, self.cfg.actions[a])
    }

    fn is_boundary(&self, s: StateIx) -> bool {
        s.q_l == self.n - 1 || s.q_r == self.n - 1
    }
}

/// Assembles the discretized MDP.
pub fn build_mdp(params: &SystemParams, cfg: MdpConfig) -> Result<DiscreteMdp> {
    params.validate()?;
    if cfg.actions.is_empty() {
        return Err(Error::param("actions", "action grid is empty"));
    }
    if !(cfg.queue_step > 0.0 && cfg.q_max >= cfg.queue_step) {
        return Err(Error::param("q_max", "need q_max ≥ queue_step > 0"));
    }
    if cfg.channel_levels == 0 {
        return Err(Error::param("channel_levels", "need at least one level"));
    }
    if cfg.actions.iter().any(|d| !(d.p_l >= 0.0 && d.p_t >= 0.0)) {
        return Err(Error::param("actions", "powers must be nonnegative"));
    }
    let n = (cfg.q_max / cfg.queue_step).round() as usize + 1;
    let top = n - 1;
    let step = cfg.queue_step;
    let gains = if cfg.channel_levels == 1 {
        vec![params.mean_gain]
    } else {
        channel_levels(params.mean_gain, cfg.channel_levels)
    };

    let mut arrivals: Vec<(usize, f64)> = Vec::new();
    let mut push = |units: f64, p: f64| {
        for (u, q) in Rounded::new(units, top).outcomes() {
            match arrivals.iter_mut().find(|e| e.0 == u) {
                Some(e) => e.1 += p * q,
                None => arrivals.push((u, p * q)),
            }
        }
    };
    match cfg.arrivals {
        ArrivalModel::Deterministic(a) => push(a / step, 1.0),
        ArrivalModel::Poisson => {
            let mean = params.arrival_rate * params.tau;
            let mut pmf = (-mean).exp();
            let mut cdf = 0.0;
            let mut k = 0usize;
            while cdf < 1.0 - 1e-15 && k < 10_000 {
                push(k as f64 / step, pmf);
                cdf += pmf;
                k += 1;
                pmf *= mean / k as f64;
            }
            // Fold the negligible tail into the last count.
            if let Some(last) = arrivals.last_mut() {
                last.1 += 1.0 - cdf;
            }
        }
    }
    arrivals.retain(|e| e.1 > 0.0);
    arrivals.sort_by_key(|e| e.0);

    let remote = Rounded::new(params.remote_rate * params.tau / step, n);
    let mut mdp = DiscreteMdp {
        params: *params,
        cfg,
        n,
        gains,
        arrivals,
        remote,
        local: Vec::new(),
        tx: Vec::new(),
    };
    mdp.local = mdp.cfg.actions.iter().map(|&d| mdp.local_units(d)).collect();
    mdp.tx = (0..mdp.gains.len())
        .flat_map(|m| mdp.cfg.actions.iter().map(move |&d| (m, d)))
        .map(|(m, d)| mdp.tx_units(d, m))
        .collect();
    Ok(mdp)
}

/// Output of relative value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RviSolution {
    pub theta: f64,
    /// Relative values, zero at the anchor state.
    pub values: Vec<f64>,
    /// Greedy action index per state.
    pub policy: Vec<usize>,
    pub sweeps: usize,
    pub span: f64,
    pub anchor: usize,
}

impl RviSolution {
    pub fn decision(&self, mdp: &DiscreteMdp, state: usize) -> Decision {
        mdp.cfg.actions[self.policy[state]]
    }
}

pub fn relative_value_iteration(mdp: &DiscreteMdp) -> Result<RviSolution> {
    relative_value_iteration_anchored(mdp, 0)
}

/// Relative value iteration with an aperiodicity-preserving damping step.
pub fn relative_value_iteration_anchored(mdp: &DiscreteMdp, anchor: usize) -> Result<RviSolution> {
    if anchor >= mdp.num_states() {
        return Err(Error::param("anchor", "state index out of range"));
    }
    let damping = DAMPING;
    let ns = mdp.num_states();
    let mut h = vec![0.0; ns];
    let mut th = vec![0.0; ns];
    let mut policy = vec![0usize; ns];
    let mut trace = Vec::new();
    let mut span = f64::INFINITY;

    for sweep in 1..=RVI_MAX_SWEEPS {
        let w = expected_next(mdp, &h);
        th.par_iter_mut()
            .zip(policy.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (t, pol))| {
                let (best, a) = best_action(mdp, idx, &w);
                *t = best;
                *pol = a;
            });
        let (lo, hi) = th
            .iter()
            .zip(&h)
            .map(|(t, v)| t - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        if trace.len() < 64 || sweep % 100 == 0 {
            trace.push(span);
        }
        if span < RVI_TOLERANCE {
            let theta = 0.5 * (lo + hi);
            let values = h.iter().map(|v| v - h[anchor]).collect();
            return Ok(RviSolution {
                theta,
                values,
                policy,
                sweeps: sweep,
                span,
                anchor,
            });
        }
        let shift = h[anchor] + damping * (th[anchor] - h[anchor]);
        for (v, t) in h.iter_mut().zip(&th) {
            *v += damping * (t - *v) - shift;
        }
    }
    Err(Error::Divergence {
        iterations: RVI_MAX_SWEEPS,
        last_span: span,
        span_trace: trace,
    })
}

/// `W[l][r] = Σ_a p_a · mean_m h(min(l + a, top), r, m)` for every
/// post-service local level `l` and remote level `r`.
fn expected_next(mdp: &DiscreteMdp, h: &[f64]) -> Vec<f64> {
    let n = mdp.n;
    let m = mdp.gains.len();
    let top = n - 1;
    let vbar: Vec<f64> = h.chunks(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let mut w = vec![0.0; n * n];
    for l in 0..n {
        for r in 0..n {
            w[l * n + r] = mdp
                .arrivals
                .iter()
                .map(|&(a, p)| p * vbar[(l + a).min(top) * n + r])
                .sum();
        }
    }
    w
}

fn action_value(mdp: &DiscreteMdp, s: StateIx, local: Rounded, tx: Rounded, w: &[f64]) -> f64 {
    let n = mdp.n;
    let top = n - 1;
    let mut acc = 0.0;
    for (lu, pl) in local.outcomes() {
        for (tu, pt) in tx.outcomes() {
            let served_l = lu.min(s.q_l);
            let sent = tu.min(s.q_l - served_l);
            let left = s.q_l - served_l - sent;
            for (ru, pr) in mdp.remote.outcomes() {
                let q_r = (s.q_r.saturating_sub(ru) + sent).min(top);
                acc += pl * pt * pr * w[left * n + q_r];
            }
        }
    }
    acc
}

fn best_action(mdp: &DiscreteMdp, idx: usize, w: &[f64]) -> (f64, usize) {
    let s = mdp.state(idx);
    let na = mdp.num_actions();
    let mut best = (f64::INFINITY, 0usize);
    for a in 0..na {
        let d = mdp.cfg.actions[a];
        let q = mdp.stage_cost(s, d) + action_value(mdp, s, mdp.local[a], mdp.tx[s.level * na + a], w);
        if q < best.0 {
            best = (q, a);
        }
    }
    best
}

/// One explicit Bellman backup; used to cross-check the factorized kernel.
pub fn bellman_backup_explicit(mdp: &DiscreteMdp, h: &[f64], idx: usize) -> f64 {
    let s = mdp.state(idx);
    mdp.cfg
        .actions
        .iter()
        .map(|&d| mdp.stage_cost(s, d) + mdp.transition_row(s, d).iter().map(|&(j, p)| p * h[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// One factorized Bellman backup (minimum over the action grid).
pub fn bellman_backup(mdp: &DiscreteMdp, h: &[f64], idx: usize) -> f64 {
    best_action(mdp, idx, &expected_next(mdp, h)).0
}

/// Average cost of one closed communicating class of an induced chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCost {
    pub states: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    /// Long-run cost from a uniform initial distribution.
    pub theta: f64,
    /// Stationary mass on states with a saturated queue.
    pub boundary_mass: f64,
    /// One entry per closed class; more than one means the chain is reducible.
    pub classes: Vec<ClassCost>,
    pub iterations: usize,
}

impl PolicyEvaluation {
    pub fn is_reducible(&self) -> bool {
        self.classes.len() > 1
    }

    pub fn resolution_warning(&self) -> bool {
        self.boundary_mass >= BOUNDARY_MASS_LIMIT
    }
}

/// Evaluates a stationary policy given as a decision per state.
pub fn evaluate_decisions(mdp: &DiscreteMdp, decisions: &[Decision]) -> Result<PolicyEvaluation> {
    let ns = mdp.num_states();
    if decisions.len() != ns {
        return Err(Error::contract(format!(
            "policy covers {} states, chain has {ns}",
            decisions.len()
        )));
    }
    if decisions.iter().any(|d| !(d.p_l >= 0.0 && d.p_t >= 0.0)) {
        return Err(Error::contract("policy returned negative powers"));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..ns)
        .into_par_iter()
        .map(|i| mdp.transition_row(mdp.state(i), decisions[i]))
        .collect();
    let costs: Vec<f64> = (0..ns).map(|i| mdp.stage_cost(mdp.state(i), decisions[i])).collect();

    let classes = closed_classes(&rows);
    let class_costs = classes
        .iter()
        .map(|members| {
            let mut init = vec![0.0; ns];
            for &i in members {
                init[i] = 1.0 / members.len() as f64;
            }
            let (pi, _) = stationary(&rows, init)?;
            Ok(ClassCost {
                states: members.len(),
                theta: pi.iter().zip(&costs).map(|(p, c)| p * c).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (pi, iterations) = stationary(&rows, vec![1.0 / ns as f64; ns])?;
    let theta = pi.iter().zip(&costs).map(|(p, c)| p * c).sum();
    let boundary_mass = pi
        .iter()
        .enumerate()
        .filter(|(i, _)| mdp.is_boundary(mdp.state(*i)))
        .map(|(_, p)| p)
        .sum();
    Ok(PolicyEvaluation {
        theta,
        boundary_mass,
        classes: class_costs,
        iterations,
    })
}

/// Evaluates any state-feedback rule on the chain.
pub fn evaluate_policy_on_mdp<F>(mdp: &DiscreteMdp, rule: F) -> Result<PolicyEvaluation>
where
    F: Fn(f64, f64, ChannelState) -> Result<Decision>,
{
    let decisions = (0..mdp.num_states())
        .map(|i| {
            let (q_l, q_r, h) = mdp.physical(mdp.state(i));
            rule(q_l, q_r, h)
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_decisions(mdp, &decisions)
}

/// Lazy power iteration `π ← (π + πP)/2` until the L1 change is below tolerance.
fn stationary(rows: &[Vec<(usize, f64)>], mut pi: Vec<f64>) -> Result<(Vec<f64>, usize)> {
    let ns = rows.len();
    let mut next = vec![0.0; ns];
    for it in 1..=1_000_000 {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in rows.iter().enumerate() {
            let m = pi[i];
            if m == 0.0 {
                continue;
            }
            for &(j, p) in row {
                next[j] += m * p;
            }
        }
        let mut change = 0.0;
        for (a, b) in pi.iter_mut().zip(&next) {
            let v = 0.5 * (*a + b);
            change += (v - *a).abs();
            *a = v;
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        if change < STATIONARY_TOLERANCE {
            return Ok((pi, it));
        }
    }
    Err(Error::Divergence {
        iterations: 1_000_000,
        last_span: f64::NAN,
        span_trace: Vec::new(),
    })
}

/// Closed communicating classes (SCCs without outgoing edges).
fn closed_classes(rows: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let comp = strongly_connected(rows);
    let count = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut closed = vec![true; count];
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(|&(j, p)| p > 0.0 && comp[j] != comp[i]) {
            closed[comp[i]] = false;
        }
    }
    let mut members = vec![Vec::new(); count];
    for (i, &c) in comp.iter().enumerate() {
        if closed[c] {
            members[c].push(i);
        }
    }
    members.into_iter().filter(|m| !m.is_empty()).collect()
}

/// Iterative Tarjan; returns the component id of every node.
fn strongly_connected(rows: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = rows.len();
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSET; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if *edge < rows[v].len() {
                let (w, p) = rows[v][*edge];
                *edge += 1;
                if p <= 0.0 {
                    continue;
                }
                if index[w] == UNSET {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

/// Writes `q_l,q_r,level,gain,value,p_l,p_t` rows for every state.
pub fn write_solution_csv<W: Write>(mut w: W, mdp: &DiscreteMdp, sol: &RviSolution) -> Result<()> {
    writeln!(w, "q_l,q_r,level,gain,value,p_l,p_t")?;
    for idx in 0..mdp.num_states() {
        let s = mdp.state(idx);
        let (q_l, q_r, h) = mdp.physical(s);
        let d = sol.decision(mdp, idx);
        writeln!(
            w,
            "{q_l},{q_r},{},{},{},{},{}",
            s.level, h.gain, sol.values[idx], d.p_l, d.p_t
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(params: &SystemParams, actions: Vec<Decision>, arrivals: ArrivalModel, levels: usize) -> DiscreteMdp {
        build_mdp(
            params,
            MdpConfig {
                q_max: 2.0,
                queue_step: 1.0,
                channel_levels: levels,
                actions,
                arrivals,
            },
        )
        .unwrap()
    }

    #[test]
    fn channel_levels_preserve_mean() {
        let l = 3.0;
        let g = channel_levels(l, 8);
        assert!((g.iter().sum::<f64>() / 8.0 - l).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rounding_preserves_mean() {
        let r = Rounded::new(2.3, 10);
        let mean: f64 = r.outcomes().map(|(u, p)| u as f64 * p).sum();
        assert!((mean - 2.3).abs() < 1e-12);
        assert_eq!(Rounded::new(3.0, 10).outcomes().count(), 1);
    }

    #[test]
    fn empty_dynamics_are_absorbing() {
        let p = SystemParams::default();
        let mdp = tiny(&p, vec![Decision::IDLE], ArrivalModel::Deterministic(0.0), 2);
        let s = StateIx {
            q_l: 0,
            q_r: 0,
            level: 0,
        };
        let row = mdp.transition_row(s, Decision::IDLE);
        let to_origin: f64 = row
            .iter()
            .filter(|(j, _)| {
                let t = mdp.state(*j);
                t.q_l == 0 && t.q_r == 0
            })
            .map(|e| e.1)
            .sum();
        assert!((to_origin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_unit_chain_matches_hand_enumeration() {
        let p = SystemParams {
            remote_rate: 0.0,
            ..SystemParams::default()
        };
        let p_l = p.local_power_for_rate(1.0 / p.tau);
        assert!(p_l.is_finite());
        let d = Decision { p_l, p_t: 0.0 };
        let mdp = tiny(&p, vec![d], ArrivalModel::Deterministic(1.0), 1);
        // q_l' = max(q_l − 1, 0) + 1: 0 → 1, 1 → 1, 2 → 2.
        for (from, to) in [(0, 1), (1, 1), (2, 2)] {
            let row = mdp.transition_row(
                StateIx {
                    q_l: from,
                    q_r: 0,
                    level: 0,
                },
                d,
            );
            assert_eq!(row.len(), 1, "{row:?}");
            let t = mdp.state(row[0].0);
            assert_eq!((t.q_l, t.q_r), (to, 0));
            assert!((row[0].1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_arrivals_zero_cost() {
        let p = SystemParams::default();
        let mdp = tiny(&p, action_grid(1.0, 3), ArrivalModel::Deterministic(0.0), 2);
        let sol = relative_value_iteration(&mdp).unwrap();
        assert!(sol.theta.abs() < 1e-8);
        for level in 0..2 {
            let idx = mdp.index(StateIx { q_l: 0, q_r: 0, level });
            assert_eq!(sol.decision(&mdp, idx), Decision::IDLE);
        }
    }

    #[test]
    fn factorized_backup_matches_explicit_rows() {
        let p = SystemParams::default();
        let mdp = build_mdp(
            &p,
            MdpConfig {
                q_max: 6.0,
                queue_step: 1.0,
                channel_levels: 3,
                actions: action_grid(1.0, 4),
                arrivals: ArrivalModel::Poisson,
            },
        )
        .unwrap();
        let h: Vec<f64> = (0..mdp.num_states()).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        for idx in (0..mdp.num_states()).step_by(5) {
            let a = bellman_backup(&mdp, &h, idx);
            let b = bellman_backup_explicit(&mdp, &h, idx);
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{idx}: {a} vs {b}");
        }
    }
}
