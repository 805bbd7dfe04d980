//! Several MTs sharing several MEC servers.
//!
//! Every MT keeps one priority function per server, built from the
//! single-MT solvers with EP and EVP scaled by learned access shares. Each
//! slot the MTs propose water-filling decisions for every server, the
//! servers grant at most one MT each, and only granted MTs transmit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{
    sample_service, stream_rng, ArrivalProcess, ChannelHistory, ChannelSampler, ChannelState, ServiceKind, StreamKind,
};
use crate::error::{Error, Result};
use crate::policy::{
    coefficients, decide, estimate_rates, gradients, solve_steady_state, Decision, EstimatorInput, PolicyDiagnostics,
    PriorityCoeffs, RateEstimate, RateWindow, SlotFlows, SteadyState, WindowStats,
};
use crate::simulator::{Summary, TransferMode};
use crate::sysmodel::{local_rate_unchecked, SystemParams};

pub const DEFAULT_SMOOTHING: f64 = 0.05;
/// Largest `I·J` solved by exhaustive enumeration.
pub const ENUMERATION_LIMIT: usize = 20;
/// Access shares below this are clamped when building priority functions.
pub const SHARE_FLOOR: f64 = 1e-3;
/// Steady states are re-solved once a share moves by more than this.
pub const SHARE_REFRESH: f64 = 1e-3;

/// Which server each MT was granted, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessSolution {
    servers: usize,
    grant: Vec<Option<usize>>,
}

impl AccessSolution {
    pub fn empty(mts: usize, servers: usize) -> Self {
        Self {
            servers,
            grant: vec![None; mts],
        }
    }

    /// Builds a solution from `(mt, server)` pairs; fails unless rows and
    /// columns each hold at most one grant.
    pub fn from_pairs(mts: usize, servers: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut s = Self::empty(mts, servers);
        let mut taken = vec![false; servers];
        for &(i, j) in pairs {
            if i >= mts || j >= servers {
                return Err(Error::contract(format!("pair ({i}, {j}) outside {mts}x{servers}")));
            }
            if s.grant[i].is_some() || taken[j] {
                return Err(Error::contract(format!("pair ({i}, {j}) violates one-to-one access")));
            }
            s.grant[i] = Some(j);
            taken[j] = true;
        }
        Ok(s)
    }

    pub fn mts(&self) -> usize {
        self.grant.len()
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn server_of(&self, mt: usize) -> Option<usize> {
        self.grant[mt]
    }

    pub fn is_granted(&self, mt: usize, server: usize) -> bool {
        self.grant[mt] == Some(server)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.grant.iter().enumerate().filter_map(|(i, g)| g.map(|j| (i, j)))
    }

    /// Dense 0/1 matrix `ρ`.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        self.grant
            .iter()
            .map(|g| (0..self.servers).map(|j| u8::from(*g == Some(j))).collect())
            .collect()
    }

    pub fn total(&self, scores: &ScoreMatrix) -> f64 {
        self.pairs().map(|(i, j)| scores.get(i, j)).sum()
    }
}

/// Row-major `I×J` score table; lower is better, access only pays off below 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub mts: usize,
    pub servers: usize,
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(mts: usize, servers: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != mts * servers {
            return Err(Error::contract(format!(
                "score table has {} entries, expected {}",
                values.len(),
                mts * servers
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::contract("score table contains NaN"));
        }
        Ok(Self { mts, servers, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.servers + j]
    }
}

/// Minimum-total-score one-to-one access. Pairs with a nonnegative score are
/// never granted. Small instances are enumerated, larger ones go through the
/// Hungarian method.
pub fn assign(scores: &ScoreMatrix) -> AccessSolution {
    if scores.mts * scores.servers <= ENUMERATION_LIMIT {
        assign_enumerate(scores)
    } else {
        assign_hungarian(scores)
    }
}

/// Depth-first enumeration of every partial matching. Among equal totals the
/// first one found wins: lower MTs take lower servers first.
pub fn assign_enumerate(scores: &ScoreMatrix) -> AccessSolution {
    struct Search<'a> {
        scores: &'a ScoreMatrix,
        used: Vec<bool>,
        current: Vec<Option<usize>>,
        best: Vec<Option<usize>>,
        best_total: f64,
    }

    impl Search<'_> {
        fn visit(&mut self, i: usize, total: f64) {
            if i == self.scores.mts {
                if total < self.best_total {
                    self.best_total = total;
                    self.best.clone_from(&self.current);
                }
                return;
            }
            for j in 0..self.scores.servers {
                let s = self.scores.get(i, j);
                if !self.used[j] && s < 0.0 {
                    self.used[j] = true;
                    self.current[i] = Some(j);
                    self.visit(i + 1, total + s);
                    self.current[i] = None;
                    self.used[j] = false;
                }
            }
            self.visit(i + 1, total);
        }
    }

    let mut search = Search {
        scores,
        used: vec![false; scores.servers],
        current: vec![None; scores.mts],
        best: vec![None; scores.mts],
        best_total: f64::INFINITY,
    };
    search.visit(0, 0.0);
    AccessSolution {
        servers: scores.servers,
        grant: search.best,
    }
}

/// Hungarian method on the `I × (J + I)` matrix whose extra columns stand for
/// "no access" at cost 0.
pub fn assign_hungarian(scores: &ScoreMatrix) -> AccessSolution {
    let n = scores.mts;
    let m = scores.servers + n;
    let cost = |i: usize, j: usize| {
        if j < scores.servers {
            scores.get(i, j).min(0.0)
        } else {
            0.0
        }
    };
    // Potentials and matching are 1-based; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut grant = vec![None; n];
    for (j, &i) in row_of.iter().enumerate().take(scores.servers + 1).skip(1) {
        if i > 0 && scores.get(i - 1, j - 1) < 0.0 {
            grant[i - 1] = Some(j - 1);
        }
    }
    AccessSolution {
        servers: scores.servers,
        grant,
    }
}

/// Learned access shares ρ̂ (power-weighted) and ρ̃ (rate-weighted).
///
/// Both are ratios of exponential moving averages over the slots in which
/// MT `i` asked for server `j`: granted power over requested power, and
/// granted rate over requested rate. A pair that never asked keeps share 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessRatios {
    servers: usize,
    eta: f64,
    power_num: Vec<f64>,
    power_den: Vec<f64>,
    rate_num: Vec<f64>,
    rate_den: Vec<f64>,
}

/// What MT `i` asked of server `j` in one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairRequest {
    pub power: f64,
    pub rate: f64,
}

impl AccessRatios {
    pub fn new(mts: usize, servers: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::param("smoothing", format!("must lie in (0, 1], got {eta}")));
        }
        let n = mts * servers;
        Ok(Self {
            servers,
            eta,
            power_num: vec![0.0; n],
            power_den: vec![0.0; n],
            rate_num: vec![0.0; n],
            rate_den: vec![0.0; n],
        })
    }

    pub fn power(&self, i: usize, j: usize) -> f64 {
        ratio(
            self.power_num[i * self.servers + j],
            self.power_den[i * self.servers + j],
        )
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        ratio(self.rate_num[i * self.servers + j], self.rate_den[i * self.servers + j])
    }

    /// One EMA step for a pair that made a request this slot.
    pub fn record(&mut self, i: usize, j: usize, request: PairRequest, granted: bool) {
        if !(request.power > 0.0) {
            return;
        }
        let k = i * self.servers + j;
        let g = if granted { 1.0 } else { 0.0 };
        let keep = 1.0 - self.eta;
        self.power_num[k] = keep * self.power_num[k] + self.eta * g * request.power;
        self.power_den[k] = keep * self.power_den[k] + self.eta * request.power;
        self.rate_num[k] = keep * self.rate_num[k] + self.eta * g * request.rate;
        self.rate_den[k] = keep * self.rate_den[k] + self.eta * request.rate;
    }

    /// Applies one slot of requests (row-major `I×J`) and grants.
    pub fn update(&mut self, granted: &AccessSolution, requests: &[PairRequest]) {
        for i in 0..granted.mts() {
            for j in 0..self.servers {
                self.record(i, j, requests[i * self.servers + j], granted.is_granted(i, j));
            }
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Access shares plugged into EP and EVP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessShare {
    pub power: f64,
    pub rate: f64,
}

impl AccessShare {
    pub const DEDICATED: AccessShare = AccessShare { power: 1.0, rate: 1.0 };
}

/// Priority-function state of one MT/server pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPriority {
    pub params: SystemParams,
    pub steady: SteadyState,
    pub estimate: RateEstimate,
    pub coeffs: PriorityCoeffs,
}

/// Parameters of the pair `(MT, server)`: the MT's constants, the server's
/// mean rate and the access shares.
pub fn pair_params(mt: &SystemParams, server_rate: f64, share: AccessShare) -> SystemParams {
    SystemParams {
        remote_rate: server_rate,
        power_share: share.power,
        rate_share: share.rate,
        ..*mt
    }
}

/// Priority coefficients of one pair. `window` may be empty, in which case
/// both rate differences sit at their floors. With `local_cap` set, a steady
/// state that needs more local power than the cap is reported as infeasible.
pub fn per_mt_priority(params: &SystemParams, window: &WindowStats, local_cap: Option<f64>) -> Result<PairPriority> {
    let steady = solve_steady_state(params)?;
    if let Some(cap) = local_cap {
        let p_l = params.local_power_for_rate(params.local_gain() * steady.v_l);
        if p_l > cap {
            return Err(Error::InfeasibleLoad(format!(
                "steady local power {p_l:.3e} W exceeds the {cap} W cap (rate share {})",
                params.rate_share
            )));
        }
    }
    let estimate = if window.slots == 0 {
        RateEstimate::at_floor(params, &steady)?
    } else {
        estimate_rates(window, params, &steady)?
    };
    let mut diag = PolicyDiagnostics::default();
    let coeffs = coefficients(&estimate, &steady, params, &mut diag);
    Ok(PairPriority {
        params: *params,
        steady,
        estimate,
        coeffs,
    })
}

/// One MT of a fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct MtSpec {
    pub params: SystemParams,
    pub arrivals: ArrivalProcess,
}

impl MtSpec {
    pub fn poisson(params: SystemParams) -> Self {
        Self {
            arrivals: ArrivalProcess::poisson(params.arrival_rate),
            params,
        }
    }
}

/// Fleet layout and environment.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub mts: Vec<MtSpec>,
    /// Mean service rate v̄out of each server.
    pub server_rates: Vec<f64>,
    /// Shared compute-load model: one factor per slot scales every server and
    /// every MT's local rate.
    pub service: ServiceKind,
    pub csi_delay: usize,
}

impl FleetSpec {
    /// `mts` identical Poisson MTs and `servers` identical servers.
    pub fn uniform(mt: &SystemParams, mts: usize, servers: usize, server_rate: f64) -> Self {
        Self {
            mts: vec![MtSpec::poisson(*mt); mts],
            server_rates: vec![server_rate; servers],
            service: ServiceKind::Constant,
            csi_delay: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mts.is_empty() {
            return Err(Error::param("mts", "a fleet needs at least one MT"));
        }
        if self.server_rates.is_empty() {
            return Err(Error::param("servers", "a fleet needs at least one server"));
        }
        for mt in &self.mts {
            mt.params.validate()?;
        }
        if let Some(r) = self.server_rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::param(
                "server_rates",
                format!("must be finite and >= 0, got {r}"),
            ));
        }
        Ok(())
    }
}

/// How shared server backlog is charged to each MT's delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayAttribution {
    /// Every MT is charged the whole backlog of every server.
    #[default]
    AllServers,
    /// Each MT is charged its share of each server's cumulative inflow.
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetPolicyConfig {
    pub window: usize,
    pub input: EstimatorInput,
    pub smoothing: f64,
    /// Optional per-component power cap (W).
    pub p_max: Option<f64>,
}

impl Default for FleetPolicyConfig {
    fn default() -> Self {
        Self {
            window: 10,
            input: EstimatorInput::Realized,
            smoothing: DEFAULT_SMOOTHING,
            p_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetOptions {
    pub horizon: usize,
    pub warmup: usize,
    pub transfer: TransferMode,
    pub attribution: DelayAttribution,
    /// Control-plane delay τ_max (s) added to every MT's delay.
    pub control_delay: f64,
    pub record_trace: bool,
}

impl FleetOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            warmup: 0,
            transfer: TransferMode::Capped,
            attribution: DelayAttribution::AllServers,
            control_delay: 0.0,
            record_trace: false,
        }
    }
}

/// Queue backlogs of the whole fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub q_l: Vec<f64>,
    pub q_r: Vec<f64>,
}

impl FleetState {
    pub fn empty(mts: usize, servers: usize) -> Self {
        Self {
            q_l: vec![0.0; mts],
            q_r: vec![0.0; servers],
        }
    }
}

/// Random inputs of one fleet slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetDraw {
    /// Row-major `I×J` channel gains.
    pub channels: Vec<ChannelState>,
    pub arrivals: Vec<f64>,
    pub server_rates: Vec<f64>,
    /// Per-MT local scale factor k_i(n).
    pub scale_factors: Vec<f64>,
}

/// Per-slot flows produced by [`fleet_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct FleetFlows {
    pub v_l: Vec<f64>,
    pub v_t: Vec<f64>,
    pub served_local: Vec<f64>,
    /// Packets moved from each MT to its granted server.
    pub served_tx: Vec<f64>,
    /// Inflow of each server.
    pub server_inflow: Vec<f64>,
    pub served_remote: Vec<f64>,
}

/// Advances the fleet by one slot. `decisions[i]` is applied as is; only a
/// granted MT may transmit.
pub fn fleet_step(
    state: &FleetState,
    access: &AccessSolution,
    decisions: &[Decision],
    draw: &FleetDraw,
    params: &[SystemParams],
    mode: TransferMode,
) -> Result<(FleetState, FleetFlows)> {
    let (n, m) = (state.q_l.len(), state.q_r.len());
    if access.mts() != n || access.servers() != m || decisions.len() != n || params.len() != n {
        return Err(Error::contract("fleet dimensions disagree"));
    }
    let mut next = FleetState::empty(n, m);
    let mut flows = FleetFlows {
        v_l: vec![0.0; n],
        v_t: vec![0.0; n],
        served_local: vec![0.0; n],
        served_tx: vec![0.0; n],
        server_inflow: vec![0.0; m],
        served_remote: vec![0.0; m],
    };
    for i in 0..n {
        let d = decisions[i];
        let p = &params[i];
        let q = state.q_l[i];
        let v_l = local_rate_unchecked(d.p_l, draw.scale_factors[i], p.capacitance);
        let (v_t, server) = match access.server_of(i) {
            Some(j) => (p.tx_rate_unchecked(d.p_t, draw.channels[i * m + j].gain), Some(j)),
            None => {
                if d.p_t > 0.0 {
                    return Err(Error::contract(format!("MT {i} transmits without access")));
                }
                (0.0, None)
            }
        };
        let local_budget = v_l * p.tau;
        let tx_budget = v_t * p.tau;
        next.q_l[i] = (q - tx_budget - local_budget).max(0.0) + draw.arrivals[i];
        let after_local = (q - local_budget).max(0.0);
        let sent = match mode {
            TransferMode::Capped => tx_budget.min(after_local),
            TransferMode::Strict => tx_budget,
        };
        flows.v_l[i] = v_l;
        flows.v_t[i] = v_t;
        flows.served_local[i] = local_budget.min(q);
        flows.served_tx[i] = sent;
        if let Some(j) = server {
            flows.server_inflow[j] += sent;
        }
    }
    let tau = params[0].tau;
    for j in 0..m {
        let budget = draw.server_rates[j] * tau;
        flows.served_remote[j] = budget.min(state.q_r[j]);
        next.q_r[j] = (state.q_r[j] - budget).max(0.0) + flows.server_inflow[j];
    }
    Ok((next, flows))
}

/// Seeded environment of a fleet. Stream `(kind, i, j)` drives entity
/// `(i, j)`, so a one-MT one-server fleet sees the single-MT draws.
#[derive(Debug, Clone)]
pub struct FleetEnvironment {
    spec: FleetSpec,
    channels: Vec<ChannelSampler>,
    arrival_rngs: Vec<ChaCha8Rng>,
    service_rng: ChaCha8Rng,
    slot: usize,
}

impl FleetEnvironment {
    pub fn new(spec: &FleetSpec, seed: u64) -> Self {
        let m = spec.server_rates.len();
        let channels = spec
            .mts
            .iter()
            .enumerate()
            .flat_map(|(i, mt)| {
                (0..m)
                    .map(move |j| ChannelSampler::new(mt.params.mean_gain, stream_rng(seed, StreamKind::Channel, i, j)))
            })
            .collect();
        let arrival_rngs = (0..spec.mts.len())
            .map(|i| stream_rng(seed, StreamKind::Arrival, i, 0))
            .collect();
        Self {
            spec: spec.clone(),
            channels,
            arrival_rngs,
            service_rng: stream_rng(seed, StreamKind::Service, 0, 0),
            slot: 0,
        }
    }

    pub fn next_slot(&mut self) -> Result<FleetDraw> {
        let channels = self.channels.iter_mut().map(ChannelSampler::sample).collect();
        let tau = self.spec.mts[0].params.tau;
        let slot = self.slot;
        let arrivals = self
            .spec
            .mts
            .iter()
            .zip(&mut self.arrival_rngs)
            .map(|(mt, rng)| mt.arrivals.sample(slot, tau, rng))
            .collect::<Result<Vec<_>>>()?;
        // One load factor per slot, drawn exactly as the single-MT service model.
        let reference = SystemParams {
            remote_rate: 1.0,
            compute_scale: 1.0,
            ..self.spec.mts[0].params
        };
        let (u, _) = match self.spec.service {
            ServiceKind::Constant => (1.0, 1.0),
            kind => sample_service(&reference, kind, &mut self.service_rng),
        };
        let (server_rates, scale_factors) = match self.spec.service {
            ServiceKind::Constant => (
                self.spec.server_rates.clone(),
                self.spec.mts.iter().map(|mt| mt.params.compute_scale).collect(),
            ),
            ServiceKind::ScaledByK => (
                self.spec.server_rates.iter().map(|r| r * u).collect(),
                self.spec.mts.iter().map(|mt| mt.params.compute_scale * u).collect(),
            ),
        };
        self.slot += 1;
        Ok(FleetDraw {
            channels,
            arrivals,
            server_rates,
            scale_factors,
        })
    }
}

/// Per-pair candidate built before the servers decide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub decision: Decision,
    /// Drift-plus-penalty change `β·P_t + (V_r − V_l)·v_t` from granting.
    pub score: f64,
    pub rate: f64,
}

/// The closed-form policy run by every MT, with per-server priority state.
#[derive(Debug, Clone)]
pub struct FleetPolicy {
    cfg: FleetPolicyConfig,
    mts: Vec<SystemParams>,
    server_rates: Vec<f64>,
    pairs: Vec<PairPriority>,
    shares: Vec<AccessShare>,
    ratios: AccessRatios,
    local_windows: Vec<RateWindow>,
    server_windows: Vec<RateWindow>,
    diag: PolicyDiagnostics,
}

impl FleetPolicy {
    pub fn new(spec: &FleetSpec, cfg: FleetPolicyConfig) -> Result<Self> {
        spec.validate()?;
        if cfg.window == 0 {
            return Err(Error::param("window", "must be at least one slot"));
        }
        let (n, m) = (spec.mts.len(), spec.server_rates.len());
        let mts: Vec<SystemParams> = spec.mts.iter().map(|mt| mt.params).collect();
        let mut pairs = Vec::with_capacity(n * m);
        for mt in &mts {
            for &rate in &spec.server_rates {
                let p = pair_params(mt, rate, AccessShare::DEDICATED);
                pairs.push(per_mt_priority(&p, &WindowStats::default(), None)?);
            }
        }
        Ok(Self {
            cfg,
            mts,
            server_rates: spec.server_rates.clone(),
            pairs,
            shares: vec![AccessShare::DEDICATED; n * m],
            ratios: AccessRatios::new(n, m, cfg.smoothing)?,
            local_windows: vec![RateWindow::new(cfg.window); n],
            server_windows: vec![RateWindow::new(cfg.window); m],
            diag: PolicyDiagnostics::default(),
        })
    }

    pub fn pair(&self, i: usize, j: usize) -> &PairPriority {
        &self.pairs[i * self.server_rates.len() + j]
    }

    pub fn ratios(&self) -> &AccessRatios {
        &self.ratios
    }

    pub fn diagnostics(&self) -> PolicyDiagnostics {
        self.diag
    }

    /// Candidate decision of every pair under `ρ_ij = 1`.
    pub fn candidates(&self, state: &FleetState, channels: &[ChannelState]) -> Result<Vec<Candidate>> {
        let m = self.server_rates.len();
        let mut out = Vec::with_capacity(self.pairs.len());
        for (i, &q_l) in state.q_l.iter().enumerate() {
            for (j, &q_r) in state.q_r.iter().enumerate() {
                let pair = &self.pairs[i * m + j];
                let (v_l, v_r) = gradients(&pair.coeffs, q_l, q_r)?;
                let h = channels[i * m + j];
                let decision = decide(v_l, v_r, h, &pair.params);
                let rate = pair.params.tx_rate_unchecked(decision.p_t, h.gain);
                // Negative whenever the MT wants to transmit, since P_t minimizes it.
                let score = if decision.p_t > 0.0 {
                    (pair.params.beta * decision.p_t + (v_r - v_l) * rate).min(-f64::MIN_POSITIVE)
                } else {
                    0.0
                };
                out.push(Candidate { decision, score, rate });
            }
        }
        Ok(out)
    }

    /// Grants access and returns the decision each MT applies.
    pub fn decide(&mut self, candidates: &[Candidate]) -> Result<(AccessSolution, Vec<Decision>)> {
        let (n, m) = (self.mts.len(), self.server_rates.len());
        let scores = ScoreMatrix::new(n, m, candidates.iter().map(|c| c.score).collect())?;
        let access = assign(&scores);
        let decisions = (0..n)
            .map(|i| {
                let d = match access.server_of(i) {
                    Some(j) => candidates[i * m + j].decision,
                    None => {
                        // Keep the local power of the most attractive server.
                        let j = (0..m)
                            .min_by(|&a, &b| scores.get(i, a).total_cmp(&scores.get(i, b)))
                            .unwrap_or(0);
                        Decision {
                            p_l: candidates[i * m + j].decision.p_l,
                            p_t: 0.0,
                        }
                    }
                };
                match self.cfg.p_max {
                    Some(cap) => {
                        let (d, hit) = d.capped(cap);
                        if hit {
                            self.diag.capped_slots += 1;
                        }
                        d
                    }
                    None => d,
                }
            })
            .collect();
        Ok((access, decisions))
    }

    /// Feeds back one slot and refreshes every pair.
    pub fn observe(
        &mut self,
        access: &AccessSolution,
        candidates: &[Candidate],
        draw: &FleetDraw,
        flows: &FleetFlows,
    ) -> Result<()> {
        let m = self.server_rates.len();
        for (i, w) in self.local_windows.iter_mut().enumerate() {
            let tau = self.mts[i].tau;
            let local_served = match self.cfg.input {
                EstimatorInput::Offered => (flows.v_l[i] + flows.v_t[i]) * tau,
                EstimatorInput::Realized => flows.served_local[i] + flows.served_tx[i],
            };
            w.push(SlotFlows {
                local_arrived: draw.arrivals[i],
                local_served,
                ..SlotFlows::default()
            });
        }
        for (j, w) in self.server_windows.iter_mut().enumerate() {
            w.push(SlotFlows {
                remote_arrived: flows.server_inflow[j],
                remote_capacity: draw.server_rates[j] * self.mts[0].tau,
                ..SlotFlows::default()
            });
        }
        let requests: Vec<PairRequest> = candidates
            .iter()
            .map(|c| PairRequest {
                power: c.decision.p_t,
                rate: c.rate,
            })
            .collect();
        self.ratios.update(access, &requests);

        for i in 0..self.mts.len() {
            let local = self.local_windows[i].stats();
            for j in 0..m {
                let k = i * m + j;
                let share = AccessShare {
                    power: self.ratios.power(i, j).max(SHARE_FLOOR),
                    rate: self.ratios.rate(i, j).max(SHARE_FLOOR),
                };
                let old = self.shares[k];
                if (share.power - old.power).abs() > SHARE_REFRESH || (share.rate - old.rate).abs() > SHARE_REFRESH {
                    let p = pair_params(&self.mts[i], self.server_rates[j], share);
                    self.pairs[k].params = p;
                    self.pairs[k].steady = solve_steady_state(&p)?;
                    self.shares[k] = share;
                }
                let remote = self.server_windows[j].stats();
                let stats = WindowStats {
                    slots: local.slots,
                    local_arrived: local.local_arrived,
                    local_served: local.local_served,
                    remote_arrived: remote.remote_arrived,
                    remote_capacity: remote.remote_capacity,
                };
                let pair = &mut self.pairs[k];
                if let Ok(est) = estimate_rates(&stats, &pair.params, &pair.steady) {
                    pair.estimate = est;
                    pair.coeffs = coefficients(&est, &pair.steady, &pair.params, &mut self.diag);
                }
            }
        }
        Ok(())
    }
}

/// One recorded fleet slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSlot {
    pub slot: usize,
    pub state: FleetState,
    pub access: AccessSolution,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetMetrics {
    pub seed: u64,
    pub slots: usize,
    /// Per-MT average delay (s).
    pub mt_delay: Vec<f64>,
    /// Mean of `mt_delay`.
    pub delay: f64,
    /// Per-MT average power `P_l + ρ·P_t` (W).
    pub mt_power: Vec<f64>,
    pub power: f64,
    pub mean_q_l: Vec<f64>,
    pub mean_q_r: Vec<f64>,
    /// Largest local backlog of any MT over the averaging window.
    pub max_q_l: f64,
    /// Largest backlog of any server over the averaging window.
    pub max_q_r: f64,
    /// Slots in which each pair was granted (row-major).
    pub grants: Vec<u64>,
    pub arrivals_total: f64,
    pub served_local_total: f64,
    pub served_remote_total: f64,
    pub final_state: FleetState,
    pub policy: PolicyDiagnostics,
}

impl FleetMetrics {
    /// `|in − out − Δbacklog|` over the whole fleet, relative to arrivals.
    pub fn conservation_error(&self, initial: &FleetState) -> f64 {
        let backlog = |s: &FleetState| s.q_l.iter().sum::<f64>() + s.q_r.iter().sum::<f64>();
        let delta = backlog(&self.final_state) - backlog(initial);
        let out = self.served_local_total + self.served_remote_total;
        (self.arrivals_total - out - delta).abs() / self.arrivals_total.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetOutput {
    pub metrics: FleetMetrics,
    pub trace: Vec<FleetSlot>,
}

/// Simulates one fleet run under the closed-form fleet policy.
pub fn simulate_fleet(spec: &FleetSpec, cfg: FleetPolicyConfig, opts: &FleetOptions, seed: u64) -> Result<FleetOutput> {
    spec.validate()?;
    if opts.horizon == 0 {
        return Err(Error::contract("horizon must be at least one slot"));
    }
    let (n, m) = (spec.mts.len(), spec.server_rates.len());
    let params: Vec<SystemParams> = spec.mts.iter().map(|mt| mt.params).collect();
    let mut policy = FleetPolicy::new(spec, cfg)?;
    let mut env = FleetEnvironment::new(spec, seed);
    let mut histories = vec![ChannelHistory::new(spec.csi_delay); n * m];
    let mut state = FleetState::empty(n, m);

    let mut sum_q_l = vec![0.0; n];
    let mut sum_q_r = vec![0.0; m];
    let mut charged = vec![0.0; n];
    let mut sum_total_r = 0.0;
    let mut power_l = vec![0.0; n];
    let mut power_t = vec![0.0; n];
    let mut inflow_by = vec![0.0; n * m];
    let mut grants = vec![0u64; n * m];
    let mut trace = Vec::new();
    let mut count = 0usize;
    let (mut max_q_l, mut max_q_r) = (0.0f64, 0.0f64);
    let (mut arrivals_total, mut served_local_total, mut served_remote_total) = (0.0, 0.0, 0.0);

    for slot in 0..opts.horizon {
        let draw = env.next_slot()?;
        let seen: Vec<ChannelState> = histories
            .iter_mut()
            .zip(&draw.channels)
            .map(|(h, &c)| {
                h.push(c);
                h.stale(c, spec.csi_delay).channel
            })
            .collect();
        let candidates = policy.candidates(&state, &seen)?;
        let (access, decisions) = policy.decide(&candidates)?;
        if let Some((i, d)) = decisions
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.p_l >= 0.0 && d.p_t >= 0.0 && d.p_l.is_finite() && d.p_t.is_finite()))
        {
            return Err(Error::contract(format!(
                "MT {i} got invalid powers ({}, {}) at slot {slot}",
                d.p_l, d.p_t
            )));
        }
        let (next, flows) = fleet_step(&state, &access, &decisions, &draw, &params, opts.transfer)?;
        policy.observe(&access, &candidates, &draw, &flows)?;

        for (i, j) in access.pairs() {
            grants[i * m + j] += 1;
            inflow_by[i * m + j] += flows.served_tx[i];
        }
        arrivals_total += draw.arrivals.iter().sum::<f64>();
        served_local_total += flows.served_local.iter().sum::<f64>();
        served_remote_total += flows.served_remote.iter().sum::<f64>();

        if slot >= opts.warmup {
            count += 1;
            let total_r: f64 = state.q_r.iter().sum();
            for i in 0..n {
                sum_q_l[i] += state.q_l[i];
                power_l[i] += decisions[i].p_l;
                power_t[i] += decisions[i].p_t;
                if opts.attribution == DelayAttribution::Proportional {
                    charged[i] += (0..m)
                        .map(|j| {
                            let total: f64 = (0..n).map(|k| inflow_by[k * m + j]).sum();
                            if total > 0.0 {
                                state.q_r[j] * inflow_by[i * m + j] / total
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>();
                }
            }
            sum_total_r += total_r;
            max_q_l = state.q_l.iter().fold(max_q_l, |a, &q| a.max(q));
            max_q_r = state.q_r.iter().fold(max_q_r, |a, &q| a.max(q));
            for (s, q) in sum_q_r.iter_mut().zip(&state.q_r) {
                *s += q;
            }
        }
        if opts.record_trace {
            trace.push(FleetSlot {
                slot,
                state: state.clone(),
                access: access.clone(),
                decisions: decisions.clone(),
            });
        }
        state = next;
    }

    let c = count.max(1) as f64;
    let mt_delay: Vec<f64> = (0..n)
        .map(|i| {
            let remote = match opts.attribution {
                DelayAttribution::AllServers => sum_total_r,
                DelayAttribution::Proportional => charged[i],
            };
            (sum_q_l[i] + remote) / c / params[i].arrival_rate + opts.control_delay
        })
        .collect();
    let mt_power: Vec<f64> = power_l.iter().zip(&power_t).map(|(l, t)| (l + t) / c).collect();
    let metrics = FleetMetrics {
        seed,
        slots: count,
        delay: mt_delay.iter().sum::<f64>() / n as f64,
        mt_delay,
        power: mt_power.iter().sum::<f64>() / n as f64,
        mt_power,
        mean_q_l: sum_q_l.iter().map(|q| q / c).collect(),
        mean_q_r: sum_q_r.iter().map(|q| q / c).collect(),
        max_q_l,
        max_q_r,
        grants,
        arrivals_total,
        served_local_total,
        served_remote_total,
        final_state: state,
        policy: policy.diagnostics(),
    };
    Ok(FleetOutput { metrics, trace })
}

/// Seed-sorted fleet runs with delay and power summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetAggregate {
    pub runs: Vec<FleetMetrics>,
    pub delay: Summary,
    pub power: Summary,
}

pub fn fleet_monte_carlo(
    spec: &FleetSpec,
    cfg: FleetPolicyConfig,
    opts: &FleetOptions,
    runs: usize,
    base_seed: u64,
) -> Result<FleetAggregate> {
    if runs == 0 {
        return Err(Error::contract("at least one run is required"));
    }
    let mut metrics = (0..runs as u64)
        .into_par_iter()
        .map(|k| simulate_fleet(spec, cfg, opts, base_seed + k).map(|o| o.metrics))
        .collect::<Result<Vec<_>>>()?;
    metrics.sort_by_key(|r| r.seed);
    let delay = Summary::of(&metrics.iter().map(|r| r.delay).collect::<Vec<_>>());
    let power = Summary::of(&metrics.iter().map(|r| r.power).collect::<Vec<_>>());
    Ok(FleetAggregate {
        runs: metrics,
        delay,
        power,
    })
}

/// Draws i.i.d. uniform scores in `[lo, hi)`; handy for assignment checks.
pub fn random_scores<R: Rng + ?Sized>(mts: usize, servers: usize, lo: f64, hi: f64, rng: &mut R) -> ScoreMatrix {
    let values = (0..mts * servers).map(|_| rng.random_range(lo..hi)).collect();
    ScoreMatrix { mts, servers, values }
}
