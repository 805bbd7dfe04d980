use crate::error::{Error, Result};
use crate::policy::estimate::{estimate_rates, RateEstimate, RateWindow, SlotFlows};
use crate::policy::priority::{gradients, priority_coeffs, PriorityCoeffs};
use crate::policy::steady::{solve_steady_state, Scenario, SteadyState};
use crate::policy::{decide, Decision, Observation, Policy, PolicyDiagnostics};
use crate::simulator::SlotRecord;
use crate::sysmodel::SystemParams;

/// Which local departures feed the ε̂ measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorInput {
    /// Service the MT offered, `(v_l + v_t)·τ`, whether or not backlog was there.
    Offered,
    /// Packets that actually left the local queue.
    Realized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormConfig {
    /// Sliding-window length W in slots.
    pub window: usize,
    pub input: EstimatorInput,
    /// Optional per-component power cap (W).
    pub p_max: Option<f64>,
}

impl Default for ClosedFormConfig {
    fn default() -> Self {
        Self {
            window: 10,
            input: EstimatorInput::Realized,
            p_max: None,
        }
    }
}

/// The closed-form multi-level water-filling policy.
#[derive(Debug, Clone)]
pub struct ClosedFormPolicy {
    params: SystemParams,
    steady: SteadyState,
    cfg: ClosedFormConfig,
    window: RateWindow,
    estimate: RateEstimate,
    coeffs: PriorityCoeffs,
    diag: PolicyDiagnostics,
}

impl ClosedFormPolicy {
    pub fn new(params: &SystemParams, cfg: ClosedFormConfig) -> Result<Self> {
        if cfg.window == 0 {
            return Err(Error::param("window", "must be at least one slot"));
        }
        if let Some(p) = cfg.p_max {
            if !(p > 0.0) {
                return Err(Error::param("p_max", format!("must be positive, got {p}")));
            }
        }
        let steady = solve_steady_state(params)?;
        let estimate = RateEstimate::at_floor(params, &steady)?;
        let mut diag = PolicyDiagnostics::default();
        let coeffs = coefficients(&estimate, &steady, params, &mut diag);
        Ok(Self {
            params: *params,
            steady,
            cfg,
            window: RateWindow::new(cfg.window),
            estimate,
            coeffs,
            diag,
        })
    }

    pub fn steady_state(&self) -> &SteadyState {
        &self.steady
    }

    pub fn estimate(&self) -> &RateEstimate {
        &self.estimate
    }

    pub fn coeffs(&self) -> &PriorityCoeffs {
        &self.coeffs
    }

    /// Decision for an arbitrary state under the current coefficients.
    pub fn decide_with(&self, q_l: f64, q_r: f64, obs_channel: crate::env::ChannelState) -> Result<Decision> {
        let (v_l, v_r) = gradients(&self.coeffs, q_l, q_r)?;
        Ok(decide(v_l, v_r, obs_channel, &self.params))
    }
}

pub(crate) fn coefficients(
    est: &RateEstimate,
    steady: &SteadyState,
    params: &SystemParams,
    diag: &mut PolicyDiagnostics,
) -> PriorityCoeffs {
    match priority_coeffs(est, steady, params) {
        Ok(c) => {
            if c.gamma_fallback {
                diag.gamma_fallbacks += 1;
            }
            c
        }
        Err(_) => {
            // Only reachable in the sufficient scenario right at the regime
            // boundary; keep the remote weight finite.
            diag.inconsistent_estimates += 1;
            debug_assert_eq!(steady.scenario, Scenario::Sufficient);
            let scale = params.alpha / (2.0 * params.arrival_rate);
            PriorityCoeffs {
                a_l: scale / est.eps,
                b_l: (est.cost - steady.cost).max(0.0) / est.eps,
                a_r: scale / params.delta_floor,
                b_r: 0.0,
                gamma: 1.0,
                gamma_fallback: false,
            }
        }
    }
}

impl Policy for ClosedFormPolicy {
    fn name(&self) -> &str {
        "proposed"
    }

    fn decide(&mut self, obs: &Observation) -> Result<Decision> {
        let d = self.decide_with(obs.q_l, obs.q_r, obs.channel)?;
        Ok(match self.cfg.p_max {
            Some(cap) => {
                let (d, hit) = d.capped(cap);
                if hit {
                    self.diag.capped_slots += 1;
                }
                d
            }
            None => d,
        })
    }

    fn observe(&mut self, r: &SlotRecord) {
        let tau = self.params.tau;
        let local_served = match self.cfg.input {
            EstimatorInput::Offered => (r.v_l + r.v_t) * tau,
            EstimatorInput::Realized => r.served_local + r.served_tx,
        };
        self.window.push(SlotFlows {
            local_arrived: r.arrivals,
            local_served,
            remote_arrived: r.served_tx,
            remote_capacity: r.v_out * tau,
        });
        if let Ok(est) = estimate_rates(&self.window.stats(), &self.params, &self.steady) {
            self.estimate = est;
            self.coeffs = coefficients(&est, &self.steady, &self.params, &mut self.diag);
        }
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        self.diag
    }
}
