//! Closed-form delay-optimal offloading policy.
//!
//! The policy is a multi-level water-filling rule driven by the gradients of
//! a quadratic priority function whose coefficients come from the steady
//! state of the fluid system and the measured instantaneous rate differences.

mod closed_form;
mod estimate;
mod priority;
mod steady;

pub(crate) use closed_form::coefficients;
pub use closed_form::{ClosedFormConfig, ClosedFormPolicy, EstimatorInput};
pub use estimate::{estimate_rates, RateEstimate, RateWindow, SlotFlows, WindowStats};
pub use priority::{
    gamma_extreme_point, gamma_feasible_set, gradients, priority_coeffs, project_gamma, Interval, PriorityCoeffs,
};
pub use steady::{operating_cost, scenario_threshold, solve_steady_state, Scenario, SteadyState};

use crate::env::ChannelState;
use crate::error::Result;
use crate::simulator::SlotRecord;
use crate::sysmodel::SystemParams;

/// Per-slot power control in watts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Decision {
    pub p_l: f64,
    pub p_t: f64,
}

impl Decision {
    pub const IDLE: Decision = Decision { p_l: 0.0, p_t: 0.0 };

    pub fn total(&self) -> f64 {
        self.p_l + self.p_t
    }

    /// Clamps each power to `p_max`; reports whether anything changed.
    pub fn capped(self, p_max: f64) -> (Decision, bool) {
        let d = Decision {
            p_l: self.p_l.min(p_max),
            p_t: self.p_t.min(p_max),
        };
        (d, d != self)
    }
}

/// What a policy sees at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub slot: usize,
    pub q_l: f64,
    pub q_r: f64,
    /// Channel state available for the decision (possibly stale).
    pub channel: ChannelState,
}

/// Counters a policy may expose for result footnotes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolicyDiagnostics {
    pub gamma_fallbacks: u64,
    pub capped_slots: u64,
    pub inconsistent_estimates: u64,
}

/// Common interface of the proposed policy and every baseline.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, obs: &Observation) -> Result<Decision>;

    /// Feedback after the slot has been simulated.
    fn observe(&mut self, _record: &SlotRecord) {}

    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics::default()
    }
}

/// Optimal powers for the given gradients:
/// `P_l = k̄²/(4cβ²)·(V_l⁺)²` and `P_t = (B/(β·ln2)·(V_l − V_r) − N0/H)⁺`.
pub fn decide(v_l: f64, v_r: f64, channel: ChannelState, params: &SystemParams) -> Decision {
    let vl = v_l.max(0.0);
    let p_l = params.compute_scale.powi(2) / (4.0 * params.capacitance * params.beta.powi(2)) * vl * vl;
    let level = params.rate_scale() / params.beta * (v_l - v_r);
    let p_t = (level - params.noise_power / channel.gain).max(0.0);
    Decision { p_l, p_t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(gain: f64) -> ChannelState {
        ChannelState { gain }
    }

    #[test]
    fn zero_gradient_means_no_local_power() {
        let p = SystemParams::default();
        assert_eq!(decide(0.0, 0.0, h(p.mean_gain), &p).p_l, 0.0);
    }

    #[test]
    fn water_level_boundary() {
        let p = SystemParams::default();
        let gain = p.mean_gain;
        let v_r = 0.0;
        let v_l = p.beta * p.noise_power / (gain * p.rate_scale());
        let d = decide(v_l, v_r, h(gain), &p);
        assert!(d.p_t.abs() < 1e-18);
    }

    #[test]
    fn cap_is_flagged() {
        let (d, hit) = Decision { p_l: 0.5, p_t: 2.0 }.capped(1.0);
        assert!(hit);
        assert_eq!(d, Decision { p_l: 0.5, p_t: 1.0 });
        assert!(!Decision { p_l: 0.5, p_t: 0.2 }.capped(1.0).1);
    }

    proptest! {
        #[test]
        fn no_transmission_without_gradient_gap(v_l in 0.0..10.0f64, gap in 0.0..10.0f64, g in 1e-12..1e-6f64) {
            let p = SystemParams::default();
            prop_assert_eq!(decide(v_l, v_l + gap, h(g), &p).p_t, 0.0);
        }

        #[test]
        fn water_filling_monotonicity(v_l in 0.0..1.0f64, v_r in 0.0..1.0f64, g in 1e-12..1e-6f64, bump in 0.0..1.0f64) {
            let p = SystemParams::default();
            let base = decide(v_l, v_r, h(g), &p).p_t;
            prop_assert!(decide(v_l, v_r, h(g * (1.0 + bump)), &p).p_t >= base);
            prop_assert!(decide(v_l + bump, v_r, h(g), &p).p_t >= base);
            prop_assert!(decide(v_l, v_r + bump, h(g), &p).p_t <= base);
            prop_assert!(decide(v_l, v_r, h(g), &p).p_l >= 0.0);
        }
    }
}
