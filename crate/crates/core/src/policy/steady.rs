use crate::error::{Error, Result};
use crate::numeric::{bisect_increasing, expand_upper};
use crate::sysmodel::SystemParams;

/// Operating regime of the MEC server at the optimal steady state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// The server absorbs the offloaded load (`EVP(x_s) < v̄out`).
    Sufficient,
    /// The server is saturated (`EVP(x_s) = v̄out`).
    Constrained,
}

/// Long-run operating point `(V_l,s, x_s, C∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub v_l: f64,
    pub x: f64,
    pub cost: f64,
    pub scenario: Scenario,
    /// Equilibrium gradient with `EVP(x_e) = v̄out`.
    pub x_e: f64,
    /// Arrival rate at which the regime switches.
    pub threshold: f64,
}

/// Scenario threshold `EVP(x_e) + κ·x_e` and the equilibrium point `x_e`.
pub fn scenario_threshold(params: &SystemParams) -> Result<(f64, f64)> {
    match params.evp_inverse(params.remote_rate) {
        Ok(x_e) => Ok((params.remote_rate + params.local_gain() * x_e, x_e)),
        // The uplink can never saturate the server.
        Err(Error::InfeasibleLoad(_)) => Ok((f64::INFINITY, f64::INFINITY)),
        Err(e) => Err(e),
    }
}

/// Long-run cost `β·EP(x) + (k̄²/4cβ)·V_l²` of an operating point.
pub fn operating_cost(params: &SystemParams, v_l: f64, x: f64) -> f64 {
    params.beta * params.ep_unchecked(x) + 0.5 * params.local_gain() * v_l * v_l
}

/// Solves for the optimal steady state of the fluid system.
///
/// The local gradient is the root of the strictly increasing map
/// `V ↦ EVP(min(V, x_e)) + κ·V = λ̄`.
pub fn solve_steady_state(params: &SystemParams) -> Result<SteadyState> {
    params.validate()?;
    let lambda = params.arrival_rate;
    let kappa = params.local_gain();
    let (threshold, x_e) = scenario_threshold(params)?;
    let load = |v: f64| params.evp_unchecked(v.min(x_e)) + kappa * v;

    let start = x_e.clamp(1e-12, 1.0);
    let hi = expand_upper(&load, lambda, start).ok_or_else(|| {
        Error::InfeasibleLoad(format!(
            "arrival rate {lambda} exceeds every achievable service rate (v̄out = {})",
            params.remote_rate
        ))
    })?;
    let v_l = bisect_increasing(load, lambda, 0.0, hi)?;

    let scenario = if lambda >= threshold {
        Scenario::Constrained
    } else {
        Scenario::Sufficient
    };
    let x = match scenario {
        Scenario::Sufficient => v_l,
        Scenario::Constrained => x_e,
    };
    Ok(SteadyState {
        v_l,
        x,
        cost: operating_cost(params, v_l, x),
        scenario,
        x_e,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_load_is_sufficient() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        assert_eq!(s.scenario, Scenario::Sufficient);
        assert_eq!(s.x, s.v_l);
        let resid = p.evp(s.x).unwrap() + p.local_gain() * s.v_l - p.arrival_rate;
        assert!(resid.abs() < 1e-9);
    }

    #[test]
    fn constrained_preset() {
        let p = SystemParams {
            arrival_rate: 8.0,
            remote_rate: 6.0,
            ..SystemParams::default()
        };
        let s = solve_steady_state(&p).unwrap();
        assert_eq!(s.scenario, Scenario::Constrained);
        assert!((p.evp(s.x).unwrap() - p.remote_rate).abs() < 1e-9);
        let resid = p.evp(s.x).unwrap() + p.local_gain() * s.v_l - p.arrival_rate;
        assert!(resid.abs() < 1e-9);
        assert!(s.x <= s.v_l);
    }

    #[test]
    fn vanishing_load() {
        let p = SystemParams {
            arrival_rate: 1e-9,
            ..SystemParams::default()
        };
        let s = solve_steady_state(&p).unwrap();
        assert!(s.v_l < 1e-3 * SystemParams::default().beta);
        assert!(s.cost < 1e-9);
    }

    #[test]
    fn no_server_is_constrained_and_local_only() {
        let p = SystemParams {
            remote_rate: 0.0,
            ..SystemParams::default()
        };
        let s = solve_steady_state(&p).unwrap();
        assert_eq!(s.scenario, Scenario::Constrained);
        assert_eq!(s.x, 0.0);
        assert!((p.local_gain() * s.v_l - p.arrival_rate).abs() < 1e-9);
    }

    #[test]
    fn infeasible_when_no_gain_can_carry_the_load() {
        let p = SystemParams {
            remote_rate: 0.0,
            compute_scale: 1e-160,
            ..SystemParams::default()
        };
        assert!(matches!(solve_steady_state(&p), Err(Error::InfeasibleLoad(_))));
    }
}
