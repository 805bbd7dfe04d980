//! Dynamic instantaneous rate estimation.
//!
//! The in–out rate differences of the virtual queues are measured over a
//! short sliding window and then mapped back to the operating point
//! `(V_l,c, x_c, C)` that would produce them.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numeric::{bisect_increasing, expand_upper};
use crate::policy::steady::{operating_cost, Scenario, SteadyState};
use crate::sysmodel::SystemParams;

/// Packet totals over the last `slots` slots.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowStats {
    pub slots: usize,
    pub local_arrived: f64,
    /// Service offered by the MT (local computation plus transmission).
    pub local_served: f64,
    pub remote_arrived: f64,
    /// Service offered by the MEC server.
    pub remote_capacity: f64,
}

/// One slot's contribution to a [`WindowStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotFlows {
    pub local_arrived: f64,
    pub local_served: f64,
    pub remote_arrived: f64,
    pub remote_capacity: f64,
}

/// Sliding window of per-slot flows.
#[derive(Debug, Clone)]
pub struct RateWindow {
    len: usize,
    slots: VecDeque<SlotFlows>,
    sum: SlotFlows,
}

impl RateWindow {
    pub fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            slots: VecDeque::with_capacity(len.max(1)),
            sum: SlotFlows::default(),
        }
    }

    pub fn push(&mut self, f: SlotFlows) {
        if self.slots.len() == self.len {
            if let Some(old) = self.slots.pop_front() {
                self.sum.local_arrived -= old.local_arrived;
                self.sum.local_served -= old.local_served;
                self.sum.remote_arrived -= old.remote_arrived;
                self.sum.remote_capacity -= old.remote_capacity;
            }
        }
        self.sum.local_arrived += f.local_arrived;
        self.sum.local_served += f.local_served;
        self.sum.remote_arrived += f.remote_arrived;
        self.sum.remote_capacity += f.remote_capacity;
        self.slots.push_back(f);
    }

    pub fn stats(&self) -> WindowStats {
        // Re-sum instead of trusting the running totals once the window is
        // short enough; keeps the totals free of drift.
        let s = if self.slots.len() <= 64 {
            self.slots.iter().fold(SlotFlows::default(), |mut a, f| {
                a.local_arrived += f.local_arrived;
                a.local_served += f.local_served;
                a.remote_arrived += f.remote_arrived;
                a.remote_capacity += f.remote_capacity;
                a
            })
        } else {
            self.sum
        };
        WindowStats {
            slots: self.slots.len(),
            local_arrived: s.local_arrived,
            local_served: s.local_served,
            remote_arrived: s.remote_arrived,
            remote_capacity: s.remote_capacity,
        }
    }
}

/// Instantaneous rate-difference state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub eps: f64,
    pub delta: f64,
    pub v_l: f64,
    pub x: f64,
    pub cost: f64,
    pub window: usize,
    /// Raw measured differences before flooring.
    pub eps_measured: f64,
    pub delta_measured: f64,
}

impl RateEstimate {
    /// Estimate with both differences at their floors.
    pub fn at_floor(params: &SystemParams, steady: &SteadyState) -> Result<Self> {
        solve_operating_point(params, steady, params.eps_floor, params.delta_floor, 0.0, 0.0, 0)
    }
}

/// Maps measured window statistics to the instantaneous operating point.
pub fn estimate_rates(window: &WindowStats, params: &SystemParams, steady: &SteadyState) -> Result<RateEstimate> {
    if window.slots < 1 {
        return Err(Error::contract("rate-estimation window must span at least one slot"));
    }
    let span = window.slots as f64 * params.tau;
    let eps_hat = (window.local_served - window.local_arrived) / span;
    let delta_hat = (window.remote_capacity - window.remote_arrived) / span;
    solve_operating_point(params, steady, eps_hat, delta_hat, eps_hat, delta_hat, window.slots)
}

fn solve_operating_point(
    params: &SystemParams,
    steady: &SteadyState,
    eps_hat: f64,
    delta_hat: f64,
    eps_measured: f64,
    delta_measured: f64,
    window: usize,
) -> Result<RateEstimate> {
    let lambda = params.arrival_rate;
    let kappa = params.local_gain();
    let load = |v: f64| params.evp_unchecked(v) + kappa * v;
    let eps_floor = params.eps_floor;

    let (eps, delta, v_l, x) = match steady.scenario {
        Scenario::Sufficient => {
            // Keep the remote difference v̄out − EVP(V_l,c) at or above δ₀.
            let eps_cap = if params.remote_rate > params.delta_floor {
                match params.evp_inverse(params.remote_rate - params.delta_floor) {
                    Ok(x_cap) => load(x_cap) - lambda,
                    Err(Error::InfeasibleLoad(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            } else {
                eps_floor
            };
            let eps = eps_hat.min(eps_cap).max(eps_floor);
            let target = lambda + eps;
            let hi = expand_upper(&load, target, steady.v_l.max(1e-12))
                .ok_or_else(|| Error::InfeasibleLoad(format!("cannot reach service rate {target}")))?;
            let v = bisect_increasing(load, target, 0.0, hi)?;
            (
                eps,
                (params.remote_rate - params.evp_unchecked(v)).max(params.delta_floor),
                v,
                v,
            )
        }
        Scenario::Constrained => {
            let eps = eps_hat.max(eps_floor);
            let delta = delta_hat
                .max(params.delta_floor)
                .min(params.remote_rate.max(params.delta_floor));
            let x = params.evp_inverse((params.remote_rate - delta).max(0.0))?;
            let v = (eps + lambda - params.evp_unchecked(x)) / kappa;
            (eps, delta, v, x)
        }
    };
    Ok(RateEstimate {
        eps,
        delta,
        v_l,
        x,
        cost: operating_cost(params, v_l, x),
        window,
        eps_measured,
        delta_measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::steady::solve_steady_state;

    fn steady_window(params: &SystemParams, slots: usize) -> WindowStats {
        let per = params.arrival_rate * params.tau;
        WindowStats {
            slots,
            local_arrived: per * slots as f64,
            local_served: per * slots as f64,
            remote_arrived: 0.3 * slots as f64,
            remote_capacity: 0.3 * slots as f64,
        }
    }

    #[test]
    fn steady_window_floors_both_differences() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        let e = estimate_rates(&steady_window(&p, 10), &p, &s).unwrap();
        assert_eq!(e.eps, p.eps_floor);
        assert_eq!(e.eps_measured, 0.0);

        let pc = SystemParams {
            arrival_rate: 8.0,
            remote_rate: 6.0,
            ..SystemParams::default()
        };
        let sc = solve_steady_state(&pc).unwrap();
        let e = estimate_rates(&steady_window(&pc, 10), &pc, &sc).unwrap();
        assert_eq!(e.eps, pc.eps_floor);
        assert_eq!(e.delta, pc.delta_floor);
    }

    #[test]
    fn negative_measurement_is_floored() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        let mut w = steady_window(&p, 10);
        w.local_served -= 2.0;
        let e = estimate_rates(&w, &p, &s).unwrap();
        assert!(e.eps_measured < 0.0);
        assert_eq!(e.eps, p.eps_floor);
    }

    #[test]
    fn sufficient_gradient_matches_grid_scan() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        let e = RateEstimate::at_floor(&p, &s).unwrap();
        // Independent scan: the crossing of EVP(V) + κV − λ̄ = ε₀ on a fine grid.
        let kappa = p.compute_scale.powi(2) / (2.0 * p.capacitance * p.beta);
        let f = |v: f64| p.evp(v).unwrap() + kappa * v - p.arrival_rate - p.eps_floor;
        let (mut lo, mut hi) = (0.0, 10.0 * s.v_l.max(1e-12));
        for _ in 0..4 {
            let n = 1000;
            let step = (hi - lo) / n as f64;
            let i = (0..n).find(|&i| f(lo + (i + 1) as f64 * step) >= 0.0).unwrap();
            lo += i as f64 * step;
            hi = lo + step;
        }
        let scan = 0.5 * (lo + hi);
        assert!((e.v_l - scan).abs() / scan < 1e-6, "{} vs {scan}", e.v_l);
        let resid = p.evp(e.v_l).unwrap() + p.local_gain() * e.v_l - p.arrival_rate - e.eps;
        assert!(resid.abs() < 1e-9);
    }

    #[test]
    fn constrained_invariants() {
        let p = SystemParams {
            arrival_rate: 8.0,
            remote_rate: 6.0,
            ..SystemParams::default()
        };
        let s = solve_steady_state(&p).unwrap();
        let w = WindowStats {
            slots: 10,
            local_arrived: 8.0,
            local_served: 8.5,
            remote_arrived: 5.0,
            remote_capacity: 6.0,
        };
        let e = estimate_rates(&w, &p, &s).unwrap();
        assert!((e.eps - 0.5).abs() < 1e-12);
        assert!((e.delta - 1.0).abs() < 1e-12);
        assert!((p.remote_rate - p.evp(e.x).unwrap() - e.delta).abs() < 1e-9);
        let resid = p.evp(e.x).unwrap() + p.local_gain() * e.v_l - p.arrival_rate - e.eps;
        assert!(resid.abs() < 1e-9);
    }

    #[test]
    fn sufficient_estimate_keeps_remote_slack() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        let mut w = steady_window(&p, 10);
        w.local_served += 1000.0;
        let e = estimate_rates(&w, &p, &s).unwrap();
        assert!(e.delta >= p.delta_floor * (1.0 - 1e-6));
        assert!(e.eps >= p.eps_floor);
    }

    #[test]
    fn empty_window_is_a_contract_violation() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        assert!(matches!(
            estimate_rates(&WindowStats::default(), &p, &s),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn window_slides() {
        let mut w = RateWindow::new(3);
        for i in 0..5 {
            w.push(SlotFlows {
                local_arrived: i as f64,
                ..Default::default()
            });
        }
        let s = w.stats();
        assert_eq!(s.slots, 3);
        assert_eq!(s.local_arrived, 2.0 + 3.0 + 4.0);
    }
}
