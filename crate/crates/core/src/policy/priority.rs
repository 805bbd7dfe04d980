use crate::error::{Error, Result};
use crate::policy::estimate::RateEstimate;
use crate::policy::steady::{Scenario, SteadyState};
use crate::sysmodel::SystemParams;

/// Coefficients of the separable quadratic priority function
/// `V(q_l, q_r) = a_l·q_l² + b_l·q_l + a_r·q_r² + b_r·q_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityCoeffs {
    pub a_l: f64,
    pub b_l: f64,
    pub a_r: f64,
    pub b_r: f64,
    pub gamma: f64,
    /// Set when the feasible set for `γ` was empty and `[0, 1]` was used.
    pub gamma_fallback: bool,
}

impl PriorityCoeffs {
    pub fn value(&self, q_l: f64, q_r: f64) -> f64 {
        self.a_l * q_l * q_l + self.b_l * q_l + self.a_r * q_r * q_r + self.b_r * q_r
    }
}

/// Closed interval used by the `γ` projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(a: f64, b: f64) -> Self {
        Self { lo: a, hi: b }
    }

    pub fn intersect(self, other: Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn clamp(self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Unconstrained optimum of the `γ` trade-off in the constrained scenario.
pub fn gamma_extreme_point(eps: f64, delta: f64, k: f64, steady: &SteadyState) -> f64 {
    let s = 2.0 * (eps + delta) * k;
    (steady.x + steady.v_l) * eps * delta / s + steady.v_l * eps * eps / s + eps / (2.0 * (eps + delta))
}

/// Feasible set for `γ`: the unit interval intersected with the gradient
/// windows `V_l,s ≤ γA ≤ V_l,c` and `x_c ≤ γA − (1−γ)D ≤ x_s`,
/// where `A = K/ε`, `D = K/δ`.
pub fn gamma_feasible_set(est: &RateEstimate, steady: &SteadyState, k: f64) -> Option<Interval> {
    let a = k / est.eps;
    let d = k / est.delta;
    let local = Interval::new(steady.v_l / a, est.v_l / a);
    let diff = Interval::new((est.x + d) / (a + d), (steady.x + d) / (a + d));
    Interval::UNIT.intersect(local)?.intersect(diff)
}

/// Projects the extreme point onto the feasible set, falling back to `[0, 1]`.
pub fn project_gamma(candidate: f64, feasible: Option<Interval>) -> (f64, bool) {
    match feasible {
        Some(set) => (set.clamp(candidate), false),
        None => (Interval::UNIT.clamp(candidate), true),
    }
}

/// Builds the priority-function coefficients for the current estimate.
pub fn priority_coeffs(est: &RateEstimate, steady: &SteadyState, params: &SystemParams) -> Result<PriorityCoeffs> {
    let scale = params.alpha / (2.0 * params.arrival_rate);
    let k = (est.cost - steady.cost).max(0.0);
    let a_l = scale / est.eps;
    match steady.scenario {
        Scenario::Sufficient => {
            let slack = params.remote_rate - params.evp_unchecked(est.v_l);
            if !(slack > 0.0) {
                return Err(Error::ScenarioInconsistency(format!(
                    "remote slack v̄out − EVP(V_l,c) = {slack} at λ̄ = {}",
                    params.arrival_rate
                )));
            }
            Ok(PriorityCoeffs {
                a_l,
                b_l: k / est.eps,
                a_r: scale / slack,
                b_r: 0.0,
                gamma: 1.0,
                gamma_fallback: false,
            })
        }
        Scenario::Constrained => {
            let (gamma, gamma_fallback) = if k > 0.0 {
                let candidate = gamma_extreme_point(est.eps, est.delta, k, steady);
                project_gamma(candidate, gamma_feasible_set(est, steady, k))
            } else {
                (1.0, true)
            };
            Ok(PriorityCoeffs {
                a_l,
                b_l: gamma * k / est.eps,
                a_r: scale / est.delta,
                b_r: (1.0 - gamma) * k / est.delta,
                gamma,
                gamma_fallback,
            })
        }
    }
}

/// Partial derivatives `(V_l, V_r)` of the priority function.
pub fn gradients(coeffs: &PriorityCoeffs, q_l: f64, q_r: f64) -> Result<(f64, f64)> {
    if !(q_l >= 0.0 && q_r >= 0.0) {
        return Err(Error::contract(format!("negative queue ({q_l}, {q_r})")));
    }
    Ok((2.0 * coeffs.a_l * q_l + coeffs.b_l, 2.0 * coeffs.a_r * q_r + coeffs.b_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::estimate::RateEstimate;
    use crate::policy::steady::solve_steady_state;

    fn constrained() -> SystemParams {
        SystemParams {
            arrival_rate: 8.0,
            remote_rate: 6.0,
            ..SystemParams::default()
        }
    }

    #[test]
    fn zero_queues_give_zero_value() {
        for p in [SystemParams::default(), constrained()] {
            let s = solve_steady_state(&p).unwrap();
            let e = RateEstimate::at_floor(&p, &s).unwrap();
            let c = priority_coeffs(&e, &s, &p).unwrap();
            assert_eq!(c.value(0.0, 0.0), 0.0);
            assert!(c.a_l > 0.0 && c.a_r > 0.0 && c.b_l >= 0.0 && c.b_r >= 0.0);
        }
    }

    #[test]
    fn equal_differences_extreme_point() {
        let p = constrained();
        let s = solve_steady_state(&p).unwrap();
        let k = 0.37;
        let eps = 0.02;
        let g = gamma_extreme_point(eps, eps, k, &s);
        let expected = eps * (s.x + 2.0 * s.v_l) / (4.0 * k) + 0.25;
        assert!((g - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn extreme_point_is_stationary() {
        // Balance objective (x_s − x(γ))·(V_l(γ) − V_l,s), maximised over γ.
        let p = constrained();
        let s = solve_steady_state(&p).unwrap();
        let (eps, delta, k) = (0.03, 0.07, 0.5);
        let j = |g: f64| {
            let vl = g * k / eps;
            let x = vl - (1.0 - g) * k / delta;
            (s.x - x) * (vl - s.v_l)
        };
        let g = gamma_extreme_point(eps, delta, k, &s);
        // J is quadratic in γ, so central differences are exact up to rounding.
        let h = 0.05;
        let slope = (j(g + h) - j(g - h)) / (2.0 * h);
        let curvature = (j(g + h) - 2.0 * j(g) + j(g - h)) / (h * h);
        assert!(curvature < 0.0);
        assert!(
            slope.abs() < 1e-8 * curvature.abs(),
            "slope {slope}, curvature {curvature}"
        );
    }

    #[test]
    fn projection_clamps() {
        assert_eq!(project_gamma(1.3, Some(Interval::UNIT)), (1.0, false));
        assert_eq!(project_gamma(0.4, Some(Interval::new(0.5, 0.7))), (0.5, false));
        assert_eq!(project_gamma(-0.2, None), (0.0, true));
        assert!(Interval::new(0.0, 0.3).intersect(Interval::new(0.4, 1.0)).is_none());
    }

    #[test]
    fn gradients_are_affine() {
        let c = PriorityCoeffs {
            a_l: 2.0,
            b_l: 0.5,
            a_r: 1.0,
            b_r: 0.25,
            gamma: 1.0,
            gamma_fallback: false,
        };
        assert_eq!(gradients(&c, 0.0, 0.0).unwrap(), (0.5, 0.25));
        assert!(gradients(&c, 10.0, 0.0).unwrap().0 > gradients(&c, 5.0, 0.0).unwrap().0);
        assert!(matches!(gradients(&c, -1.0, 0.0), Err(Error::Contract(_))));
        let h = 1e-4;
        for &(ql, qr) in &[(0.5, 0.5), (3.0, 7.0), (12.0, 1.0)] {
            let (vl, vr) = gradients(&c, ql, qr).unwrap();
            let fl = (c.value(ql + h, qr) - c.value(ql - h, qr)) / (2.0 * h);
            let fr = (c.value(ql, qr + h) - c.value(ql, qr - h)) / (2.0 * h);
            assert!((fl - vl).abs() <= 1e-6 * vl.abs());
            assert!((fr - vr).abs() <= 1e-6 * vr.abs());
        }
    }

    #[test]
    fn sufficient_inconsistency_is_reported() {
        let p = SystemParams::default();
        let s = solve_steady_state(&p).unwrap();
        let mut e = RateEstimate::at_floor(&p, &s).unwrap();
        e.v_l = p.evp_inverse(p.remote_rate).unwrap() * 2.0;
        assert!(matches!(
            priority_coeffs(&e, &s, &p),
            Err(Error::ScenarioInconsistency(_))
        ));
    }
}
