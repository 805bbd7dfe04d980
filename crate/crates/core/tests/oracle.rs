use mec_offload::mdp::{
    action_grid, build_mdp, evaluate_decisions, evaluate_policy_on_mdp, relative_value_iteration,
    relative_value_iteration_anchored, ArrivalModel, DiscreteMdp, MdpConfig, StateIx,
};
use mec_offload::policy::Decision;
use mec_offload::sysmodel::SystemParams;
use mec_offload::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_params() -> SystemParams {
    SystemParams {
        compute_scale: 1e-5,
        beta: 0.05,
        ..SystemParams::default()
    }
}

fn medium() -> DiscreteMdp {
    let cfg = MdpConfig {
        q_max: 10.0,
        queue_step: 1.0,
        channel_levels: 4,
        actions: action_grid(2.0, 5),
        arrivals: ArrivalModel::Poisson,
    };
    build_mdp(&small_params(), cfg).unwrap()
}

type Matrix = Vec<Vec<f64>>;

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Long-run average cost from every start state: the Cesàro limit of the
/// lazy chain `0.5·I + 0.5·P`, reached by repeated squaring. Rows are
/// renormalized after each squaring so rounding cannot compound.
fn gain_vector(rows: &[Vec<(usize, f64)>], cost: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let mut m: Matrix = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter().enumerate() {
        m[i][i] += 0.5;
        for &(j, p) in row {
            m[i][j] += 0.5 * p;
        }
    }
    for _ in 0..40 {
        m = mat_mul(&m, &m);
        for row in &mut m {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    m.iter().map(|r| r.iter().zip(cost).map(|(p, c)| p * c).sum()).collect()
}

#[test]
fn tiny_instance_matches_policy_enumeration() {
    let p = small_params();
    let p_l = p.local_power_for_rate(12.0);
    let actions = vec![
        Decision::IDLE,
        Decision { p_l, p_t: 0.0 },
        Decision { p_l: 0.0, p_t: 0.05 },
        Decision { p_l, p_t: 0.05 },
    ];
    let cfg = MdpConfig {
        q_max: 2.0,
        queue_step: 2.0,
        channel_levels: 2,
        actions: actions.clone(),
        arrivals: ArrivalModel::Poisson,
    };
    let mdp = build_mdp(&p, cfg).unwrap();
    let ns = mdp.num_states();
    assert_eq!(ns, 8);
    let rows: Vec<Vec<Vec<(usize, f64)>>> = (0..ns)
        .map(|s| {
            (0..actions.len())
                .map(|a| mdp.transition_row_action(mdp.state(s), a))
                .collect()
        })
        .collect();

    let mut best = vec![f64::INFINITY; ns];
    let total = actions.len().pow(ns as u32);
    for code in 0..total {
        let mut c = code;
        let choice: Vec<usize> = (0..ns)
            .map(|_| {
                let a = c % actions.len();
                c /= actions.len();
                a
            })
            .collect();
        let induced: Vec<Vec<(usize, f64)>> = (0..ns).map(|s| rows[s][choice[s]].clone()).collect();
        let cost: Vec<f64> = (0..ns)
            .map(|s| mdp.stage_cost(mdp.state(s), actions[choice[s]]))
            .collect();
        for (b, g) in best.iter_mut().zip(gain_vector(&induced, &cost)) {
            *b = b.min(g);
        }
    }
    let sol = relative_value_iteration(&mdp).unwrap();
    for b in best {
        assert!((sol.theta - b).abs() < 1e-6, "{} vs {b}", sol.theta);
    }
}

#[test]
fn rows_are_distributions() {
    let mdp = build_mdp(&SystemParams::default(), MdpConfig::desk_scale()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let s = mdp.state(rng.random_range(0..mdp.num_states()));
        let a = rng.random_range(0..mdp.num_actions());
        let row = mdp.transition_row_action(s, a);
        let sum: f64 = row.iter().map(|e| e.1).sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(row.iter().all(|&(j, p)| j < mdp.num_states() && p > 0.0));
    }
    assert_eq!(mdp.num_states(), 31 * 31 * 8);
}

#[test]
fn stage_cost_is_the_slot_cost() {
    let p = SystemParams::default();
    let mdp = build_mdp(&p, MdpConfig::desk_scale()).unwrap();
    for idx in (0..mdp.num_states()).step_by(97) {
        let s = mdp.state(idx);
        let (ql, qr, _) = mdp.physical(s);
        for d in [Decision::IDLE, Decision { p_l: 0.3, p_t: 0.01 }] {
            let g = p.alpha / p.arrival_rate * (ql + qr) + p.beta * (d.p_l + d.p_t);
            assert!((mdp.stage_cost(s, d) - g).abs() <= 1e-12 * g.max(1.0));
        }
    }
}

#[test]
fn deterministic_unit_flows_give_the_hand_chain() {
    let p = SystemParams {
        remote_rate: 10.0,
        ..small_params()
    };
    let serve_one = Decision {
        p_l: p.local_power_for_rate(1.0 / p.tau),
        p_t: 0.0,
    };
    let cfg = MdpConfig {
        q_max: 2.0,
        queue_step: 1.0,
        channel_levels: 1,
        actions: vec![serve_one],
        arrivals: ArrivalModel::Deterministic(1.0),
    };
    let mdp = build_mdp(&p, cfg).unwrap();
    let ix = |q_l, q_r| mdp.index(StateIx { q_l, q_r, level: 0 });
    for ql in 0..3 {
        for qr in 0..3usize {
            let next = (if ql == 2 { 2 } else { 1 }, qr.saturating_sub(1));
            let row = mdp.transition_row_action(
                StateIx {
                    q_l: ql,
                    q_r: qr,
                    level: 0,
                },
                0,
            );
            assert_eq!(row.len(), 1, "({ql}, {qr}): {row:?}");
            assert_eq!(row[0].0, ix(next.0, next.1));
            assert!((row[0].1 - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn anchor_does_not_move_theta() {
    let mdp = medium();
    let a = relative_value_iteration(&mdp).unwrap();
    let b = relative_value_iteration_anchored(&mdp, mdp.num_states() / 2 + 3).unwrap();
    assert!((a.theta - b.theta).abs() < 1e-8);
    assert!(a.span < 1e-8);
    assert_eq!(a.values[a.anchor], 0.0);
}

#[test]
fn optimal_policy_reproduces_theta() {
    let mdp = medium();
    let sol = relative_value_iteration(&mdp).unwrap();
    let decisions: Vec<Decision> = (0..mdp.num_states()).map(|i| sol.decision(&mdp, i)).collect();
    let eval = evaluate_decisions(&mdp, &decisions).unwrap();
    assert!(
        (eval.theta - sol.theta).abs() < 1e-8 * sol.theta.max(1.0),
        "{} vs {}",
        eval.theta,
        sol.theta
    );
    assert!(matches!(
        evaluate_decisions(&mdp, &decisions[1..]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn more_actions_never_hurt() {
    let p = small_params();
    let base = MdpConfig {
        q_max: 10.0,
        queue_step: 1.0,
        channel_levels: 4,
        actions: action_grid(2.0, 3),
        arrivals: ArrivalModel::Poisson,
    };
    let mut wider = base.clone();
    wider.actions.extend(action_grid(2.0, 5));
    let t0 = relative_value_iteration(&build_mdp(&p, base).unwrap()).unwrap().theta;
    let t1 = relative_value_iteration(&build_mdp(&p, wider).unwrap()).unwrap().theta;
    assert!(t1 <= t0 + 1e-8, "{t1} > {t0}");
}

#[test]
fn relative_values_grow_with_backlog() {
    let mdp = medium();
    let sol = relative_value_iteration(&mdp).unwrap();
    let n = mdp.queue_levels();
    let m = mdp.channel_gains().len();
    let avg = |ql, qr| {
        (0..m)
            .map(|level| {
                sol.values[mdp.index(StateIx {
                    q_l: ql,
                    q_r: qr,
                    level,
                })]
            })
            .sum::<f64>()
            / m as f64
    };
    for ql in 0..n {
        for qr in 0..n {
            let v = avg(ql, qr);
            if ql + 1 < n {
                assert!(avg(ql + 1, qr) >= v - 1e-9 * v.abs().max(1.0));
            }
            if qr + 1 < n {
                assert!(avg(ql, qr + 1) >= v - 1e-9 * v.abs().max(1.0));
            }
        }
    }
}

#[test]
fn idle_policy_piles_up_at_the_boundary() {
    let mdp = medium();
    let eval = evaluate_policy_on_mdp(&mdp, |_, _, _| Ok(Decision::IDLE)).unwrap();
    assert!(eval.boundary_mass > 0.99);
    assert!(eval.resolution_warning());
}

#[test]
fn no_arrivals_means_free_idling() {
    let cfg = MdpConfig {
        arrivals: ArrivalModel::Deterministic(0.0),
        ..medium().config().clone()
    };
    let mdp = build_mdp(&small_params(), cfg).unwrap();
    let sol = relative_value_iteration(&mdp).unwrap();
    assert!(sol.theta.abs() < 1e-8);
    let empty = mdp.index(StateIx {
        q_l: 0,
        q_r: 0,
        level: 0,
    });
    assert_eq!(sol.decision(&mdp, empty), Decision::IDLE);
}
