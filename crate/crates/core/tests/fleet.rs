use mec_offload::env::EnvSpec;
use mec_offload::multimec::{
    assign, assign_enumerate, assign_hungarian, pair_params, per_mt_priority, random_scores, simulate_fleet,
    AccessRatios, AccessShare, DelayAttribution, FleetOptions, FleetPolicyConfig, FleetSpec, FleetState, PairRequest,
    ScoreMatrix,
};
use mec_offload::policy::{solve_steady_state, ClosedFormConfig, ClosedFormPolicy, WindowStats};
use mec_offload::simulator::{run, RunOptions};
use mec_offload::sysmodel::SystemParams;
use mec_offload::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best total over every 0/1 matrix with row and column sums at most one.
fn enumerate_best(s: &ScoreMatrix, mts: usize, servers: usize) -> f64 {
    fn go(s: &ScoreMatrix, i: usize, mts: usize, servers: usize, used: &mut Vec<bool>) -> f64 {
        if i == mts {
            return 0.0;
        }
        let mut best = go(s, i + 1, mts, servers, used);
        for j in 0..servers {
            if !used[j] {
                used[j] = true;
                best = best.min(s.get(i, j) + go(s, i + 1, mts, servers, used));
                used[j] = false;
            }
        }
        best
    }
    go(s, 0, mts, servers, &mut vec![false; servers])
}

#[test]
fn assignment_matches_enumeration_up_to_four_by_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for mts in 1..=4 {
        for servers in 1..=4 {
            for _ in 0..40 {
                let s = random_scores(mts, servers, -1.0, 0.3, &mut rng);
                let best = enumerate_best(&s, mts, servers);
                for sol in [assign(&s), assign_enumerate(&s), assign_hungarian(&s)] {
                    assert!((sol.total(&s) - best).abs() < 1e-12, "{mts}x{servers}");
                    let m = sol.matrix();
                    assert!(m.iter().all(|row| row.iter().map(|&x| x as usize).sum::<usize>() <= 1));
                    assert!((0..servers).all(|j| m.iter().map(|row| row[j] as usize).sum::<usize>() <= 1));
                }
            }
        }
    }
}

#[test]
fn worthless_access_is_not_granted() {
    let s = ScoreMatrix::new(2, 2, vec![0.5, 0.1, 2.0, 0.0]).unwrap();
    assert_eq!(assign(&s).pairs().count(), 0);
    let one = ScoreMatrix::new(1, 1, vec![-0.2]).unwrap();
    assert!(assign(&one).is_granted(0, 0));
}

#[test]
fn one_by_one_fleet_is_the_single_mt_system() {
    let presets = [
        SystemParams::default(),
        SystemParams {
            arrival_rate: 8.0,
            remote_rate: 7.5,
            ..SystemParams::default()
        },
    ];
    for p in presets {
        let spec = FleetSpec::uniform(&p, 1, 1, p.remote_rate);
        for seed in [0, 5, 99] {
            let opts = FleetOptions {
                record_trace: true,
                ..FleetOptions::new(1000)
            };
            let fleet = simulate_fleet(&spec, FleetPolicyConfig::default(), &opts, seed).unwrap();
            let mut single = ClosedFormPolicy::new(&p, ClosedFormConfig::default()).unwrap();
            let ropts = RunOptions {
                record_trace: true,
                ..RunOptions::new(1000)
            };
            let out = run(&p, &mut single, &EnvSpec::from_params(&p), &ropts, seed).unwrap();
            assert_eq!(fleet.trace.len(), out.trace.len());
            for (f, s) in fleet.trace.iter().zip(&out.trace) {
                assert_eq!(f.state.q_l[0].to_bits(), s.q_l.to_bits());
                assert_eq!(f.state.q_r[0].to_bits(), s.q_r.to_bits());
                assert_eq!(f.decisions[0].p_t.to_bits(), s.p_t.to_bits());
            }
            assert_eq!(fleet.metrics.delay.to_bits(), out.metrics.avg_delay.to_bits());
            assert_eq!(fleet.metrics.power.to_bits(), out.metrics.avg_power.to_bits());
        }
    }
}

#[test]
fn ratios_follow_grant_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut r = AccessRatios::new(3, 1, 0.05).unwrap();
    let req = |rng: &mut ChaCha8Rng| PairRequest {
        power: rng.random_range(0.01..0.1),
        rate: rng.random_range(1.0..4.0),
    };
    let (mut mean_half, n) = (0.0, 10_000);
    for _ in 0..n {
        r.record(0, 0, req(&mut rng), true);
        r.record(1, 0, req(&mut rng), false);
        r.record(2, 0, req(&mut rng), rng.random_bool(0.5));
        mean_half += r.power(2, 0);
    }
    assert!((r.power(0, 0) - 1.0).abs() < 1e-12 && (r.rate(0, 0) - 1.0).abs() < 1e-12);
    assert!(r.power(1, 0) < 1e-12 && r.rate(1, 0) < 1e-12);
    assert!((mean_half / n as f64 - 0.5).abs() < 0.05);
    assert_eq!(AccessRatios::new(1, 1, 0.05).unwrap().power(0, 0), 1.0);
}

#[test]
fn dedicated_shares_reduce_to_single_mt() {
    let p = SystemParams::default();
    let pair = per_mt_priority(
        &pair_params(&p, p.remote_rate, AccessShare::DEDICATED),
        &WindowStats::default(),
        None,
    )
    .unwrap();
    let single = ClosedFormPolicy::new(&p, ClosedFormConfig::default()).unwrap();
    assert_eq!(&pair.coeffs, single.coeffs());
    assert_eq!(&pair.steady, single.steady_state());
}

#[test]
fn smaller_rate_share_raises_the_gradient() {
    let p = SystemParams::default();
    let xs: Vec<f64> = [1.0, 0.8, 0.5, 0.3, 0.1]
        .into_iter()
        .map(|rate| {
            solve_steady_state(&pair_params(&p, p.remote_rate, AccessShare { power: 1.0, rate }))
                .unwrap()
                .x
        })
        .collect();
    assert!(xs.windows(2).all(|w| w[1] >= w[0]), "{xs:?}");
}

#[test]
fn no_uplink_and_weak_cpu_is_infeasible() {
    let p = SystemParams::default();
    let shut = pair_params(&p, p.remote_rate, AccessShare { power: 0.0, rate: 0.0 });
    assert!(matches!(
        per_mt_priority(&shut, &WindowStats::default(), Some(1.0)),
        Err(Error::InfeasibleLoad(_))
    ));
    let weak = SystemParams {
        compute_scale: 1e-160,
        ..shut
    };
    assert!(matches!(solve_steady_state(&weak), Err(Error::InfeasibleLoad(_))));
}

#[test]
fn fleets_conserve_packets() {
    let p = SystemParams::default();
    for (mts, servers) in [(2, 1), (3, 2), (1, 3), (4, 4)] {
        let spec = FleetSpec::uniform(&p, mts, servers, 13.0);
        let out = simulate_fleet(&spec, FleetPolicyConfig::default(), &FleetOptions::new(400), 9).unwrap();
        assert!(out.metrics.conservation_error(&FleetState::empty(mts, servers)) < 1e-6);
        assert!(out
            .metrics
            .final_state
            .q_l
            .iter()
            .chain(&out.metrics.final_state.q_r)
            .all(|&q| q >= 0.0));
    }
}

#[test]
fn delay_attribution_and_control_delay() {
    let p = SystemParams::default();
    let spec = FleetSpec::uniform(&p, 3, 2, 13.0);
    let base = FleetOptions::new(400);
    let all = simulate_fleet(&spec, FleetPolicyConfig::default(), &base, 4)
        .unwrap()
        .metrics;
    let prop = FleetOptions {
        attribution: DelayAttribution::Proportional,
        ..base.clone()
    };
    let share = simulate_fleet(&spec, FleetPolicyConfig::default(), &prop, 4)
        .unwrap()
        .metrics;
    assert!(share.delay <= all.delay + 1e-12);
    let late = FleetOptions {
        control_delay: 0.02,
        ..base
    };
    let shifted = simulate_fleet(&spec, FleetPolicyConfig::default(), &late, 4)
        .unwrap()
        .metrics;
    assert!((shifted.delay - all.delay - 0.02).abs() < 1e-12);
}
