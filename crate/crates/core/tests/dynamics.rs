use mec_offload::baselines::{Baseline, BaselineConfig, BaselineKind};
use mec_offload::env::{ArrivalProcess, ChannelState, EnvSpec, SlotDraw};
use mec_offload::policy::{ClosedFormConfig, ClosedFormPolicy, Decision, Observation, Policy};
use mec_offload::simulator::{
    monte_carlo, paired_difference, run, stability_probe, step, write_slot_csv, QueueState, RunOptions, Summary,
    TransferMode, Verdict, SLOT_CSV_HEADER,
};
use mec_offload::sysmodel::SystemParams;
use mec_offload::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixed(Decision);

impl Policy for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn decide(&mut self, _obs: &Observation) -> Result<Decision> {
        Ok(self.0)
    }
}

fn draw(gain: f64, arrivals: f64, remote_rate: f64, k: f64) -> SlotDraw {
    SlotDraw {
        channel: ChannelState { gain },
        arrivals,
        remote_rate,
        scale_factor: k,
    }
}

/// Queue update written directly from the rates.
fn oracle(ql: f64, qr: f64, vl: f64, vt: f64, vout: f64, a: f64, tau: f64) -> (f64, f64) {
    let sent = (vt * tau).min((ql - vl * tau).max(0.0));
    (
        (ql - vt * tau - vl * tau).max(0.0) + a,
        (qr - vout * tau).max(0.0) + sent,
    )
}

#[test]
fn step_matches_oracle_bit_for_bit() {
    let p = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let state = QueueState {
            q_l: rng.random_range(0.0..20.0),
            q_r: rng.random_range(0.0..20.0),
        };
        let d = Decision {
            p_l: rng.random_range(0.0..2.0),
            p_t: rng.random_range(0.0..0.5),
        };
        let gain = p.mean_gain * rng.random_range(0.01..5.0);
        let k = p.compute_scale * rng.random_range(0.5..1.5);
        let sd = draw(gain, rng.random_range(0..6) as f64, rng.random_range(0.0..30.0), k);
        let (next, rec) = step(state, d, &sd, &p, TransferMode::Capped);

        assert!((rec.v_l - k / p.capacitance.sqrt() * d.p_l.sqrt()).abs() <= 1e-12 * rec.v_l.max(1.0));
        assert!((rec.v_t - p.tx_rate(d.p_t, gain).unwrap()).abs() <= 1e-12 * rec.v_t.max(1.0));
        let (ql, qr) = oracle(
            state.q_l,
            state.q_r,
            rec.v_l,
            rec.v_t,
            sd.remote_rate,
            sd.arrivals,
            p.tau,
        );
        assert_eq!(next.q_l.to_bits(), ql.to_bits());
        assert_eq!(next.q_r.to_bits(), qr.to_bits());
        assert!(next.q_l >= 0.0 && next.q_r >= 0.0);
        assert!(rec.served_tx <= (state.q_l - rec.served_local).max(0.0) + 1e-12);
        assert!(rec.served_remote <= state.q_r);
    }
}

#[test]
fn step_examples() {
    let p = SystemParams::default();
    let k = p.compute_scale;
    let gain = p.mean_gain;
    let d = Decision {
        p_l: p.local_power_for_rate(1.0 / p.tau),
        p_t: p.tx_power_for_rate(2.0 / p.tau, gain),
    };
    let (next, rec) = step(
        QueueState { q_l: 5.0, q_r: 0.0 },
        d,
        &draw(gain, 3.0, 40.0, k),
        &p,
        TransferMode::Capped,
    );
    assert!((next.q_l - 5.0).abs() < 1e-9);
    assert!((rec.served_tx - 2.0).abs() < 1e-9);
    assert!((next.q_r - 2.0).abs() < 1e-9);

    // Transfers are capped by what local service leaves behind.
    let (capped, _) = step(
        QueueState { q_l: 1.5, q_r: 0.0 },
        d,
        &draw(gain, 0.0, 0.0, k),
        &p,
        TransferMode::Capped,
    );
    assert!((capped.q_r - 0.5).abs() < 1e-9);
    let (strict, _) = step(
        QueueState { q_l: 1.5, q_r: 0.0 },
        d,
        &draw(gain, 0.0, 0.0, k),
        &p,
        TransferMode::Strict,
    );
    assert!((strict.q_r - 2.0).abs() < 1e-9);
}

fn proposed(p: &SystemParams) -> ClosedFormPolicy {
    ClosedFormPolicy::new(p, ClosedFormConfig::default()).unwrap()
}

#[test]
fn delay_identity_and_conservation() {
    for p in [
        SystemParams::default(),
        SystemParams {
            arrival_rate: 8.0,
            remote_rate: 7.5,
            ..SystemParams::default()
        },
    ] {
        let spec = EnvSpec::from_params(&p);
        let opts = RunOptions {
            record_series: true,
            ..RunOptions::new(5000)
        };
        for seed in 0..5 {
            let m = run(&p, &mut proposed(&p), &spec, &opts, seed).unwrap().metrics;
            let total: f64 = m.queue_series.iter().map(|(l, r)| l + r).sum();
            let expected = total / m.queue_series.len() as f64 / p.arrival_rate;
            assert!((m.avg_delay - expected).abs() <= 1e-12 * expected);
            assert!(m.conservation_error(opts.initial) < 1e-6);
            assert!(m.queue_series.iter().all(|&(l, r)| l >= 0.0 && r >= 0.0));
        }
    }
}

#[test]
fn empty_system_stays_empty() {
    let p = SystemParams::default();
    let spec = EnvSpec {
        arrivals: ArrivalProcess::poisson(0.0),
        ..EnvSpec::from_params(&p)
    };
    let opts = RunOptions {
        record_trace: true,
        ..RunOptions::new(300)
    };
    let m = run(&p, &mut Fixed(Decision::IDLE), &spec, &opts, 1).unwrap().metrics;
    assert_eq!((m.avg_delay, m.avg_power), (0.0, 0.0));

    // The proposed policy keeps its floor coefficients; every slot spends the idle decision.
    let mut policy = proposed(&p);
    let reference = proposed(&p);
    let out = run(&p, &mut policy, &spec, &opts, 1).unwrap();
    assert_eq!(out.metrics.avg_delay, 0.0);
    let mut idle = 0.0;
    for r in &out.trace {
        let d = reference
            .decide_with(0.0, 0.0, ChannelState { gain: r.gain_used })
            .unwrap();
        assert_eq!((r.p_l, r.p_t), (d.p_l, d.p_t));
        idle += d.total();
    }
    assert!((out.metrics.avg_power - idle / out.trace.len() as f64).abs() <= 1e-12 * idle.max(1.0));
}

#[test]
fn runs_are_deterministic() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let opts = RunOptions::new(500);
    let a = run(&p, &mut proposed(&p), &spec, &opts, 42).unwrap().metrics;
    let b = run(&p, &mut proposed(&p), &spec, &opts, 42).unwrap().metrics;
    assert_eq!(a, b);
    let c = run(&p, &mut proposed(&p), &spec, &opts, 43).unwrap().metrics;
    assert_ne!(a.avg_delay, c.avg_delay);
}

#[test]
fn sufficient_preset_stays_bounded() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let agg = monte_carlo(
        &p,
        || Ok(Box::new(proposed(&p)) as Box<dyn Policy>),
        &spec,
        &RunOptions::new(500),
        100,
        0,
    )
    .unwrap();
    assert!(agg.delay.mean.is_finite() && agg.delay.mean > 0.0);
    assert!(agg.runs.iter().all(|r| r.max_q_l < 100.0 && r.max_q_r < 100.0));
}

#[test]
fn contract_violations() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let bad = Decision { p_l: -0.1, p_t: 0.0 };
    assert!(matches!(
        run(&p, &mut Fixed(bad), &spec, &RunOptions::new(10), 0),
        Err(Error::Contract(_))
    ));
    let nan = Decision {
        p_l: 0.0,
        p_t: f64::NAN,
    };
    assert!(matches!(
        run(&p, &mut Fixed(nan), &spec, &RunOptions::new(10), 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        run(&p, &mut Fixed(Decision::IDLE), &spec, &RunOptions::new(0), 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(stability_probe(&[(0.0, 0.0); 10]), Err(Error::Contract(_))));
}

fn gt_factory(p: &SystemParams) -> impl Fn() -> Result<Box<dyn Policy>> + Sync + '_ {
    move || Ok(Box::new(Baseline::new(p, BaselineConfig::new(BaselineKind::Gt, 0.05))?) as Box<dyn Policy>)
}

#[test]
fn single_run_aggregate_is_the_run() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let opts = RunOptions::new(300);
    let agg = monte_carlo(&p, gt_factory(&p), &spec, &opts, 1, 7).unwrap();
    let single = run(
        &p,
        &mut Baseline::new(&p, BaselineConfig::new(BaselineKind::Gt, 0.05)).unwrap(),
        &spec,
        &opts,
        7,
    )
    .unwrap()
    .metrics;
    assert_eq!(agg.runs, vec![single.clone()]);
    assert_eq!(agg.delay.mean, single.avg_delay);
    assert_eq!(agg.power.mean, single.avg_power);
    assert_eq!(agg.delay.ci_half, 0.0);
}

#[test]
fn confidence_interval_shrinks_with_runs() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let opts = RunOptions::new(200);
    let ci: Vec<f64> = [25, 100, 400]
        .into_iter()
        .map(|n| {
            monte_carlo(&p, gt_factory(&p), &spec, &opts, n, 0)
                .unwrap()
                .delay
                .ci_half
        })
        .collect();
    for w in ci.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..3.0).contains(&ratio), "{ci:?}");
    }
}

#[test]
fn pairing_reduces_variance() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let opts = RunOptions::new(300);
    let lodco = || Ok(Box::new(Baseline::new(&p, BaselineConfig::new(BaselineKind::Lodco, 0.05))?) as Box<dyn Policy>);
    let a = monte_carlo(&p, gt_factory(&p), &spec, &opts, 100, 0).unwrap();
    let b = monte_carlo(&p, lodco, &spec, &opts, 100, 0).unwrap();
    let b_other = monte_carlo(&p, lodco, &spec, &opts, 100, 10_000).unwrap();
    let paired = paired_difference(&a, &b, |r| r.avg_delay).unwrap();
    let unpaired: Vec<f64> = a
        .runs
        .iter()
        .zip(&b_other.runs)
        .map(|(x, y)| x.avg_delay - y.avg_delay)
        .collect();
    assert!(paired.std_dev < Summary::of(&unpaired).std_dev);
    assert!(matches!(
        paired_difference(&a, &b_other, |r| r.avg_delay),
        Err(Error::Contract(_))
    ));
}

#[test]
fn stability_probe_verdicts() {
    let p = SystemParams::default();
    let spec = EnvSpec::from_params(&p);
    let opts = RunOptions {
        record_series: true,
        ..RunOptions::new(100_000)
    };
    let stable = run(&p, &mut proposed(&p), &spec, &opts, 3).unwrap().metrics;
    assert_eq!(stability_probe(&stable.queue_series).unwrap().verdict, Verdict::Stable);

    let null = run(&p, &mut Fixed(Decision::IDLE), &spec, &opts, 3).unwrap().metrics;
    assert_eq!(stability_probe(&null.queue_series).unwrap().verdict, Verdict::Suspect);

    let flood = SystemParams {
        arrival_rate: 60.0,
        ..p
    };
    let mut gt = Baseline::new(&flood, BaselineConfig::new(BaselineKind::Gt, 0.1)).unwrap();
    let over = run(&flood, &mut gt, &EnvSpec::from_params(&flood), &opts, 3)
        .unwrap()
        .metrics;
    assert_eq!(stability_probe(&over.queue_series).unwrap().verdict, Verdict::Suspect);
}

#[test]
fn slot_csv_round_trip() {
    let p = SystemParams::default();
    let opts = RunOptions {
        record_trace: true,
        ..RunOptions::new(20)
    };
    let out = run(&p, &mut proposed(&p), &EnvSpec::from_params(&p), &opts, 0).unwrap();
    let mut buf = Vec::new();
    write_slot_csv(&mut buf, &out.trace).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SLOT_CSV_HEADER);
    assert_eq!(lines.len(), 21);
    let cols = SLOT_CSV_HEADER.split(',').count();
    assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    assert!(lines[5].starts_with("4,"));
}
