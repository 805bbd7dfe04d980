//! Stochastic environment: channel gains, task arrivals, MEC service rates
//! and stale CSI.
//!
//! Every random source draws from its own ChaCha stream keyed by
//! `(seed, stream id)`, so the channel sequence of a run does not depend on
//! the arrival process or on the policy being simulated.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::sysmodel::SystemParams;

/// Instantaneous linear channel gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub gain: f64,
}

/// Independent random sources of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Channel = 0,
    Arrival = 1,
    Service = 2,
}

/// Stream id for entity indices `(a, b)`; `(0, 0)` maps to the bare kind so
/// a one-MT one-server fleet shares streams with the single-MT simulator.
pub fn stream_id(kind: StreamKind, a: usize, b: usize) -> u64 {
    (kind as u64) | ((((a as u64) << 24) | b as u64) << 4)
}

pub fn stream_rng(seed: u64, kind: StreamKind, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(kind, a, b));
    rng
}

/// Exponential (Rayleigh-fading power) channel with mean gain `L`.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    mean_gain: f64,
    rng: ChaCha8Rng,
}

impl ChannelSampler {
    pub fn new(mean_gain: f64, rng: ChaCha8Rng) -> Self {
        Self { mean_gain, rng }
    }

    pub fn sample(&mut self) -> ChannelState {
        loop {
            let e: f64 = Exp1.sample(&mut self.rng);
            if e > 0.0 {
                return ChannelState {
                    gain: self.mean_gain * e,
                };
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalKind {
    /// Poisson arrivals. Fluid mode draws a Gamma(λ̄τ, 1) amount, which has the
    /// Poisson mean and variance but a continuous support; integer mode draws
    /// the Poisson count itself.
    Poisson {
        integer: bool,
    },
    Constant,
    /// Per-slot packet counts, optionally looped.
    Trace {
        counts: Vec<f64>,
        wrap: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    /// Mean rate λ̄ (packets/s); for traces, the empirical rate after scaling.
    pub rate: f64,
    /// Multiplier applied to trace counts.
    pub scale: f64,
}

impl ArrivalProcess {
    pub fn poisson(rate: f64) -> Self {
        Self {
            kind: ArrivalKind::Poisson { integer: false },
            rate,
            scale: 1.0,
        }
    }

    pub fn poisson_integer(rate: f64) -> Self {
        Self {
            kind: ArrivalKind::Poisson { integer: true },
            rate,
            scale: 1.0,
        }
    }

    pub fn constant(rate: f64) -> Self {
        Self {
            kind: ArrivalKind::Constant,
            rate,
            scale: 1.0,
        }
    }

    /// Trace of per-slot counts; `rate` is set from the empirical mean.
    pub fn trace(counts: Vec<f64>, tau: f64, wrap: bool) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Validation("arrival trace is empty".into()));
        }
        if let Some((i, v)) = counts.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "arrival trace entry {i} is {v}; counts must be finite and >= 0"
            )));
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        Ok(Self {
            kind: ArrivalKind::Trace { counts, wrap },
            rate: mean / tau,
            scale: 1.0,
        })
    }

    /// Mean packets per slot of the raw trace (before scaling).
    pub fn trace_mean_per_slot(&self) -> Option<f64> {
        match &self.kind {
            ArrivalKind::Trace { counts, .. } => Some(counts.iter().sum::<f64>() / counts.len() as f64),
            _ => None,
        }
    }

    /// Rescales a trace so its mean rate equals `target_rate`.
    pub fn rescaled_to(mut self, target_rate: f64, tau: f64) -> Result<Self> {
        let Some(mean) = self.trace_mean_per_slot() else {
            self.rate = target_rate;
            return Ok(self);
        };
        if mean <= 0.0 {
            return Err(Error::Validation("cannot rescale an all-zero trace".into()));
        }
        self.scale = target_rate * tau / mean;
        self.rate = target_rate;
        Ok(self)
    }

    /// Packets arriving at the end of `slot`.
    pub fn sample<R: Rng + ?Sized>(&self, slot: usize, tau: f64, rng: &mut R) -> Result<f64> {
        let mean = self.rate * tau;
        match &self.kind {
            _ if self.rate == 0.0 && !matches!(self.kind, ArrivalKind::Trace { .. }) => Ok(0.0),
            ArrivalKind::Constant => Ok(mean),
            ArrivalKind::Poisson { integer: true } => {
                let d = Poisson::new(mean).map_err(|e| Error::Validation(e.to_string()))?;
                Ok(d.sample(rng))
            }
            ArrivalKind::Poisson { integer: false } => {
                let d = Gamma::new(mean, 1.0).map_err(|e| Error::Validation(e.to_string()))?;
                Ok(d.sample(rng))
            }
            ArrivalKind::Trace { counts, wrap } => {
                let idx = if slot < counts.len() {
                    slot
                } else if *wrap {
                    slot % counts.len()
                } else {
                    return Err(Error::EndOfTrace {
                        slot,
                        len: counts.len(),
                    });
                };
                Ok(counts[idx] * self.scale)
            }
        }
    }
}

/// Reads a single-column per-slot arrival trace.
///
/// One nonnegative number per line; an optional first line `arrivals` is
/// skipped, as are blank lines.
pub fn load_trace(path: &Path, tau: f64) -> Result<ArrivalProcess> {
    let text = fs::read_to_string(path)?;
    let mut counts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("arrivals")) {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("not a number: {line:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!(
                "{}:{}: arrival count must be finite and >= 0, got {v}",
                path.display(),
                i + 1
            )));
        }
        counts.push(v);
    }
    ArrivalProcess::trace(counts, tau, true)
}

/// Reads a timestamped event log (`time_s,packets` per line, optional header)
/// and bins it into slots of length `tau`.
///
/// This is the ingestion path for measurement exports such as MobiPerf
/// throughput records after conversion to packet units. Slot 0 starts at the
/// first timestamp; the trace spans up to the slot containing the last event.
pub fn load_event_trace(path: &Path, tau: f64) -> Result<ArrivalProcess> {
    let text = fs::read_to_string(path)?;
    let mut events: Vec<(f64, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(t), Some(n), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(path, i + 1, "expected two columns `time_s,packets`"));
        };
        let parsed = (t.parse::<f64>(), n.parse::<f64>());
        let (t, n) = match parsed {
            (Ok(t), Ok(n)) => (t, n),
            _ if i == 0 => continue,
            _ => return Err(parse_err(path, i + 1, format!("not numeric: {line:?}"))),
        };
        if !(n >= 0.0) || !t.is_finite() || !n.is_finite() {
            return Err(Error::Validation(format!(
                "{}:{}: event must have finite time and packets >= 0",
                path.display(),
                i + 1
            )));
        }
        events.push((t, n));
    }
    resample_events(&events, tau)
}

/// Bins `(time, packets)` events into per-slot counts.
pub fn resample_events(events: &[(f64, f64)], tau: f64) -> Result<ArrivalProcess> {
    if events.is_empty() {
        return Err(Error::Validation("event trace is empty".into()));
    }
    let t0 = events.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let t1 = events.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let slots = ((t1 - t0) / tau).floor() as usize + 1;
    let mut counts = vec![0.0; slots];
    for &(t, n) in events {
        let idx = (((t - t0) / tau).floor() as usize).min(slots - 1);
        counts[idx] += n;
    }
    ArrivalProcess::trace(counts, tau, true)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

/// MEC service-rate model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceKind {
    /// v_out = v̄out every slot; the scale factor stays at k̄.
    Constant,
    /// Draws k(n) ~ U[0.5k̄, 1.5k̄] per slot and sets v_out = v̄out·k(n)/k̄.
    /// The same k(n) scales the local computation rate.
    ScaledByK,
}

/// What a single slot's environment looks like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDraw {
    pub channel: ChannelState,
    pub arrivals: f64,
    pub remote_rate: f64,
    /// Scale factor k(n) (packets per cycle).
    pub scale_factor: f64,
}

/// Environment description shared by all runs of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub arrivals: ArrivalProcess,
    pub service: ServiceKind,
    /// CSI staleness Δt in slots used for decisions.
    pub csi_delay: usize,
}

impl EnvSpec {
    pub fn from_params(params: &SystemParams) -> Self {
        Self {
            arrivals: ArrivalProcess::poisson(params.arrival_rate),
            service: ServiceKind::Constant,
            csi_delay: 0,
        }
    }
}

/// Seeds for the independent streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSeeds {
    pub channel: u64,
    pub arrival: u64,
    pub service: u64,
}

impl EnvSeeds {
    pub fn uniform(seed: u64) -> Self {
        Self {
            channel: seed,
            arrival: seed,
            service: seed,
        }
    }
}

/// Single-MT environment instance. Single owner; one per run.
#[derive(Debug, Clone)]
pub struct Environment {
    params: SystemParams,
    spec: EnvSpec,
    channel: ChannelSampler,
    arrival_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    slot: usize,
}

impl Environment {
    pub fn new(params: &SystemParams, spec: &EnvSpec, seed: u64) -> Self {
        Self::with_seeds(params, spec, EnvSeeds::uniform(seed))
    }

    pub fn with_seeds(params: &SystemParams, spec: &EnvSpec, seeds: EnvSeeds) -> Self {
        Self {
            params: *params,
            spec: spec.clone(),
            channel: ChannelSampler::new(params.mean_gain, stream_rng(seeds.channel, StreamKind::Channel, 0, 0)),
            arrival_rng: stream_rng(seeds.arrival, StreamKind::Arrival, 0, 0),
            service_rng: stream_rng(seeds.service, StreamKind::Service, 0, 0),
            slot: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Draws the next slot.
    pub fn next_slot(&mut self) -> Result<SlotDraw> {
        let channel = self.channel.sample();
        let arrivals = self
            .spec
            .arrivals
            .sample(self.slot, self.params.tau, &mut self.arrival_rng)?;
        let (remote_rate, scale_factor) = sample_service(&self.params, self.spec.service, &mut self.service_rng);
        self.slot += 1;
        Ok(SlotDraw {
            channel,
            arrivals,
            remote_rate,
            scale_factor,
        })
    }
}

pub(crate) fn sample_service<R: Rng + ?Sized>(params: &SystemParams, kind: ServiceKind, rng: &mut R) -> (f64, f64) {
    match kind {
        ServiceKind::Constant => (params.remote_rate, params.compute_scale),
        ServiceKind::ScaledByK => {
            let u: f64 = rng.random_range(0.5..1.5);
            (params.remote_rate * u, params.compute_scale * u)
        }
    }
}

/// Result of a stale-CSI lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaleCsi {
    pub channel: ChannelState,
    /// Set when the history was too short and the current state was used.
    pub fell_back: bool,
}

/// Ring buffer of past channel states, newest last.
#[derive(Debug, Clone)]
pub struct ChannelHistory {
    buf: VecDeque<ChannelState>,
    capacity: usize,
}

impl ChannelHistory {
    pub fn new(max_delay: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(max_delay + 1),
            capacity: max_delay + 1,
        }
    }

    pub fn push(&mut self, h: ChannelState) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(h);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// The channel `delay` slots before the newest entry (`true_h`).
    pub fn stale(&self, true_h: ChannelState, delay: usize) -> StaleCsi {
        if delay == 0 {
            return StaleCsi {
                channel: true_h,
                fell_back: false,
            };
        }
        match self.buf.len().checked_sub(delay + 1) {
            Some(idx) => StaleCsi {
                channel: self.buf[idx],
                fell_back: false,
            },
            None => StaleCsi {
                channel: true_h,
                fell_back: true,
            },
        }
    }
}

/// Channel state observed with a delay of `delay` slots.
///
/// `history` holds past states oldest first, with the current state last.
/// Falls back to `true_h` when fewer than `delay + 1` states are known.
pub fn stale_channel(true_h: ChannelState, delay: usize, history: &[ChannelState]) -> StaleCsi {
    if delay == 0 {
        return StaleCsi {
            channel: true_h,
            fell_back: false,
        };
    }
    if history.len() > delay {
        StaleCsi {
            channel: history[history.len() - 1 - delay],
            fell_back: false,
        }
    } else {
        StaleCsi {
            channel: true_h,
            fell_back: true,
        }
    }
}
