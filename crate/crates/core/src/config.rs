//! Experiment configuration files.
//!
//! The format is line oriented: `key = value` pairs, optional `[section]`
//! headers, `#` comments. A key inside a section must belong to it; outside
//! any section every key is accepted. Any sweepable key `k` also has a
//! `k_sweep = v1, v2, ...` form, and at most one sweep may be given.
//!
//! ```text
//! [system]
//! preset = constrained
//! beta_sweep = 0.1, 1, 10
//!
//! [experiment]
//! policies = proposed, qwwf, tso
//! runs = 100
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::baselines::BaselineKind;
use crate::env::{load_trace, ArrivalProcess, ServiceKind};
use crate::error::{Error, Result};
use crate::mdp::{action_grid, ArrivalModel, MdpConfig};
use crate::multimec::{DelayAttribution, DEFAULT_SMOOTHING};
use crate::policy::{ClosedFormConfig, EstimatorInput};
use crate::simulator::TransferMode;
use crate::sysmodel::{RadioConfig, SystemParams};

/// Operating-point presets for the two scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// λ̄ = 5, v̄out = 13: the server outruns the offloaded load.
    #[default]
    Sufficient,
    /// λ̄ = 8, v̄out = 7.5: the server alone cannot carry the load.
    Constrained,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Sufficient => "sufficient",
            Preset::Constrained => "constrained",
        }
    }

    pub fn apply(self, params: &mut SystemParams) {
        let (lambda, v_out) = match self {
            Preset::Sufficient => (5.0, 13.0),
            Preset::Constrained => (8.0, 7.5),
        };
        params.arrival_rate = lambda;
        params.remote_rate = v_out;
    }

    pub fn params(self) -> SystemParams {
        let mut p = SystemParams::default();
        self.apply(&mut p);
        p
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sufficient" => Ok(Preset::Sufficient),
            "constrained" => Ok(Preset::Constrained),
            _ => Err(format!("unknown preset {s:?} (expected sufficient or constrained)")),
        }
    }
}

/// A policy selectable from a config file or the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyName {
    Proposed,
    Baseline(BaselineKind),
}

impl PolicyName {
    pub fn name(self) -> &'static str {
        match self {
            PolicyName::Proposed => "proposed",
            PolicyName::Baseline(k) => k.name(),
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "proposed" {
            return Ok(PolicyName::Proposed);
        }
        s.parse::<BaselineKind>()
            .map(PolicyName::Baseline)
            .map_err(|_| format!("unknown policy {s:?}"))
    }
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    Beta,
    ArrivalRate,
    PowerBudget,
    Capacitance,
    RemoteRate,
    Mts,
    Servers,
    CsiDelay,
    EpsFloor,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 9] = [
        SweepAxis::Beta,
        SweepAxis::ArrivalRate,
        SweepAxis::PowerBudget,
        SweepAxis::Capacitance,
        SweepAxis::RemoteRate,
        SweepAxis::Mts,
        SweepAxis::Servers,
        SweepAxis::CsiDelay,
        SweepAxis::EpsFloor,
    ];

    /// Config key of the underlying scalar.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::ArrivalRate => "lambda",
            SweepAxis::PowerBudget => "power_budget",
            SweepAxis::Capacitance => "c",
            SweepAxis::RemoteRate => "v_out",
            SweepAxis::Mts => "mts",
            SweepAxis::Servers => "servers",
            SweepAxis::CsiDelay => "csi_delay",
            SweepAxis::EpsFloor => "eps0",
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.key() == key)
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepAxis::Mts | SweepAxis::Servers | SweepAxis::CsiDelay)
    }

    /// Checks one sweep value; returns a reason on failure.
    pub fn check(self, v: f64) -> std::result::Result<(), String> {
        if !v.is_finite() {
            return Err(format!("{v} is not finite"));
        }
        if self.is_integer() && v.fract() != 0.0 {
            return Err(format!("{v} is not an integer"));
        }
        let ok = match self {
            SweepAxis::Mts | SweepAxis::Servers => v >= 1.0,
            SweepAxis::CsiDelay | SweepAxis::RemoteRate => v >= 0.0,
            _ => v > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{v} is out of range"))
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Multi-MT settings; present when `mts` or `servers` is set or swept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetSettings {
    pub mts: usize,
    pub servers: usize,
    pub attribution: DelayAttribution,
    /// Control-plane delay added to each MT's delay (s).
    pub control_delay: f64,
    pub smoothing: f64,
}

impl Default for FleetSettings {
    fn default() -> Self {
        Self {
            mts: 1,
            servers: 1,
            attribution: DelayAttribution::AllServers,
            control_delay: 0.0,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub radio: RadioConfig,
    pub params: SystemParams,
    pub arrivals: ArrivalProcess,
    pub policies: Vec<PolicyName>,
    pub sweep: Option<Sweep>,
    pub runs: usize,
    pub horizon: usize,
    pub warmup: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub transfer: TransferMode,
    pub service: ServiceKind,
    pub csi_delay: usize,
    /// Average power target (W) for calibrated baselines and fair mode.
    pub power_budget: f64,
    /// Calibrate the proposed policy's β to `power_budget` as well.
    pub fair: bool,
    /// Dump the per-slot trace of the first seed of every (policy, point).
    pub trace: bool,
    pub policy: ClosedFormConfig,
    pub fleet: Option<FleetSettings>,
    pub oracle: MdpConfig,
    /// Hex SHA-256 of the config text (first 16 digits).
    pub hash: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_str("", Path::new(".")).expect("defaults are valid")
    }
}

impl ExperimentConfig {
    /// Sweep values, or a single placeholder point when nothing is swept.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    pub fn is_fleet(&self) -> bool {
        self.fleet.is_some()
    }
}

const SECTIONS: [&str; 4] = ["system", "experiment", "oracle", "fleet"];

const KEYS: &[(&str, &str)] = &[
    ("preset", "system"),
    ("tau", "system"),
    ("bandwidth_hz", "system"),
    ("bits_per_packet", "system"),
    ("distance_m", "system"),
    ("noise_dbm_per_hz", "system"),
    ("k_bar", "system"),
    ("c", "system"),
    ("v_out", "system"),
    ("lambda", "system"),
    ("alpha", "system"),
    ("beta", "system"),
    ("eps0", "system"),
    ("delta0", "system"),
    ("arrival_trace", "system"),
    ("policies", "experiment"),
    ("runs", "experiment"),
    ("horizon", "experiment"),
    ("warmup", "experiment"),
    ("seed", "experiment"),
    ("out", "experiment"),
    ("transfer", "experiment"),
    ("service", "experiment"),
    ("csi_delay", "experiment"),
    ("power_budget", "experiment"),
    ("fair", "experiment"),
    ("trace", "experiment"),
    ("window", "experiment"),
    ("estimator", "experiment"),
    ("p_max", "experiment"),
    ("q_max", "oracle"),
    ("queue_step", "oracle"),
    ("channel_levels", "oracle"),
    ("actions", "oracle"),
    ("action_p_max", "oracle"),
    ("oracle_arrivals", "oracle"),
    ("mts", "fleet"),
    ("servers", "fleet"),
    ("attribution", "fleet"),
    ("control_delay", "fleet"),
    ("smoothing", "fleet"),
];

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

fn cfg_err(key: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads and validates a config file; relative paths inside it resolve
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_str(&text, base)
}

/// Parses config text. `base` anchors relative paths.
pub fn parse_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let entries = tokenize(text)?;
    build(&entries, base, text)
}

fn tokenize(text: &str) -> Result<HashMap<String, Entry>> {
    let mut entries: HashMap<String, Entry> = HashMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(content, line, "malformed section header"))?
                .trim();
            if !SECTIONS.contains(&name) && name != "sweep" {
                return Err(cfg_err(name, line, "unknown section"));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(cfg_err(content, line, "expected `key = value`"));
        };
        let key = k.trim();
        let value = v.trim();
        let (base_key, is_sweep) = match key.strip_suffix("_sweep") {
            Some(b) => (b, true),
            None => (key, false),
        };
        let Some(home) = section_of(base_key) else {
            return Err(cfg_err(key, line, "unknown key"));
        };
        if is_sweep && SweepAxis::from_key(base_key).is_none() {
            return Err(cfg_err(key, line, "this key cannot be swept"));
        }
        if let Some(s) = &section {
            let allowed = s == home || (is_sweep && s == "sweep");
            if !allowed {
                return Err(cfg_err(
                    key,
                    line,
                    format!("key belongs in section [{home}], not [{s}]"),
                ));
            }
        }
        if value.is_empty() {
            return Err(cfg_err(key, line, "missing value"));
        }
        if let Some(prev) = entries.get(key) {
            return Err(cfg_err(
                key,
                line,
                format!("duplicate key (first set on line {})", prev.line),
            ));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(entries)
}

struct Reader<'a> {
    entries: &'a HashMap<String, Entry>,
}

impl Reader<'_> {
    fn get<T, F>(&self, key: &str, parse: F) -> Result<Option<T>>
    where
        F: Fn(&str) -> std::result::Result<T, String>,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).map_err(|m| cfg_err(key, e.line, m)),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn real(&self, key: &str, check: Range) -> Result<Option<f64>> {
        self.get(key, |s| parse_real(s, check))
    }

    fn count(&self, key: &str, min: usize) -> Result<Option<usize>> {
        self.get(key, |s| {
            let v: usize = s
                .parse()
                .map_err(|_| format!("expected a nonnegative integer, got {s:?}"))?;
            if v < min {
                return Err(format!("must be at least {min}, got {v}"));
            }
            Ok(v)
        })
    }

    fn parsed<T: FromStr<Err = String>>(&self, key: &str) -> Result<Option<T>> {
        self.get(key, |s| s.parse::<T>())
    }
}

#[derive(Clone, Copy)]
enum Range {
    Positive,
    NonNegative,
    Finite,
}

fn parse_real(s: &str, check: Range) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got {s:?}"))?;
    let ok = match check {
        Range::Positive => v > 0.0 && v.is_finite(),
        Range::NonNegative => v >= 0.0 && v.is_finite(),
        Range::Finite => v.is_finite(),
    };
    if ok {
        Ok(v)
    } else {
        let what = match check {
            Range::Positive => "positive",
            Range::NonNegative => "nonnegative",
            Range::Finite => "finite",
        };
        Err(format!("must be {what}, got {v}"))
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_list<T, F>(s: &str, item: F) -> std::result::Result<Vec<T>, String>
where
    F: Fn(&str) -> std::result::Result<T, String>,
{
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(item)
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("list is empty".into());
    }
    Ok(items)
}

fn build(entries: &HashMap<String, Entry>, base: &Path, text: &str) -> Result<ExperimentConfig> {
    let r = Reader { entries };

    let defaults = RadioConfig::default();
    let radio = RadioConfig {
        bandwidth_hz: r
            .real("bandwidth_hz", Range::Positive)?
            .unwrap_or(defaults.bandwidth_hz),
        bits_per_packet: r
            .real("bits_per_packet", Range::Positive)?
            .unwrap_or(defaults.bits_per_packet),
        distance_m: r.real("distance_m", Range::Positive)?.unwrap_or(defaults.distance_m),
        noise_dbm_per_hz: r
            .real("noise_dbm_per_hz", Range::Finite)?
            .unwrap_or(defaults.noise_dbm_per_hz),
        ..defaults
    };
    let preset: Preset = r.parsed("preset")?.unwrap_or_default();
    let mut params = SystemParams::from_radio(&radio);
    preset.apply(&mut params);

    type Field = fn(&mut SystemParams) -> &mut f64;
    let scalars: [(&str, Range, Field); 9] = [
        ("tau", Range::Positive, |p| &mut p.tau),
        ("k_bar", Range::Positive, |p| &mut p.compute_scale),
        ("c", Range::Positive, |p| &mut p.capacitance),
        ("v_out", Range::NonNegative, |p| &mut p.remote_rate),
        ("lambda", Range::Positive, |p| &mut p.arrival_rate),
        ("alpha", Range::Positive, |p| &mut p.alpha),
        ("beta", Range::Positive, |p| &mut p.beta),
        ("eps0", Range::Positive, |p| &mut p.eps_floor),
        ("delta0", Range::Positive, |p| &mut p.delta_floor),
    ];
    for (key, range, field) in scalars {
        if let Some(v) = r.real(key, range)? {
            *field(&mut params) = v;
        }
    }

    let arrivals = match r.get("arrival_trace", |s| Ok(s.to_string()))? {
        None => ArrivalProcess::poisson(params.arrival_rate),
        Some(p) => {
            let line = r.line("arrival_trace");
            let trace =
                load_trace(&base.join(&p), params.tau).map_err(|e| cfg_err("arrival_trace", line, e.to_string()))?;
            if entries.contains_key("lambda") {
                trace
                    .rescaled_to(params.arrival_rate, params.tau)
                    .map_err(|e| cfg_err("arrival_trace", line, e.to_string()))?
            } else {
                let per_slot = trace.trace_mean_per_slot().unwrap_or(0.0);
                if !(per_slot > 0.0) {
                    return Err(cfg_err("arrival_trace", line, "trace has no arrivals"));
                }
                params.arrival_rate = per_slot / params.tau;
                trace
            }
        }
    };
    params
        .validate()
        .map_err(|e| cfg_err("system", 0, format!("inconsistent parameters: {e}")))?;

    let policies: Vec<PolicyName> = r
        .get("policies", |s| parse_list(s, |t| t.parse()))?
        .unwrap_or_else(|| vec![PolicyName::Proposed]);
    if let Some(dup) = policies.iter().enumerate().find(|(i, p)| policies[..*i].contains(p)) {
        return Err(cfg_err(
            "policies",
            r.line("policies"),
            format!("{} listed twice", dup.1),
        ));
    }

    let mut sweep: Option<(Sweep, usize)> = None;
    for axis in SweepAxis::ALL {
        let key = format!("{}_sweep", axis.key());
        let Some(values) = r.get(&key, |s| {
            parse_list(s, |t| {
                let v: f64 = t.parse().map_err(|_| format!("expected a number, got {t:?}"))?;
                axis.check(v).map(|_| v)
            })
        })?
        else {
            continue;
        };
        let line = r.line(&key);
        if let Some((prev, _)) = &sweep {
            return Err(cfg_err(
                &key,
                line,
                format!("only one sweep is allowed (already sweeping {})", prev.axis),
            ));
        }
        if entries.contains_key(axis.key()) {
            return Err(cfg_err(&key, line, format!("`{}` is both fixed and swept", axis.key())));
        }
        sweep = Some((Sweep { axis, values }, line));
    }

    let transfer = r
        .get("transfer", |s| match s {
            "capped" => Ok(TransferMode::Capped),
            "strict" => Ok(TransferMode::Strict),
            _ => Err(format!("expected capped or strict, got {s:?}")),
        })?
        .unwrap_or_default();
    let service = r
        .get("service", |s| match s {
            "constant" => Ok(ServiceKind::Constant),
            "scaled" => Ok(ServiceKind::ScaledByK),
            _ => Err(format!("expected constant or scaled, got {s:?}")),
        })?
        .unwrap_or(ServiceKind::Constant);
    let input = r
        .get("estimator", |s| match s {
            "realized" => Ok(EstimatorInput::Realized),
            "offered" => Ok(EstimatorInput::Offered),
            _ => Err(format!("expected realized or offered, got {s:?}")),
        })?
        .unwrap_or(EstimatorInput::Realized);
    let policy = ClosedFormConfig {
        window: r.count("window", 1)?.unwrap_or(ClosedFormConfig::default().window),
        input,
        p_max: r.real("p_max", Range::Positive)?,
    };

    let runs = r.count("runs", 1)?.unwrap_or(100);
    let horizon = r.count("horizon", 1)?.unwrap_or(500);
    let warmup = r.count("warmup", 0)?.unwrap_or(0);
    if warmup >= horizon {
        return Err(cfg_err(
            "warmup",
            r.line("warmup"),
            format!("must be below horizon ({horizon})"),
        ));
    }

    let fleet_keys = ["mts", "servers", "attribution", "control_delay", "smoothing"];
    let sweeps_fleet = matches!(&sweep, Some((s, _)) if matches!(s.axis, SweepAxis::Mts | SweepAxis::Servers));
    let fleet = if sweeps_fleet || fleet_keys.iter().any(|k| entries.contains_key(*k)) {
        let d = FleetSettings::default();
        Some(FleetSettings {
            mts: r.count("mts", 1)?.unwrap_or(d.mts),
            servers: r.count("servers", 1)?.unwrap_or(d.servers),
            attribution: r
                .get("attribution", |s| match s {
                    "all" => Ok(DelayAttribution::AllServers),
                    "proportional" => Ok(DelayAttribution::Proportional),
                    _ => Err(format!("expected all or proportional, got {s:?}")),
                })?
                .unwrap_or(d.attribution),
            control_delay: r.real("control_delay", Range::NonNegative)?.unwrap_or(d.control_delay),
            smoothing: r
                .get("smoothing", |s| {
                    let v = parse_real(s, Range::Positive)?;
                    if v > 1.0 {
                        return Err(format!("must lie in (0, 1], got {v}"));
                    }
                    Ok(v)
                })?
                .unwrap_or(d.smoothing),
        })
    } else {
        None
    };
    let fair = r.get("fair", parse_bool)?.unwrap_or(false);
    if fleet.is_some() {
        if let Some(p) = policies.iter().find(|p| **p != PolicyName::Proposed) {
            return Err(cfg_err(
                "policies",
                r.line("policies"),
                format!("{p} has no multi-MT form"),
            ));
        }
        if fair {
            return Err(cfg_err("fair", r.line("fair"), "fair calibration is single-MT only"));
        }
    }

    let desk = MdpConfig::desk_scale();
    let levels = r.count("actions", 2)?;
    let action_p_max = r.real("action_p_max", Range::Positive)?;
    let actions = match (levels, action_p_max) {
        (None, None) => desk.actions,
        (n, p) => action_grid(p.unwrap_or(1.0), n.unwrap_or(9)),
    };
    let oracle = MdpConfig {
        q_max: r.real("q_max", Range::Positive)?.unwrap_or(desk.q_max),
        queue_step: r.real("queue_step", Range::Positive)?.unwrap_or(desk.queue_step),
        channel_levels: r.count("channel_levels", 1)?.unwrap_or(desk.channel_levels),
        actions,
        arrivals: r
            .get("oracle_arrivals", |s| match s {
                "poisson" => Ok(ArrivalModel::Poisson),
                "deterministic" => Ok(ArrivalModel::Deterministic(f64::NAN)),
                _ => Err(format!("expected poisson or deterministic, got {s:?}")),
            })?
            .map(|m| match m {
                ArrivalModel::Deterministic(_) => ArrivalModel::Deterministic(params.arrival_rate * params.tau),
                other => other,
            })
            .unwrap_or(desk.arrivals),
    };
    if oracle.queue_step > oracle.q_max {
        return Err(cfg_err("queue_step", r.line("queue_step"), "must not exceed q_max"));
    }

    let digest = Sha256::digest(text.as_bytes());
    let hash: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();

    Ok(ExperimentConfig {
        preset,
        radio,
        params,
        arrivals,
        policies,
        sweep: sweep.map(|(s, _)| s),
        runs,
        horizon,
        warmup,
        base_seed: r
            .get("seed", |s| {
                s.parse::<u64>()
                    .map_err(|_| format!("expected a nonnegative integer, got {s:?}"))
            })?
            .unwrap_or(0),
        out_dir: r
            .get("out", |s| Ok(PathBuf::from(s)))?
            .map_or_else(|| base.join("results"), |p| base.join(p)),
        transfer,
        service,
        csi_delay: r.count("csi_delay", 0)?.unwrap_or(0),
        power_budget: r.real("power_budget", Range::Positive)?.unwrap_or(0.1),
        fair,
        trace: r.get("trace", parse_bool)?.unwrap_or(false),
        policy,
        fleet,
        oracle,
        hash,
    })
}
