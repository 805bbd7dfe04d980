//! System parameters and the rate/power functions of the single-MT model.
//!
//! All queue quantities are in packets. The radio bandwidth enters as a
//! packet bandwidth `B = bandwidth_hz / bits_per_packet` (packets/s), so
//! `tx_rate = B·log2(1 + P·H/N0)` is a packet rate. The closed-form
//! water-filling expressions (`ep`, `evp`, and the optimal transmit power)
//! are the expectations of that rate under an exponentially distributed
//! channel gain with mean `L`; they are written in terms of the natural-log
//! bandwidth `B/ln 2` so that they are exact for the log2 rate.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::numeric::bisect_increasing;

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Switch point between the power series and the continued fraction in [`e1`].
pub const E1_CROSSOVER: f64 = 1.0;

/// Raw radio/geometry parameters from which `B`, `N0` and `L` are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub bits_per_packet: f64,
    pub distance_m: f64,
    pub noise_dbm_per_hz: f64,
    /// Path loss `intercept + slope·log10(d)` in dB.
    pub path_loss_intercept_db: f64,
    pub path_loss_slope_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            bits_per_packet: DEFAULT_BITS_PER_PACKET,
            distance_m: 100.0,
            noise_dbm_per_hz: -174.0,
            path_loss_intercept_db: 15.3,
            path_loss_slope_db: 37.6,
        }
    }
}

/// Packet size of the default configuration (10 Mbit).
pub const DEFAULT_BITS_PER_PACKET: f64 = 1e7;

impl RadioConfig {
    pub fn packet_bandwidth(&self) -> f64 {
        self.bandwidth_hz / self.bits_per_packet
    }

    /// Integrated thermal noise over the band, in watts.
    pub fn noise_power(&self) -> f64 {
        10f64.powf((self.noise_dbm_per_hz + 10.0 * self.bandwidth_hz.log10()) / 10.0 - 3.0)
    }

    /// Mean linear channel gain at the configured distance.
    pub fn mean_gain(&self) -> f64 {
        let loss_db = self.path_loss_intercept_db + self.path_loss_slope_db * self.distance_m.log10();
        10f64.powf(-loss_db / 10.0)
    }
}

/// Physical and economic constants of the single-MT system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Slot duration τ (s).
    pub tau: f64,
    /// Packet bandwidth B (packets/s).
    pub packet_bandwidth: f64,
    /// Noise power N0 (W).
    pub noise_power: f64,
    /// Mean channel gain L.
    pub mean_gain: f64,
    /// Mean scale factor k̄ (packets per CPU cycle).
    pub compute_scale: f64,
    /// Effective switched capacitance c.
    pub capacitance: f64,
    /// Mean MEC service rate v̄out (packets/s).
    pub remote_rate: f64,
    /// Mean arrival rate λ̄ (packets/s).
    pub arrival_rate: f64,
    /// Delay weight α.
    pub alpha: f64,
    /// Power weight β.
    pub beta: f64,
    /// Floor ε₀ on the local rate difference.
    pub eps_floor: f64,
    /// Floor δ₀ on the remote rate difference.
    pub delta_floor: f64,
    /// Share ρ̂ of slots in which the uplink is granted, weighted by power.
    /// Scales EP; 1 for a dedicated link.
    pub power_share: f64,
    /// Rate-weighted access share ρ̃. Scales EVP; 1 for a dedicated link.
    pub rate_share: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::from_radio(&RadioConfig::default())
    }
}

impl SystemParams {
    /// Default economic/compute constants on top of the given radio setup.
    pub fn from_radio(radio: &RadioConfig) -> Self {
        Self {
            tau: 0.1,
            packet_bandwidth: radio.packet_bandwidth(),
            noise_power: radio.noise_power(),
            mean_gain: radio.mean_gain(),
            compute_scale: 1e-7,
            capacitance: 3.5e-12,
            remote_rate: 13.0,
            arrival_rate: 5.0,
            alpha: 1.0,
            beta: 1000.0,
            eps_floor: 1e-3,
            delta_floor: 1e-3,
            power_share: 1.0,
            rate_share: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("packet_bandwidth", self.packet_bandwidth),
            ("noise_power", self.noise_power),
            ("mean_gain", self.mean_gain),
            ("compute_scale", self.compute_scale),
            ("capacitance", self.capacitance),
            ("arrival_rate", self.arrival_rate),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eps_floor", self.eps_floor),
            ("delta_floor", self.delta_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.remote_rate.is_finite() && self.remote_rate >= 0.0) {
            return Err(Error::param(
                "remote_rate",
                format!("must be finite and >= 0, got {}", self.remote_rate),
            ));
        }
        for (name, v) in [("power_share", self.power_share), ("rate_share", self.rate_share)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Natural-log bandwidth `B / ln 2` used by the closed forms.
    #[inline]
    pub fn rate_scale(&self) -> f64 {
        self.packet_bandwidth / LN_2
    }

    /// κ = k̄²/(2cβ): local service rate per unit of V_l at the optimal P_l.
    #[inline]
    pub fn local_gain(&self) -> f64 {
        self.compute_scale * self.compute_scale / (2.0 * self.capacitance * self.beta)
    }

    /// Local computation rate for power `p_l` and scale factor `k`.
    pub fn local_rate(&self, p_l: f64, k: f64) -> Result<f64> {
        if !(p_l >= 0.0) {
            return Err(Error::domain(format!("negative local power {p_l}")));
        }
        Ok(local_rate_unchecked(p_l, k, self.capacitance))
    }

    /// Local power required for rate `v` at the mean scale factor.
    pub fn local_power_for_rate(&self, v: f64) -> f64 {
        let s = v.max(0.0) / self.compute_scale;
        self.capacitance * s * s
    }

    /// Shannon transmission rate in packets/s.
    pub fn tx_rate(&self, p_t: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::domain(format!("channel gain must be > 0, got {h}")));
        }
        if !(p_t >= 0.0) {
            return Err(Error::domain(format!("negative transmit power {p_t}")));
        }
        Ok(self.tx_rate_unchecked(p_t, h))
    }

    #[inline]
    pub(crate) fn tx_rate_unchecked(&self, p_t: f64, h: f64) -> f64 {
        self.packet_bandwidth * (p_t * h / self.noise_power).ln_1p() / LN_2
    }

    /// Transmit power needed to sustain rate `v` over gain `h`.
    pub fn tx_power_for_rate(&self, v: f64, h: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        self.noise_power / h * (v / self.packet_bandwidth * LN_2).exp_m1()
    }

    /// Argument `βN0/(x·B'·L)` of E1 in EP/EVP.
    #[inline]
    fn water_arg(&self, x: f64) -> f64 {
        self.beta * self.noise_power / (x * self.rate_scale() * self.mean_gain)
    }

    /// Expected optimal transmit power EP(x) at water-level gradient `x`.
    pub fn ep(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("EP argument must be >= 0, got {x}")));
        }
        Ok(self.ep_unchecked(x))
    }

    pub(crate) fn ep_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let z = self.water_arg(x);
        if !z.is_finite() {
            return 0.0;
        }
        let floor = self.noise_power / self.mean_gain;
        // B'x/β = floor/z, so EP = floor·(e^{-z}/z − E1(z)).
        let v = if z > E1_CROSSOVER {
            (-z).exp() * (1.0 / z - e1_scaled_cf(z))
        } else {
            (-z).exp() / z - e1_series(z)
        };
        (self.power_share * floor * v).max(0.0)
    }

    /// Expected optimal transmission rate EVP(x) at water-level gradient `x`.
    pub fn evp(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("EVP argument must be >= 0, got {x}")));
        }
        Ok(self.evp_unchecked(x))
    }

    pub(crate) fn evp_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let z = self.water_arg(x);
        if !z.is_finite() {
            return 0.0;
        }
        self.rate_share * self.rate_scale() * e1_unchecked(z)
    }

    /// Inverse of EVP: the gradient `x` with `EVP(x) = rate`.
    pub fn evp_inverse(&self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return Err(Error::domain(format!("EVP target must be >= 0, got {rate}")));
        }
        if rate == 0.0 {
            return Ok(0.0);
        }
        if self.rate_share == 0.0 {
            return Err(Error::InfeasibleLoad(format!(
                "no uplink access: expected rate {rate} cannot be reached"
            )));
        }
        // E1(e^u) is decreasing in u; solve −E1(e^u) = −rate/(ρ̃B').
        let target = rate / (self.rate_share * self.rate_scale());
        if target > e1_unchecked((-745.0f64).exp()) {
            return Err(Error::InfeasibleLoad(format!(
                "expected rate {rate} exceeds what any water level reaches"
            )));
        }
        let u = bisect_increasing(|u| -e1_unchecked(u.exp()), -target, -745.0, 6.6).or_else(|_| {
            // Extremely small targets fall past e^{6.6}; widen once.
            bisect_increasing(|u| -e1_unchecked(u.exp()), -target, -745.0, 7.0)
        })?;
        let z = u.exp();
        Ok(self.beta * self.noise_power / (z * self.rate_scale() * self.mean_gain))
    }
}

#[inline]
pub(crate) fn local_rate_unchecked(p_l: f64, k: f64, c: f64) -> f64 {
    k / c.sqrt() * p_l.sqrt()
}

/// Exponential integral E1(z) = ∫_z^∞ e^{-t}/t dt for z > 0.
///
/// Power series below [`E1_CROSSOVER`], Lentz continued fraction above.
pub fn e1(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::domain(format!("E1 requires z > 0, got {z}")));
    }
    Ok(e1_unchecked(z))
}

#[inline]
pub(crate) fn e1_unchecked(z: f64) -> f64 {
    if z > E1_CROSSOVER {
        if z > 745.0 {
            return 0.0;
        }
        (-z).exp() * e1_scaled_cf(z)
    } else {
        e1_series(z)
    }
}

/// E1 from its convergent power series.
pub fn e1_series(z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..500 {
        let kf = k as f64;
        term *= -z / kf;
        let add = term / kf;
        sum += add;
        if add.abs() <= f64::EPSILON * sum.abs().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - z.ln() - sum
}

/// `e^z·E1(z)` from the continued fraction (modified Lentz).
pub fn e1_scaled_cf(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..20_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// E1 from the continued fraction alone.
pub fn e1_continued_fraction(z: f64) -> f64 {
    (-z).exp() * e1_scaled_cf(z)
}
