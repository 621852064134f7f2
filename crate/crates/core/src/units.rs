//! Unit conversion at the configuration boundary.
//!
//! Internally every frequency is an angular frequency in rad/ns and every rate
//! is in ns⁻¹. Configs quote ω/2π in GHz (or MHz for couplers) and decoherence
//! rates in μs⁻¹.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// ω/2π in GHz → rad/ns.
pub fn ghz(value: f64) -> f64 {
    2.0 * PI * value
}

/// ω/2π in MHz → rad/ns.
pub fn mhz(value: f64) -> f64 {
    2.0 * PI * value * 1e-3
}

/// rad/ns → ω/2π in GHz.
pub fn to_ghz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// rad/ns → ω/2π in MHz.
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI) * 1e3
}

/// Rate in μs⁻¹ → ns⁻¹.
pub fn per_us(value: f64) -> f64 {
    value * 1e-3
}

/// Rate in ns⁻¹ → μs⁻¹.
pub fn to_per_us(rate: f64) -> f64 {
    rate * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyUnit {
    #[serde(rename = "GHz_over_2pi")]
    GhzOver2Pi,
    #[serde(rename = "MHz_over_2pi")]
    MhzOver2Pi,
    #[serde(rename = "rad_per_ns")]
    RadPerNs,
}

/// A frequency as written in a config file: a value plus its unit tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub value: f64,
    pub unit: FrequencyUnit,
}

impl Frequency {
    pub fn ghz(value: f64) -> Self {
        Self { value, unit: FrequencyUnit::GhzOver2Pi }
    }

    pub fn mhz(value: f64) -> Self {
        Self { value, unit: FrequencyUnit::MhzOver2Pi }
    }

    pub fn rad_per_ns(value: f64) -> Self {
        Self { value, unit: FrequencyUnit::RadPerNs }
    }

    /// Angular frequency in rad/ns.
    pub fn angular(&self) -> f64 {
        match self.unit {
            FrequencyUnit::GhzOver2Pi => ghz(self.value),
            FrequencyUnit::MhzOver2Pi => mhz(self.value),
            FrequencyUnit::RadPerNs => self.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnit {
    #[serde(rename = "per_us")]
    PerUs,
    #[serde(rename = "per_ns")]
    PerNs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub unit: RateUnit,
}

impl Rate {
    pub fn per_us(value: f64) -> Self {
        Self { value, unit: RateUnit::PerUs }
    }

    /// Rate in ns⁻¹.
    pub fn per_ns(&self) -> f64 {
        match self.unit {
            RateUnit::PerUs => per_us(self.value),
            RateUnit::PerNs => self.value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((to_ghz(ghz(5.0)) - 5.0).abs() < 1e-15);
        assert!((to_mhz(mhz(1.07)) - 1.07).abs() < 1e-12);
        assert!((per_us(0.05) - 5e-5).abs() < 1e-18);
        assert_eq!(Frequency::rad_per_ns(0.02).angular(), 0.02);
    }

    #[test]
    fn unit_tags_serialize() {
        let f = Frequency::ghz(5.0);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"value":5.0,"unit":"GHz_over_2pi"}"#);
        let r: Rate = serde_json::from_str(r#"{"value":0.05,"unit":"per_us"}"#).unwrap();
        assert!((r.per_ns() - 5e-5).abs() < 1e-18);
    }
}
