//! OFDM system constants: carrier, bandwidth, DFT size, subcarrier and tap
//! index sets.
//!
//! All delay-domain quantities in this crate are expressed on the tap grid
//! spaced by the sample interval `T_s = 1/B`; one tap corresponds to
//! `c * T_s` metres of path length (1.875 m at 160 MHz).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed used for delay/distance conversion, m/s.
///
/// 3.0e8 rather than the exact vacuum value so that one 160 MHz tap is
/// exactly 1.875 m of path length; configurable per [`SystemConfig`].
pub const LIGHT_SPEED_MPS: f64 = 3.0e8;

/// Contiguous signed tap index range `L` of the recovery grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSet {
    pub min: i32,
    pub max: i32,
}

impl TapSet {
    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.max < self.min
    }

    pub fn contains(&self, tap: i32) -> bool {
        tap >= self.min && tap <= self.max
    }

    /// Iterator over the signed tap indices in order.
    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.min..=self.max
    }
}

/// OFDM/system constants shared by the simulator and the recovery pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Carrier frequency `f_c`, Hz.
    pub carrier_freq_hz: f64,
    /// Channel bandwidth `B`, Hz.
    pub bandwidth_hz: f64,
    /// DFT size `N`.
    pub dft_size: usize,
    /// Subcarrier spacing `Δf = B/N`, Hz.
    pub subcarrier_spacing_hz: f64,
    /// Sample interval `T_s = 1/B`, seconds; tap grid spacing.
    pub sample_interval_s: f64,
    /// Ordered signed subcarrier indices `K` carrying measurements.
    pub active_subcarriers: Vec<i32>,
    /// Contiguous signed tap index range `L` of the recovery grid.
    pub tap_set: TapSet,
    /// Propagation speed, m/s.
    pub light_speed_mps: f64,
}

impl SystemConfig {
    /// Build a config, deriving `T_s` and `Δf` from `B` and `N`, and
    /// validating the index-set invariants.
    pub fn new(
        carrier_freq_hz: f64,
        bandwidth_hz: f64,
        dft_size: usize,
        active_subcarriers: Vec<i32>,
        tap_set: TapSet,
    ) -> Result<Self> {
        let cfg = Self {
            carrier_freq_hz,
            bandwidth_hz,
            dft_size,
            subcarrier_spacing_hz: bandwidth_hz / dft_size as f64,
            sample_interval_s: 1.0 / bandwidth_hz,
            active_subcarriers,
            tap_set,
            light_speed_mps: LIGHT_SPEED_MPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 802.11ax-style 160 MHz configuration used throughout:
    /// `f_c` = 5.25 GHz, `B` = 160 MHz, `N` = 512, `L` = {-20, ..., 50},
    /// and a 496-subcarrier active set `{-250..-3} ∪ {3..250}` with DC nulls.
    pub fn default_160mhz() -> Self {
        Self::new(
            5.25e9,
            160e6,
            512,
            default_active_subcarriers_160mhz(),
            TapSet { min: -20, max: 50 },
        )
        .expect("builtin config is valid")
    }

    /// Full-measurement variant: every one of the `N` subcarriers active and
    /// the tap grid covering all of them. Recovery reduces to the unitary
    /// inverse DFT; mostly useful for exact-accounting tests.
    pub fn full_measurement(carrier_freq_hz: f64, bandwidth_hz: f64, dft_size: usize) -> Self {
        let n = dft_size as i32;
        Self::new(
            carrier_freq_hz,
            bandwidth_hz,
            dft_size,
            (-n / 2..n / 2).collect(),
            TapSet {
                min: 0,
                max: n - 1,
            },
        )
        .expect("full-measurement config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.carrier_freq_hz > 0.0) {
            return Err(Error::Config("carrier and bandwidth must be positive".into()));
        }
        if self.dft_size == 0 {
            return Err(Error::Config("dft_size must be positive".into()));
        }
        let ts_b = self.sample_interval_s * self.bandwidth_hz;
        if (ts_b - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "sample_interval_s * bandwidth_hz = {ts_b}, must be 1"
            )));
        }
        let dfn = self.subcarrier_spacing_hz * self.dft_size as f64 * self.sample_interval_s;
        if (dfn - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "subcarrier_spacing * dft_size * sample_interval = {dfn}, must be 1"
            )));
        }
        if self.active_subcarriers.is_empty() {
            return Err(Error::Config("active subcarrier set is empty".into()));
        }
        let half = self.dft_size as i32 / 2;
        if let Some(&k) = self
            .active_subcarriers
            .iter()
            .find(|&&k| k < -half || k >= half)
        {
            return Err(Error::Config(format!(
                "subcarrier {k} outside [-N/2, N/2-1] = [{}, {}]",
                -half,
                half - 1
            )));
        }
        let mut sorted = self.active_subcarriers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.active_subcarriers.len() {
            return Err(Error::Config("duplicate active subcarriers".into()));
        }
        if self.tap_set.is_empty() {
            return Err(Error::Config("tap set is empty".into()));
        }
        if self.tap_set.len() > self.active_subcarriers.len() {
            return Err(Error::Config(format!(
                "|L| = {} exceeds |K| = {}",
                self.tap_set.len(),
                self.active_subcarriers.len()
            )));
        }
        Ok(())
    }

    /// Number of active subcarriers `|K|`.
    pub fn n_subcarriers(&self) -> usize {
        self.active_subcarriers.len()
    }

    /// Number of taps `|L|`.
    pub fn n_taps(&self) -> usize {
        self.tap_set.len()
    }

    /// Path length of one tap, metres (`c * T_s`).
    pub fn tap_length_m(&self) -> f64 {
        self.light_speed_mps * self.sample_interval_s
    }

    /// Delay of `taps` grid steps, seconds.
    pub fn taps_to_delay_s(&self, taps: f64) -> f64 {
        taps * self.sample_interval_s
    }

    /// Delay expressed in tap units.
    pub fn delay_s_to_taps(&self, delay_s: f64) -> f64 {
        delay_s * self.bandwidth_hz
    }

    /// Largest delay (plus any common shift) representable on the tap grid.
    pub fn representable_delay_span_s(&self) -> (f64, f64) {
        (
            self.tap_set.min as f64 * self.sample_interval_s,
            self.tap_set.max as f64 * self.sample_interval_s,
        )
    }
}

/// The default 160 MHz active set: `{-250..-3} ∪ {3..250}` (496 subcarriers,
/// DC and band edges nulled). The exact occupancy of the data+pilot layout is
/// approximated; it is configurable wherever a `SystemConfig` is accepted.
pub fn default_active_subcarriers_160mhz() -> Vec<i32> {
    (-250..=-3).chain(3..=250).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_invariants() {
        let cfg = SystemConfig::default_160mhz();
        assert_eq!(cfg.n_subcarriers(), 496);
        assert_eq!(cfg.n_taps(), 71);
        assert!((cfg.sample_interval_s * cfg.bandwidth_hz - 1.0).abs() < 1e-15);
        assert!(
            (cfg.subcarrier_spacing_hz * cfg.dft_size as f64 * cfg.sample_interval_s - 1.0).abs()
                < 1e-12
        );
        assert!((cfg.sample_interval_s - 6.25e-9).abs() < 1e-20);
        assert!((cfg.tap_length_m() - 1.875).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_tap_set() {
        let err = SystemConfig::new(
            5.25e9,
            160e6,
            512,
            (0..10).collect(),
            TapSet { min: 0, max: 10 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_out_of_range_subcarrier() {
        let err = SystemConfig::new(
            5.25e9,
            160e6,
            512,
            vec![0, 256],
            TapSet { min: 0, max: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_measurement_shape() {
        let cfg = SystemConfig::full_measurement(5.25e9, 160e6, 512);
        assert_eq!(cfg.n_subcarriers(), 512);
        assert_eq!(cfg.n_taps(), 512);
    }
}
