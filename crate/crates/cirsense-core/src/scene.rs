//! Scene descriptions: what to synthesize, parsed from a structured config
//! file (TOML with nested sections for paths, trajectories, distortion policy
//! and noise).
//!
//! Delays may be authored either in tap units (`*_taps`, grid steps of
//! `c·T_s` = 1.875 m at 160 MHz) or in metres of excess path length (`*_m`).

use num_complex::Complex64;
use serde::Deserialize;

use crate::channel::{DistortionPolicy, DynamicPath, GainDecay, MotionTrajectory};
use crate::config::{SystemConfig, TapSet};
use crate::error::{Error, Result};

/// Noise level: either an explicit per-component standard deviation or a
/// sensing SNR target in dB, referenced to the first dynamic path's gain
/// (the on-grid aligned-tap SSNR `|α|²/E|z|²`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Std(f64),
    SsnrDb(f64),
}

impl NoiseLevel {
    pub fn ssnr_db(&self) -> Option<f64> {
        match *self {
            Self::SsnrDb(v) => Some(v),
            Self::Std(_) => None,
        }
    }
}

/// Everything needed to synthesize one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub cfg: SystemConfig,
    /// Transceiver separation (LoS path length), metres.
    pub d0_m: f64,
    pub los_gain: Complex64,
    /// Extra static clutter paths: (gain, excess delay over LoS in seconds).
    pub static_paths: Vec<(Complex64, f64)>,
    pub dynamic_paths: Vec<DynamicPath>,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub noise: NoiseLevel,
    pub distortion: DistortionPolicy,
    pub seed: u64,
    /// Reject dynamic paths whose nominal delays sit closer than one tap.
    pub separable: bool,
}

impl SceneSpec {
    /// Minimal noiseless, distortion-free scene on the default config;
    /// callers add paths and tweak fields.
    pub fn basic(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cfg: SystemConfig::default_160mhz(),
            d0_m: 0.6,
            los_gain: Complex64::ONE,
            static_paths: Vec::new(),
            dynamic_paths: Vec::new(),
            sample_rate_hz: 200.0,
            duration_s: 30.0,
            noise: NoiseLevel::Std(0.0),
            distortion: DistortionPolicy::identity(),
            seed: 1,
            separable: false,
        }
    }

    /// Per-component noise standard deviation after resolving an SSNR target
    /// against the reference gain (first dynamic path, else LoS).
    pub fn resolved_noise_std(&self) -> f64 {
        match self.noise {
            NoiseLevel::Std(v) => v,
            NoiseLevel::SsnrDb(db) => {
                let reference = self
                    .dynamic_paths
                    .first()
                    .map(|d| d.gain.norm())
                    .unwrap_or_else(|| self.los_gain.norm());
                // SSNR = |α|² / (2σ²)
                reference * 10f64.powf(-db / 20.0) / 2f64.sqrt()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if !(50.0..=1000.0).contains(&self.sample_rate_hz) {
            return Err(Error::Scene(format!(
                "sample rate {} Hz outside [50, 1000]",
                self.sample_rate_hz
            )));
        }
        if self.duration_s <= 0.0 {
            return Err(Error::Scene("duration must be positive".into()));
        }
        if self.d0_m <= 0.0 {
            return Err(Error::Scene("transceiver separation d0 must be positive".into()));
        }
        for (_, rel) in &self.static_paths {
            if *rel < 0.0 {
                return Err(Error::Scene("static path excess delay must be >= 0".into()));
            }
        }
        for dp in &self.dynamic_paths {
            dp.trajectory.validate()?;
        }
        self.distortion.validate()?;
        if let NoiseLevel::Std(v) = self.noise {
            if v < 0.0 {
                return Err(Error::Scene("noise_std must be >= 0".into()));
            }
        }
        if self.separable {
            let c = self.cfg.light_speed_mps;
            let taps: Vec<f64> = self
                .dynamic_paths
                .iter()
                .map(|d| self.cfg.delay_s_to_taps(d.trajectory.base_relative_delay_s(c)))
                .collect();
            for i in 0..taps.len() {
                for j in i + 1..taps.len() {
                    if (taps[i] - taps[j]).abs() < 1.0 {
                        return Err(Error::Scene(format!(
                            "dynamic paths {i} and {j} closer than one tap ({:.3} vs {:.3}) in separable mode",
                            taps[i], taps[j]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parse a scene description file.
    pub fn from_toml_str(text: &str, fallback_name: &str) -> Result<Self> {
        let file: SceneFile =
            toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))?;
        file.into_spec(fallback_name)
    }
}

// ── File schema ────────────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    system: Option<SystemSection>,
    scene: SceneSection,
    #[serde(default)]
    static_path: Vec<StaticPathSection>,
    #[serde(default)]
    dynamic_path: Vec<DynamicPathSection>,
    distortion: Option<DistortionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    carrier_freq_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    dft_size: Option<usize>,
    tap_min: Option<i32>,
    tap_max: Option<i32>,
    subcarriers: Option<Vec<i32>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSection {
    name: Option<String>,
    d0_m: Option<f64>,
    sample_rate_hz: f64,
    duration_s: f64,
    seed: Option<u64>,
    los_gain_mag: Option<f64>,
    los_gain_phase_rad: Option<f64>,
    ssnr_db: Option<f64>,
    noise_std: Option<f64>,
    separable: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StaticPathSection {
    gain_mag: f64,
    gain_phase_rad: Option<f64>,
    rel_delay_taps: Option<f64>,
    rel_delay_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicPathSection {
    kind: String,
    base_rel_delay_taps: Option<f64>,
    base_rel_delay_m: Option<f64>,
    amplitude_m: Option<f64>,
    rate_hz: Option<f64>,
    phase_rad: Option<f64>,
    geometry_factor: Option<f64>,
    sweep_start_m: Option<f64>,
    sweep_end_m: Option<f64>,
    sweep_duration_s: Option<f64>,
    gain_mag: f64,
    gain_phase_rad: Option<f64>,
    gain_decay: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistortionSection {
    enabled: Option<bool>,
    mag_gain_range: Option<[f64; 2]>,
    phase_range_rad: Option<[f64; 2]>,
    delay_range_taps: Option<[f64; 2]>,
}

impl SceneFile {
    fn into_spec(self, fallback_name: &str) -> Result<SceneSpec> {
        let cfg = match self.system {
            None => SystemConfig::default_160mhz(),
            Some(sys) => {
                let base = SystemConfig::default_160mhz();
                let dft = sys.dft_size.unwrap_or(base.dft_size);
                SystemConfig::new(
                    sys.carrier_freq_hz.unwrap_or(base.carrier_freq_hz),
                    sys.bandwidth_hz.unwrap_or(base.bandwidth_hz),
                    dft,
                    sys.subcarriers
                        .unwrap_or_else(|| base.active_subcarriers.clone()),
                    TapSet {
                        min: sys.tap_min.unwrap_or(base.tap_set.min),
                        max: sys.tap_max.unwrap_or(base.tap_set.max),
                    },
                )?
            }
        };
        let sc = &self.scene;
        let noise = match (sc.noise_std, sc.ssnr_db) {
            (Some(_), Some(_)) => {
                return Err(Error::Scene(
                    "scene sets both noise_std and ssnr_db; pick one".into(),
                ))
            }
            (Some(std), None) => NoiseLevel::Std(std),
            (None, Some(db)) => NoiseLevel::SsnrDb(db),
            (None, None) => NoiseLevel::Std(0.0),
        };
        let c = cfg.light_speed_mps;
        let ts = cfg.sample_interval_s;
        let delay_of = |taps: Option<f64>, metres: Option<f64>, what: &str| -> Result<f64> {
            match (taps, metres) {
                (Some(t), None) => Ok(t * ts),
                (None, Some(m)) => Ok(m / c),
                (None, None) => Err(Error::Scene(format!("{what}: missing delay field"))),
                (Some(_), Some(_)) => Err(Error::Scene(format!(
                    "{what}: set either the _taps or the _m delay, not both"
                ))),
            }
        };

        let mut static_paths = Vec::with_capacity(self.static_path.len());
        for (i, s) in self.static_path.iter().enumerate() {
            let rel = delay_of(s.rel_delay_taps, s.rel_delay_m, &format!("static_path[{i}]"))?;
            static_paths.push((
                Complex64::from_polar(s.gain_mag, s.gain_phase_rad.unwrap_or(0.0)),
                rel,
            ));
        }

        let mut dynamic_paths = Vec::with_capacity(self.dynamic_path.len());
        for (i, d) in self.dynamic_path.iter().enumerate() {
            let what = format!("dynamic_path[{i}]");
            let trajectory = match d.kind.as_str() {
                "static" => MotionTrajectory::Static {
                    base_delay_s: delay_of(d.base_rel_delay_taps, d.base_rel_delay_m, &what)?,
                },
                "respiration" => MotionTrajectory::Respiration {
                    base_delay_s: delay_of(d.base_rel_delay_taps, d.base_rel_delay_m, &what)?,
                    amplitude_m: d
                        .amplitude_m
                        .ok_or_else(|| Error::Scene(format!("{what}: amplitude_m required")))?,
                    rate_hz: d
                        .rate_hz
                        .ok_or_else(|| Error::Scene(format!("{what}: rate_hz required")))?,
                    phase_rad: d.phase_rad.unwrap_or(0.0),
                    geometry_factor: d.geometry_factor.unwrap_or(2.0),
                },
                "linear_sweep" => MotionTrajectory::LinearSweep {
                    start_m: d
                        .sweep_start_m
                        .ok_or_else(|| Error::Scene(format!("{what}: sweep_start_m required")))?,
                    end_m: d
                        .sweep_end_m
                        .ok_or_else(|| Error::Scene(format!("{what}: sweep_end_m required")))?,
                    duration_s: d.sweep_duration_s.unwrap_or(sc.duration_s),
                },
                other => {
                    return Err(Error::Scene(format!(
                        "{what}: unknown kind {other:?} (static | respiration | linear_sweep)"
                    )))
                }
            };
            let decay = match d.gain_decay.as_deref() {
                None | Some("constant") => GainDecay::Constant,
                Some("inverse_distance") => GainDecay::InverseDistance,
                Some(other) => {
                    return Err(Error::Scene(format!(
                        "{what}: unknown gain_decay {other:?}"
                    )))
                }
            };
            dynamic_paths.push(DynamicPath {
                trajectory,
                gain: Complex64::from_polar(d.gain_mag, d.gain_phase_rad.unwrap_or(0.0)),
                decay,
            });
        }

        let distortion = match self.distortion {
            None => DistortionPolicy::default_random(),
            Some(ds) => {
                if ds.enabled == Some(false) {
                    DistortionPolicy::identity()
                } else {
                    let base = DistortionPolicy::default_random();
                    DistortionPolicy {
                        mag_gain_range: ds
                            .mag_gain_range
                            .map_or(base.mag_gain_range, |r| (r[0], r[1])),
                        phase_range_rad: ds
                            .phase_range_rad
                            .map_or(base.phase_range_rad, |r| (r[0], r[1])),
                        delay_range_taps: ds
                            .delay_range_taps
                            .map_or(base.delay_range_taps, |r| (r[0], r[1])),
                    }
                }
            }
        };

        let spec = SceneSpec {
            name: sc
                .name
                .clone()
                .unwrap_or_else(|| fallback_name.to_string()),
            cfg,
            d0_m: sc.d0_m.unwrap_or(0.6),
            los_gain: Complex64::from_polar(
                sc.los_gain_mag.unwrap_or(1.0),
                sc.los_gain_phase_rad.unwrap_or(0.0),
            ),
            static_paths,
            dynamic_paths,
            sample_rate_hz: sc.sample_rate_hz,
            duration_s: sc.duration_s,
            noise,
            distortion,
            seed: sc.seed.unwrap_or(0),
            separable: sc.separable.unwrap_or(false),
        };
        spec.validate()?;
        Ok(spec)
    }
}
