//! Synthetic multipath channel: ground-truth scenes, target motion, per-frame
//! hardware distortions and noisy CSI frames.
//!
//! The simulator is the verification oracle for the rest of the pipeline:
//! every frame is generated directly from the frequency-domain channel model
//! with a brickwall pulse (`F[k] = 1` on active subcarriers), so the
//! delay-domain pulse realized by the recovery grid is the kernel implied by
//! the LS operator itself and the two stay self-consistent.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::scene::SceneSpec;
use crate::series::{CsiFrame, CsiSeries};

/// One propagation path: complex gain and absolute delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub gain: Complex64,
    pub delay_s: f64,
}

/// Relative-delay trajectory of a moving scatterer. Delays are excess path
/// over the line-of-sight length, divided by the propagation speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionTrajectory {
    /// A dynamic-path slot that does not actually move.
    Static { base_delay_s: f64 },
    /// Sinusoidal chest displacement around a fixed excess delay. The
    /// geometry factor maps chest displacement to round-trip path change
    /// (2 for motion along the bistatic normal).
    Respiration {
        base_delay_s: f64,
        amplitude_m: f64,
        rate_hz: f64,
        phase_rad: f64,
        geometry_factor: f64,
    },
    /// Linear sweep of the excess path length, `start_m` to `end_m` over
    /// `duration_s`.
    LinearSweep {
        start_m: f64,
        end_m: f64,
        duration_s: f64,
    },
}

impl MotionTrajectory {
    /// Excess (relative-to-LoS) delay at time `t`, seconds.
    pub fn relative_delay_s(&self, t: f64, light_speed_mps: f64) -> f64 {
        match *self {
            Self::Static { base_delay_s } => base_delay_s,
            Self::Respiration {
                base_delay_s,
                amplitude_m,
                rate_hz,
                phase_rad,
                geometry_factor,
            } => {
                base_delay_s
                    + geometry_factor * amplitude_m * (TAU * rate_hz * t + phase_rad).sin()
                        / light_speed_mps
            }
            Self::LinearSweep {
                start_m,
                end_m,
                duration_s,
            } => {
                let u = (t / duration_s).clamp(0.0, 1.0);
                (start_m + (end_m - start_m) * u) / light_speed_mps
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Static { base_delay_s } => {
                if base_delay_s < 0.0 {
                    return Err(Error::Scene("static trajectory delay must be >= 0".into()));
                }
            }
            Self::Respiration {
                base_delay_s,
                amplitude_m,
                rate_hz,
                geometry_factor,
                ..
            } => {
                if base_delay_s < 0.0 {
                    return Err(Error::Scene("respiration base delay must be >= 0".into()));
                }
                if !(0.001..=0.02).contains(&amplitude_m) {
                    return Err(Error::Scene(format!(
                        "respiration amplitude {amplitude_m} m outside the physiological [0.001, 0.02] m"
                    )));
                }
                if !(0.1..=0.7).contains(&rate_hz) {
                    return Err(Error::Scene(format!(
                        "respiration rate {rate_hz} Hz outside [0.1, 0.7] Hz"
                    )));
                }
                if !(0.0..=2.0).contains(&geometry_factor) {
                    return Err(Error::Scene("geometry factor must be in [0, 2]".into()));
                }
            }
            Self::LinearSweep {
                start_m,
                end_m,
                duration_s,
            } => {
                if duration_s <= 0.0 {
                    return Err(Error::Scene("sweep duration must be positive".into()));
                }
                if start_m < 0.0 || end_m < 0.0 {
                    return Err(Error::Scene("sweep path lengths must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean excess delay, used for separability checks and as the nominal
    /// target delay in ground truth.
    pub fn base_relative_delay_s(&self, light_speed_mps: f64) -> f64 {
        match *self {
            Self::Static { base_delay_s } => base_delay_s,
            Self::Respiration { base_delay_s, .. } => base_delay_s,
            Self::LinearSweep { start_m, end_m, .. } => {
                0.5 * (start_m + end_m) / light_speed_mps
            }
        }
    }
}

/// Gain evolution of a dynamic path over its trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainDecay {
    /// Gain held constant (respiration-scale displacements).
    Constant,
    /// Gain scaled by `L(0) / L(t)` with `L` the full bistatic path length.
    InverseDistance,
}

/// A moving scatterer: trajectory plus complex base gain.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPath {
    pub trajectory: MotionTrajectory,
    pub gain: Complex64,
    pub decay: GainDecay,
}

impl DynamicPath {
    pub fn gain_at(&self, t: f64, d0_m: f64, light_speed_mps: f64) -> Complex64 {
        match self.decay {
            GainDecay::Constant => self.gain,
            GainDecay::InverseDistance => {
                let len0 = d0_m + light_speed_mps * self.trajectory.relative_delay_s(0.0, light_speed_mps);
                let len = d0_m + light_speed_mps * self.trajectory.relative_delay_s(t, light_speed_mps);
                self.gain * (len0 / len)
            }
        }
    }
}

/// Per-frame hardware distortion: magnitude gain, common phase offset and
/// common delay shift, identical across all paths within the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionState {
    pub mag_gain: f64,
    pub phase_offset_rad: f64,
    pub delay_shift_s: f64,
}

impl DistortionState {
    pub fn identity() -> Self {
        Self {
            mag_gain: 1.0,
            phase_offset_rad: 0.0,
            delay_shift_s: 0.0,
        }
    }
}

/// Randomized distortion model: one independent draw per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionPolicy {
    /// Magnitude gain range, drawn log-uniformly.
    pub mag_gain_range: (f64, f64),
    /// Phase offset range, radians, drawn uniformly.
    pub phase_range_rad: (f64, f64),
    /// Common delay shift range in taps, drawn uniformly.
    pub delay_range_taps: (f64, f64),
}

impl DistortionPolicy {
    /// Zero-width ranges: identity distortion every frame.
    pub fn identity() -> Self {
        Self {
            mag_gain_range: (1.0, 1.0),
            phase_range_rad: (0.0, 0.0),
            delay_range_taps: (0.0, 0.0),
        }
    }

    /// Default randomized model: gain in [0.5, 2] log-uniform, phase uniform
    /// over a turn, delay shift uniform within ±2 taps.
    pub fn default_random() -> Self {
        Self {
            mag_gain_range: (0.5, 2.0),
            phase_range_rad: (0.0, TAU),
            delay_range_taps: (-2.0, 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if !ok(self.mag_gain_range) || self.mag_gain_range.0 <= 0.0 {
            return Err(Error::Scene("mag_gain_range must be positive and ordered".into()));
        }
        if !ok(self.phase_range_rad) || !ok(self.delay_range_taps) {
            return Err(Error::Scene("distortion ranges must be ordered".into()));
        }
        Ok(())
    }

    /// Draw one state. Draw order (gain, phase, delay) is part of the
    /// determinism contract.
    pub fn sample<R: Rng>(&self, rng: &mut R, sample_interval_s: f64) -> DistortionState {
        let (b0, b1) = self.mag_gain_range;
        let mag_gain = if b1 > b0 {
            (rng.random_range(b0.ln()..b1.ln())).exp()
        } else {
            b0
        };
        let (p0, p1) = self.phase_range_rad;
        let phase_offset_rad = if p1 > p0 { rng.random_range(p0..p1) } else { p0 };
        let (d0, d1) = self.delay_range_taps;
        let delay_taps = if d1 > d0 { rng.random_range(d0..d1) } else { d0 };
        DistortionState {
            mag_gain,
            phase_offset_rad,
            delay_shift_s: delay_taps * sample_interval_s,
        }
    }
}

/// Deterministic sequence of per-frame distortion states. Each frame draws
/// from its own counter-derived stream, so the sequence is independent of
/// evaluation order and identical under a fixed seed.
pub fn distortion_sampler(
    seed: u64,
    policy: &DistortionPolicy,
    sample_interval_s: f64,
    count: usize,
) -> Vec<DistortionState> {
    (0..count)
        .map(|i| {
            let mut rng = frame_rng(seed, i as u64);
            policy.sample(&mut rng, sample_interval_s)
        })
        .collect()
}

/// Per-frame RNG stream derived from the scene seed.
pub(crate) fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

/// Synthesize one CSI frame from explicit paths:
/// `H[k] = β e^{-jθ} (1/√N) Σ_l α_l e^{-j2π(f_c + kΔf)(τ_l + ε)} + z[k]`
/// with circular Gaussian noise of `noise_std` per component.
pub fn synth_csi_frame<R: Rng>(
    cfg: &SystemConfig,
    paths: &[PathSpec],
    distortion: &DistortionState,
    noise_std: f64,
    rng: &mut R,
    timestamp_s: f64,
) -> Result<CsiFrame> {
    if paths.is_empty() {
        return Err(Error::Scene("scene has no paths".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::Scene("noise_std must be >= 0".into()));
    }
    let (span_min, span_max) = cfg.representable_delay_span_s();
    let n = cfg.dft_size as f64;
    let scale = 1.0 / n.sqrt();
    let mut values = vec![Complex64::ZERO; cfg.n_subcarriers()];
    for path in paths {
        let tau = path.delay_s + distortion.delay_shift_s;
        if tau < span_min || tau > span_max {
            return Err(Error::DelayOutOfSpan {
                delay_s: tau,
                min_s: span_min,
                max_s: span_max,
            });
        }
        // Carrier term on the shifted delay; subcarrier ramp walked by
        // recurrence with periodic exact resync.
        let amp = path.gain * Complex64::from_polar(scale, -TAU * cfg.carrier_freq_hz * tau);
        let tau_taps = cfg.delay_s_to_taps(tau);
        let rate = -TAU * tau_taps / n;
        let step = Complex64::from_polar(1.0, rate);
        let mut w = Complex64::ZERO;
        let mut prev_k = i32::MIN;
        for ((slot, &k), i) in values.iter_mut().zip(&cfg.active_subcarriers).zip(0usize..) {
            if k != prev_k + 1 || i & 63 == 0 {
                w = Complex64::from_polar(1.0, rate * k as f64);
            } else {
                w *= step;
            }
            prev_k = k;
            *slot += amp * w;
        }
    }
    let front = Complex64::from_polar(distortion.mag_gain, -distortion.phase_offset_rad);
    for v in values.iter_mut() {
        *v *= front;
    }
    if noise_std > 0.0 {
        for v in values.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(re * noise_std, im * noise_std);
        }
    }
    Ok(CsiFrame {
        timestamp_s,
        values,
    })
}

/// Noiseless, distortion-free frame; deterministic convenience for oracles.
pub fn synth_csi_frame_clean(
    cfg: &SystemConfig,
    paths: &[PathSpec],
    timestamp_s: f64,
) -> Result<CsiFrame> {
    let mut rng = frame_rng(0, 0);
    synth_csi_frame(
        cfg,
        paths,
        &DistortionState::identity(),
        0.0,
        &mut rng,
        timestamp_s,
    )
}

/// Per-target ground-truth descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTarget {
    pub kind: String,
    pub base_rel_delay_s: f64,
    pub rate_hz: Option<f64>,
    pub amplitude_m: Option<f64>,
    pub gain_mag: f64,
}

/// Scene-level ground-truth metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMeta {
    pub scene: String,
    pub d0_m: f64,
    pub los_delay_s: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub noise_std: f64,
    pub ssnr_db: Option<f64>,
    pub targets: Vec<GtTarget>,
}

/// Ground truth for one frame: distortion draw and the true relative delay
/// and gain of every dynamic path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub t: f64,
    pub beta: f64,
    pub theta: f64,
    pub eps_s: f64,
    pub rel_delays_s: Vec<f64>,
    pub gains: Vec<Complex64>,
}

/// Ground truth of a synthesized scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub meta: GroundTruthMeta,
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    /// True relative-delay trace of one target.
    pub fn rel_delay_trace(&self, target: usize) -> Vec<f64> {
        self.frames
            .iter()
            .map(|f| f.rel_delays_s[target])
            .collect()
    }

    /// Mean true relative delay of one target over all frames.
    pub fn mean_rel_delay_s(&self, target: usize) -> f64 {
        let sum: f64 = self.frames.iter().map(|f| f.rel_delays_s[target]).sum();
        sum / self.frames.len() as f64
    }
}

/// A synthesized scene: the CSI series plus its ground truth.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub csi: CsiSeries,
    pub truth: GroundTruth,
}

/// Synthesize a full scene: one frame per sample instant, dynamic delays from
/// the trajectories, per-frame distortion draws, ground truth recorded.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneData> {
    spec.validate()?;
    let cfg = &spec.cfg;
    let c = cfg.light_speed_mps;
    let los_delay = spec.d0_m / c;
    let n_frames = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    if n_frames == 0 {
        return Err(Error::Scene("scene duration yields zero frames".into()));
    }
    let noise_std = spec.resolved_noise_std();

    let mut static_paths: Vec<PathSpec> = Vec::with_capacity(spec.static_paths.len() + 1);
    static_paths.push(PathSpec {
        gain: spec.los_gain,
        delay_s: los_delay,
    });
    for s in &spec.static_paths {
        static_paths.push(PathSpec {
            gain: s.0,
            delay_s: los_delay + s.1,
        });
    }

    let frames: Result<Vec<(CsiFrame, GtFrame)>> = (0..n_frames)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / spec.sample_rate_hz;
            let mut rng = frame_rng(spec.seed, i as u64);
            let distortion = spec.distortion.sample(&mut rng, cfg.sample_interval_s);
            let mut paths = static_paths.clone();
            let mut rel_delays = Vec::with_capacity(spec.dynamic_paths.len());
            let mut gains = Vec::with_capacity(spec.dynamic_paths.len());
            for dp in &spec.dynamic_paths {
                let rel = dp.trajectory.relative_delay_s(t, c);
                let gain = dp.gain_at(t, spec.d0_m, c);
                paths.push(PathSpec {
                    gain,
                    delay_s: los_delay + rel,
                });
                rel_delays.push(rel);
                gains.push(gain);
            }
            let frame = synth_csi_frame(cfg, &paths, &distortion, noise_std, &mut rng, t)?;
            let gt = GtFrame {
                t,
                beta: distortion.mag_gain,
                theta: distortion.phase_offset_rad,
                eps_s: distortion.delay_shift_s,
                rel_delays_s: rel_delays,
                gains,
            };
            Ok((frame, gt))
        })
        .collect();
    let frames = frames?;

    let mut csi = CsiSeries::with_capacity(cfg.n_subcarriers(), n_frames);
    let mut gt_frames = Vec::with_capacity(n_frames);
    for (frame, gt) in frames {
        csi.push_frame(frame.timestamp_s, &frame.values)?;
        gt_frames.push(gt);
    }

    let targets = spec
        .dynamic_paths
        .iter()
        .map(|dp| GtTarget {
            kind: match dp.trajectory {
                MotionTrajectory::Static { .. } => "static".into(),
                MotionTrajectory::Respiration { .. } => "respiration".into(),
                MotionTrajectory::LinearSweep { .. } => "linear_sweep".into(),
            },
            base_rel_delay_s: dp.trajectory.base_relative_delay_s(c),
            rate_hz: match dp.trajectory {
                MotionTrajectory::Respiration { rate_hz, .. } => Some(rate_hz),
                _ => None,
            },
            amplitude_m: match dp.trajectory {
                MotionTrajectory::Respiration { amplitude_m, .. } => Some(amplitude_m),
                _ => None,
            },
            gain_mag: dp.gain.norm(),
        })
        .collect();

    Ok(SceneData {
        csi,
        truth: GroundTruth {
            meta: GroundTruthMeta {
                scene: spec.name.clone(),
                d0_m: spec.d0_m,
                los_delay_s: los_delay,
                sample_rate_hz: spec.sample_rate_hz,
                duration_s: spec.duration_s,
                seed: spec.seed,
                noise_std,
                ssnr_db: spec.noise.ssnr_db(),
                targets,
            },
            frames: gt_frames,
        },
    })
}

/// Excess-over-LoS delay of a target sitting `dist_m` from the midpoint of a
/// transceiver pair separated by `d0_m`, perpendicular to the baseline
/// (bistatic path length minus LoS length, over the propagation speed).
pub fn perpendicular_target_rel_delay_s(d0_m: f64, dist_m: f64, light_speed_mps: f64) -> f64 {
    let half = 0.5 * d0_m;
    let path = 2.0 * (dist_m * dist_m + half * half).sqrt();
    (path - d0_m) / light_speed_mps
}

/// Bistatic excess delay for explicit 2-D positions.
pub fn bistatic_rel_delay_s(
    tx: [f64; 2],
    rx: [f64; 2],
    target: [f64; 2],
    light_speed_mps: f64,
) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let path = dist(tx, target) + dist(target, rx);
    let los = dist(tx, rx);
    (path - los) / light_speed_mps
}
