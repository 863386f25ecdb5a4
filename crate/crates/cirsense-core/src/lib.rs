//! Delay-domain WiFi sensing toolkit.
//!
//! Pipeline: synthesize or ingest OFDM channel-state measurements
//! ([`channel`], [`trace`]), recover channel impulse responses from partial
//! subcarriers ([`recovery`]), cancel per-frame hardware distortions by
//! dominant-path alignment ([`domino`]), align the dynamic path to sub-grid
//! precision ([`dylign`]), and convert the aligned motion signal into
//! respiration rate and target distance ([`estimators`]).
//!
//! The channel simulator doubles as the verification oracle: scenes carry
//! their ground truth, and every stage can be checked against it.

pub mod channel;
pub mod config;
pub mod domino;
pub mod dylign;
pub mod error;
pub mod estimators;
pub mod recovery;
pub mod scene;
pub mod series;
pub mod trace;

pub use channel::{
    bistatic_rel_delay_s, distortion_sampler, perpendicular_target_rel_delay_s, synth_csi_frame,
    synth_csi_frame_clean, synth_scene, DistortionPolicy, DistortionState, DynamicPath, GainDecay,
    GroundTruth, GroundTruthMeta, GtFrame, GtTarget, MotionTrajectory, PathSpec, SceneData,
};
pub use config::{SystemConfig, TapSet, LIGHT_SPEED_MPS};
pub use domino::{align_dominant, CleanSeries, DominoOptions, DominoResult, FrameFlags};
pub use dylign::{
    align_dynamic, align_multi, shift_variance_curve, shifted_tap_trace, tap_variance_profile,
    AlignmentResult, SearchSpec,
};
pub use error::{Error, Result};
pub use estimators::{
    ellipse_range_m, moving_average, periodogram, respiration_rate, respiration_rate_with,
    ssnr_report, tap_ssnr, target_distance, NoiseFloor, RespirationOptions, SensingMode,
    SensingResult, SsnrReport,
};
pub use recovery::{delay_shift, PartialDftOperator, CONDITION_LIMIT, DELAY_SHIFT_GUARD_TAPS};
pub use scene::{NoiseLevel, SceneSpec};
pub use series::{complex_variance, CirSeries, CsiFrame, CsiSeries};
pub use trace::{
    read_cir_trace, read_csi_trace, read_ground_truth, write_cir_trace, write_csi_trace,
    write_ground_truth, TraceHeader,
};
