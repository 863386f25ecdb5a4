//! Time-ordered containers for frequency-domain (CSI) and delay-domain (CIR)
//! measurements. Frames are value objects; series store them frame-major.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One timestamped vector of complex subcarrier values, ordered like the
/// owning config's `active_subcarriers`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub timestamp_s: f64,
    pub values: Vec<Complex64>,
}

/// Time-ordered sequence of CSI frames of uniform width.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSeries {
    timestamps: Vec<f64>,
    n_sub: usize,
    data: Vec<Complex64>,
}

impl CsiSeries {
    pub(crate) fn from_parts(timestamps: Vec<f64>, n_sub: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(timestamps.len() * n_sub, data.len());
        Self {
            timestamps,
            n_sub,
            data,
        }
    }

    pub fn new(n_sub: usize) -> Self {
        Self {
            timestamps: Vec::new(),
            n_sub,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(n_sub: usize, n_frames: usize) -> Self {
        Self {
            timestamps: Vec::with_capacity(n_frames),
            n_sub,
            data: Vec::with_capacity(n_sub * n_frames),
        }
    }

    pub fn from_frames(frames: Vec<CsiFrame>) -> Result<Self> {
        let n_sub = frames.first().map_or(0, |f| f.values.len());
        let mut series = Self::with_capacity(n_sub, frames.len());
        for frame in frames {
            series.push_frame(frame.timestamp_s, &frame.values)?;
        }
        Ok(series)
    }

    pub fn push_frame(&mut self, timestamp_s: f64, values: &[Complex64]) -> Result<()> {
        if values.len() != self.n_sub {
            return Err(Error::ShapeMismatch {
                expected: self.n_sub,
                got: values.len(),
                context: "CSI frame width",
            });
        }
        self.timestamps.push(timestamp_s);
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_sub
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n_sub..(i + 1) * self.n_sub]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> + '_ {
        self.data.chunks_exact(self.n_sub)
    }

    /// Sample rate implied by the first two timestamps, Hz.
    pub fn sample_rate_hz(&self) -> Option<f64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let dt = self.timestamps[1] - self.timestamps[0];
        (dt > 0.0).then(|| 1.0 / dt)
    }

    /// Sub-series over the frame index range (half-open).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            n_sub: self.n_sub,
            data: self.data[range.start * self.n_sub..range.end * self.n_sub].to_vec(),
        }
    }

    /// Scale every value by a complex constant (returns a new series).
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            n_sub: self.n_sub,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Matrix of complex tap values over (tap index × time), with the signed
/// tap-index offset of the recovery grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CirSeries {
    /// Signed tap index of row 0 (`L.min`).
    pub tap_offset: i32,
    n_taps: usize,
    timestamps: Vec<f64>,
    data: Vec<Complex64>,
}

impl CirSeries {
    pub(crate) fn from_parts(
        tap_offset: i32,
        n_taps: usize,
        timestamps: Vec<f64>,
        data: Vec<Complex64>,
    ) -> Self {
        debug_assert_eq!(timestamps.len() * n_taps, data.len());
        Self {
            tap_offset,
            n_taps,
            timestamps,
            data,
        }
    }

    pub fn new(tap_offset: i32, n_taps: usize) -> Self {
        Self {
            tap_offset,
            n_taps,
            timestamps: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(tap_offset: i32, n_taps: usize, n_frames: usize) -> Self {
        Self {
            tap_offset,
            n_taps,
            timestamps: Vec::with_capacity(n_frames),
            data: Vec::with_capacity(n_taps * n_frames),
        }
    }

    pub fn push_frame(&mut self, timestamp_s: f64, taps: &[Complex64]) -> Result<()> {
        if taps.len() != self.n_taps {
            return Err(Error::ShapeMismatch {
                expected: self.n_taps,
                got: taps.len(),
                context: "CIR frame width",
            });
        }
        self.timestamps.push(timestamp_s);
        self.data.extend_from_slice(taps);
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n_taps..(i + 1) * self.n_taps]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> + '_ {
        self.data.chunks_exact(self.n_taps)
    }

    /// Row index of a signed tap index, if it lies on the grid.
    pub fn row_of_tap(&self, tap: i32) -> Option<usize> {
        let row = tap - self.tap_offset;
        (row >= 0 && (row as usize) < self.n_taps).then_some(row as usize)
    }

    /// Signed tap index of row `row`.
    pub fn tap_of_row(&self, row: usize) -> i32 {
        self.tap_offset + row as i32
    }

    /// Copy of the time trace of one tap row.
    pub fn tap_trace(&self, tap: i32) -> Option<Vec<Complex64>> {
        let row = self.row_of_tap(tap)?;
        Some(
            self.data
                .iter()
                .skip(row)
                .step_by(self.n_taps)
                .copied()
                .collect(),
        )
    }

    /// Mean tap vector over time.
    pub fn mean_frame(&self) -> Vec<Complex64> {
        let mut acc = vec![Complex64::ZERO; self.n_taps];
        for frame in self.frames() {
            for (a, v) in acc.iter_mut().zip(frame) {
                *a += v;
            }
        }
        let scale = 1.0 / self.n_frames().max(1) as f64;
        for a in &mut acc {
            *a *= scale;
        }
        acc
    }
}

/// Complex sample variance `E|x - x̄|²` (population normalization).
pub fn complex_variance(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    samples.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / n
}
