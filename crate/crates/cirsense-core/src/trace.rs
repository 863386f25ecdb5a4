//! Binary trace container and ground-truth sidecar files.
//!
//! Layout: 5-byte magic (`CIRS1` for CSI, `CIRT1` for CIR dumps), a u32
//! little-endian JSON header length, the JSON header, then one record per
//! frame: f64 timestamp followed by interleaved (re, im) f32 pairs, all
//! little-endian. Ground truth is a sibling JSON-lines file with a meta line
//! followed by per-frame records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{GroundTruth, GroundTruthMeta, GtFrame};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::series::{CirSeries, CsiSeries};

pub const CSI_MAGIC: &[u8; 5] = b"CIRS1";
pub const CIR_MAGIC: &[u8; 5] = b"CIRT1";

/// JSON header of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub config: SystemConfig,
    pub sample_rate_hz: f64,
    pub frame_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    /// Signed tap index of the first value; present in CIR dumps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tap_offset: Option<i32>,
}

impl TraceHeader {
    pub fn for_csi(
        config: &SystemConfig,
        sample_rate_hz: f64,
        frame_count: usize,
        d0_m: Option<f64>,
        scene: Option<String>,
    ) -> Self {
        Self {
            version: 1,
            config: config.clone(),
            sample_rate_hz,
            frame_count: frame_count as u64,
            d0_m,
            scene,
            tap_offset: None,
        }
    }
}

/// Write a CSI series with its header to `path`.
pub fn write_csi_trace(path: &Path, header: &TraceHeader, series: &CsiSeries) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_preamble(&mut out, CSI_MAGIC, header)?;
    for (i, &t) in series.timestamps().iter().enumerate() {
        write_frame(&mut out, t, series.frame(i))?;
    }
    out.flush()?;
    Ok(())
}

/// Write a recovered CIR series (`CIRT1`), tap offset recorded in the header.
pub fn write_cir_trace(path: &Path, header: &TraceHeader, series: &CirSeries) -> Result<()> {
    let mut header = header.clone();
    header.tap_offset = Some(series.tap_offset);
    header.frame_count = series.n_frames() as u64;
    let mut out = BufWriter::new(File::create(path)?);
    write_preamble(&mut out, CIR_MAGIC, &header)?;
    for (i, &t) in series.timestamps().iter().enumerate() {
        write_frame(&mut out, t, series.frame(i))?;
    }
    out.flush()?;
    Ok(())
}

fn write_preamble<W: Write>(out: &mut W, magic: &[u8; 5], header: &TraceHeader) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(magic)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

fn write_frame<W: Write>(out: &mut W, timestamp: f64, values: &[Complex64]) -> Result<()> {
    out.write_all(&timestamp.to_le_bytes())?;
    for v in values {
        out.write_all(&(v.re as f32).to_le_bytes())?;
        out.write_all(&(v.im as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read a CSI trace. Rejects wrong magic, truncated records and frame-count
/// mismatches.
pub fn read_csi_trace(path: &Path) -> Result<(TraceHeader, CsiSeries)> {
    let mut input = BufReader::new(File::open(path)?);
    let header = read_preamble(&mut input, CSI_MAGIC)?;
    let width = header.config.n_subcarriers();
    let mut series = CsiSeries::with_capacity(width, header.frame_count as usize);
    let mut buf = vec![Complex64::ZERO; width];
    while let Some(t) = read_frame(&mut input, &mut buf)? {
        series.push_frame(t, &buf)?;
    }
    check_count(&header, series.n_frames())?;
    Ok((header, series))
}

/// Read a CIR dump.
pub fn read_cir_trace(path: &Path) -> Result<(TraceHeader, CirSeries)> {
    let mut input = BufReader::new(File::open(path)?);
    let header = read_preamble(&mut input, CIR_MAGIC)?;
    let tap_offset = header
        .tap_offset
        .ok_or_else(|| Error::TraceFormat("CIR trace missing tap_offset".into()))?;
    let width = header.config.n_taps();
    let mut series = CirSeries::with_capacity(tap_offset, width, header.frame_count as usize);
    let mut buf = vec![Complex64::ZERO; width];
    while let Some(t) = read_frame(&mut input, &mut buf)? {
        series.push_frame(t, &buf)?;
    }
    check_count(&header, series.n_frames())?;
    Ok((header, series))
}

fn check_count(header: &TraceHeader, got: usize) -> Result<()> {
    if header.frame_count != 0 && header.frame_count as usize != got {
        return Err(Error::TraceFormat(format!(
            "header promises {} frames, file holds {got}",
            header.frame_count
        )));
    }
    Ok(())
}

fn read_preamble<R: Read>(input: &mut R, magic: &[u8; 5]) -> Result<TraceHeader> {
    let mut got_magic = [0u8; 5];
    input
        .read_exact(&mut got_magic)
        .map_err(|_| Error::TraceFormat("file too short for magic".into()))?;
    if &got_magic != magic {
        return Err(Error::TraceFormat(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got_magic),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 4];
    input
        .read_exact(&mut len)
        .map_err(|_| Error::TraceFormat("truncated header length".into()))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input
        .read_exact(&mut json)
        .map_err(|_| Error::TraceFormat("truncated header".into()))?;
    let header: TraceHeader =
        serde_json::from_slice(&json).map_err(|e| Error::TraceFormat(format!("header: {e}")))?;
    header.config.validate()?;
    Ok(header)
}

/// Read one record into `buf`; `Ok(None)` at a clean end of file.
fn read_frame<R: Read>(input: &mut R, buf: &mut [Complex64]) -> Result<Option<f64>> {
    let mut ts = [0u8; 8];
    match input.read_exact(&mut ts) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut rec = vec![0u8; buf.len() * 8];
    input
        .read_exact(&mut rec)
        .map_err(|_| Error::TraceFormat("truncated frame record".into()))?;
    for (i, slot) in buf.iter_mut().enumerate() {
        let re = f32::from_le_bytes(rec[i * 8..i * 8 + 4].try_into().unwrap());
        let im = f32::from_le_bytes(rec[i * 8 + 4..i * 8 + 8].try_into().unwrap());
        *slot = Complex64::new(re as f64, im as f64);
    }
    Ok(Some(f64::from_le_bytes(ts)))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum GtLine {
    Meta(GroundTruthMeta),
    Frame(GtFrame),
}

/// Write the ground-truth sidecar (JSON lines: meta first, then frames).
pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &GtLine::Meta(truth.meta.clone()))?;
    out.write_all(b"\n")?;
    for frame in &truth.frames {
        serde_json::to_writer(&mut out, &GtLine::Frame(frame.clone()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a ground-truth sidecar.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let input = BufReader::new(File::open(path)?);
    let mut meta: Option<GroundTruthMeta> = None;
    let mut frames = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GtLine>(&line)
            .map_err(|e| Error::TraceFormat(format!("ground truth line: {e}")))?
        {
            GtLine::Meta(m) => meta = Some(m),
            GtLine::Frame(f) => frames.push(f),
        }
    }
    Ok(GroundTruth {
        meta: meta.ok_or_else(|| Error::TraceFormat("ground truth missing meta line".into()))?,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synth_scene, DistortionPolicy};
    use crate::scene::{NoiseLevel, SceneSpec};

    #[test]
    fn csi_trace_round_trip() {
        let mut spec = SceneSpec::basic("roundtrip");
        spec.duration_s = 0.05;
        spec.sample_rate_hz = 200.0;
        spec.noise = NoiseLevel::Std(0.01);
        spec.distortion = DistortionPolicy::default_random();
        let scene = synth_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cirs");
        let header = TraceHeader::for_csi(
            &spec.cfg,
            spec.sample_rate_hz,
            scene.csi.n_frames(),
            Some(spec.d0_m),
            Some(spec.name.clone()),
        );
        write_csi_trace(&path, &header, &scene.csi).unwrap();
        let (h2, s2) = read_csi_trace(&path).unwrap();
        assert_eq!(h2.config, spec.cfg);
        assert_eq!(s2.n_frames(), scene.csi.n_frames());
        assert_eq!(s2.timestamps(), scene.csi.timestamps());
        // Values survive the f32 quantization exactly once quantized.
        for (a, b) in s2.frame(0).iter().zip(scene.csi.frame(0)) {
            assert_eq!(a.re, b.re as f32 as f64);
            assert_eq!(a.im, b.im as f32 as f64);
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cirs");
        std::fs::write(&path, b"NOPE!junkjunkjunk").unwrap();
        assert!(matches!(
            read_csi_trace(&path),
            Err(Error::TraceFormat(_))
        ));
    }

    #[test]
    fn ground_truth_round_trip() {
        let mut spec = SceneSpec::basic("gt");
        spec.duration_s = 0.02;
        spec.sample_rate_hz = 200.0;
        let scene = synth_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.gt.jsonl");
        write_ground_truth(&path, &scene.truth).unwrap();
        let truth = read_ground_truth(&path).unwrap();
        assert_eq!(truth, scene.truth);
    }
}
