//! Multi-level MFCC tandem features.
//!
//! Per frame the feature row is laid out as
//! `[mfcc(12) | logE(1) | delta(13) | delta-delta(13) | log-mel(34)]`,
//! 73 columns for the default [`FrameSpec`], over a fixed 128 frames per clip.
//! Intermediate arithmetic is done in `f64`; the stored matrix is `f32`.

mod fft;
mod mel;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use fft::power_spectrum;
pub use mel::MelFilterbank;

use crate::{AudioClip, Error, Result};

/// Floor applied before every logarithm of an energy.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * Float::cos(phase),
                    Window::Hann => 0.5 - 0.5 * Float::cos(phase),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Framing and filterbank geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub fft_size: usize,
    pub window: Window,
    pub n_mel: usize,
    pub n_mfcc: usize,
    pub pre_emphasis_alpha: f64,
    pub target_frames: usize,
    /// Half-width of the delta regression window.
    pub delta_window: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            frame_len: 1024,
            fft_size: 1024,
            window: Window::Hamming,
            n_mel: 34,
            n_mfcc: 12,
            pre_emphasis_alpha: 0.97,
            target_frames: 128,
            delta_window: 2,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.target_frames == 0 {
            return Err(Error::Config("frame_len and target_frames must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame_len {
            return Err(Error::Config(format!(
                "fft_size {} must be a power of two >= frame_len {}",
                self.fft_size, self.frame_len
            )));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis_alpha) {
            return Err(Error::Config("pre_emphasis_alpha must lie in [0, 1)".into()));
        }
        if self.n_mfcc == 0 || self.n_mfcc >= self.n_mel {
            return Err(Error::Config("need 0 < n_mfcc < n_mel".into()));
        }
        if self.delta_window == 0 {
            return Err(Error::Config("delta_window must be positive".into()));
        }
        Ok(())
    }

    /// Width of the delta base: MFCC plus logE.
    pub fn base_dims(&self) -> usize {
        self.n_mfcc + 1
    }

    pub fn tandem_dims(&self) -> usize {
        3 * self.base_dims() + self.n_mel
    }

    pub fn layout(&self) -> TandemLayout {
        let b = self.base_dims();
        TandemLayout {
            mfcc: 0..self.n_mfcc,
            log_energy: self.n_mfcc,
            delta: b..2 * b,
            delta2: 2 * b..3 * b,
            fbank: 3 * b..3 * b + self.n_mel,
        }
    }
}

/// Column ranges of a tandem feature row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TandemLayout {
    pub mfcc: Range<usize>,
    pub log_energy: usize,
    pub delta: Range<usize>,
    pub delta2: Range<usize>,
    pub fbank: Range<usize>,
}

/// A `frames × dims` feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TandemFeature {
    pub frames: usize,
    pub dims: usize,
    pub data: Vec<f32>,
    pub label: Option<u32>,
}

impl TandemFeature {
    pub fn new(frames: usize, dims: usize, data: Vec<f32>, label: Option<u32>) -> Result<Self> {
        if data.len() != frames * dims {
            return Err(Error::shape(
                "tandem_feature",
                format!("{} values for a {frames}x{dims} matrix", data.len()),
            ));
        }
        Ok(TandemFeature { frames, dims, data, label })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn get(&self, t: usize, c: usize) -> f32 {
        self.data[t * self.dims + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dims)
    }
}

/// `y(0) = x(0)`, `y(n) = x(n) - alpha * x(n-1)`.
pub fn pre_emphasis(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    y
}

/// Hop that spreads exactly `target_frames` frames over the signal.
pub fn frame_hop(len: usize, spec: &FrameSpec) -> Result<usize> {
    if len < spec.frame_len {
        return Err(Error::TooShort { len, need: spec.frame_len });
    }
    if spec.target_frames == 1 {
        return Ok(0);
    }
    Ok((len - spec.frame_len) / (spec.target_frames - 1))
}

/// Cuts `target_frames` windowed frames; frame `i` starts at `i * hop`.
pub fn frame_and_window(y: &[f64], spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    let hop = frame_hop(y.len(), spec)?;
    let window = spec.window.coefficients(spec.frame_len);
    Ok((0..spec.target_frames)
        .map(|i| {
            let start = i * hop;
            y[start..start + spec.frame_len].iter().zip(&window).map(|(s, w)| s * w).collect()
        })
        .collect())
}

/// `ln(max(sum(frame^2), 1e-10))`.
pub fn log_energy(frame: &[f64]) -> f64 {
    let e: f64 = frame.iter().map(|v| v * v).sum();
    Float::ln(e.max(LOG_FLOOR))
}

/// Orthonormal DCT-II basis restricted to coefficients `1..=n_out`.
#[derive(Debug, Clone)]
pub struct DctBasis {
    n_in: usize,
    rows: Vec<f64>,
}

impl DctBasis {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let scale = Float::sqrt(2.0 / n_in as f64);
        let mut rows = Vec::with_capacity(n_in * n_out);
        for k in 1..=n_out {
            for n in 0..n_in {
                rows.push(scale * Float::cos(PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64));
            }
        }
        DctBasis { n_in, rows }
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_in {
            return Err(Error::shape(
                "mfcc_dct",
                format!("input length {} != {}", input.len(), self.n_in),
            ));
        }
        Ok(self.rows.chunks(self.n_in).map(|r| r.iter().zip(input).map(|(a, b)| a * b).sum()).collect())
    }
}

/// Orthonormal DCT-II of the log filterbank, keeping coefficients `1..=n_mfcc`.
pub fn mfcc_dct(log_fbank: &[f64], n_mfcc: usize) -> Vec<f64> {
    DctBasis::new(log_fbank.len(), n_mfcc).apply(log_fbank).expect("length matches by construction")
}

/// Regression delta over time with half-window `half`, replicating edge frames.
/// `order` 2 applies the operator twice.
pub fn delta(seq: &[Vec<f64>], half: usize, order: usize) -> Vec<Vec<f64>> {
    let mut cur = seq.to_vec();
    for _ in 0..order {
        cur = delta_once(&cur, half);
    }
    cur
}

fn delta_once(seq: &[Vec<f64>], half: usize) -> Vec<Vec<f64>> {
    let frames = seq.len();
    if frames == 0 {
        return Vec::new();
    }
    let dims = seq[0].len();
    let denom = 2.0 * (1..=half).map(|n| (n * n) as f64).sum::<f64>();
    (0..frames)
        .map(|t| {
            let mut out = vec![0.0; dims];
            for n in 1..=half {
                let next = &seq[(t + n).min(frames - 1)];
                let prev = &seq[t.saturating_sub(n)];
                for (d, o) in out.iter_mut().enumerate() {
                    *o += n as f64 * (next[d] - prev[d]);
                }
            }
            out.iter_mut().for_each(|o| *o /= denom);
            out
        })
        .collect()
}

/// Reusable extractor holding the filterbank and DCT tables for one rate.
#[derive(Debug, Clone)]
pub struct TandemExtractor {
    spec: FrameSpec,
    sample_rate: u32,
    filterbank: MelFilterbank,
    dct: DctBasis,
}

impl TandemExtractor {
    pub fn new(spec: &FrameSpec, sample_rate: u32) -> Result<Self> {
        spec.validate()?;
        Ok(TandemExtractor {
            spec: spec.clone(),
            sample_rate,
            filterbank: MelFilterbank::new(spec.n_mel, spec.fft_size, sample_rate)?,
            dct: DctBasis::new(spec.n_mel, spec.n_mfcc),
        })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<TandemFeature> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let spec = &self.spec;
        let x: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
        let y = pre_emphasis(&x, spec.pre_emphasis_alpha);
        let frames = frame_and_window(&y, spec)?;

        let mut base = Vec::with_capacity(frames.len());
        let mut fbank = Vec::with_capacity(frames.len());
        for frame in &frames {
            let power = power_spectrum(frame, spec.fft_size);
            let log_mel: Vec<f64> = self
                .filterbank
                .apply(&power)?
                .into_iter()
                .map(|e| Float::ln(e.max(LOG_FLOOR)))
                .collect();
            let mut row = self.dct.apply(&log_mel)?;
            row.push(log_energy(frame));
            base.push(row);
            fbank.push(log_mel);
        }
        let d1 = delta(&base, spec.delta_window, 1);
        let d2 = delta(&d1, spec.delta_window, 1);

        let dims = spec.tandem_dims();
        let mut data = Vec::with_capacity(frames.len() * dims);
        for t in 0..frames.len() {
            for block in [&base[t], &d1[t], &d2[t], &fbank[t]] {
                data.extend(block.iter().map(|&v| v as f32));
            }
        }
        TandemFeature::new(frames.len(), dims, data, clip.label)
    }
}

/// Extracts the `(target_frames, tandem_dims)` feature of one clip.
pub fn extract_tandem(clip: &AudioClip, spec: &FrameSpec) -> Result<TandemFeature> {
    TandemExtractor::new(spec, clip.sample_rate)?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pre_emphasis_constant_signal() {
        let y = pre_emphasis(&[1.0, 1.0, 1.0, 1.0], 0.97);
        let expect = [1.0, 0.03, 0.03, 0.03];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(pre_emphasis(&[0.3, -0.2, 0.7], 0.0), vec![0.3, -0.2, 0.7]);
        assert!(pre_emphasis(&[], 0.5).is_empty());
    }

    #[test]
    fn hop_for_ten_seconds_at_32k() {
        assert_eq!(frame_hop(320_000, &FrameSpec::default()).unwrap(), 2511);
        assert_eq!(frame_hop(100, &FrameSpec::default()), Err(Error::TooShort { len: 100, need: 1024 }));
    }

    #[test]
    fn rectangular_frames_are_raw_slices() {
        let spec = FrameSpec { window: Window::Rectangular, frame_len: 4, fft_size: 4, target_frames: 3, ..FrameSpec::default() };
        let y: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let frames = frame_and_window(&y, &spec).unwrap();
        // hop = (10 - 4) / 2 = 3
        assert_eq!(frames[2], vec![6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn hamming_on_ones_is_window() {
        let spec = FrameSpec { frame_len: 16, fft_size: 16, target_frames: 1, ..FrameSpec::default() };
        let frames = frame_and_window(&[1.0; 16], &spec).unwrap();
        assert_eq!(frames[0], Window::Hamming.coefficients(16));
    }

    #[test]
    fn log_energy_cases() {
        assert_eq!(log_energy(&[0.0; 8]), Float::ln(1e-10));
        assert!((log_energy(&[1.0; 400]) - Float::ln(400.0)).abs() < 1e-12);
        let f: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert!((log_energy(&f2) - log_energy(&f) - Float::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn dct_of_constant_vanishes() {
        let c = mfcc_dct(&[3.5; 34], 12);
        assert_eq!(c.len(), 12);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn delta_cases() {
        let constant = vec![vec![2.0, -1.0]; 6];
        assert!(delta(&constant, 2, 1).iter().flatten().all(|&v| v == 0.0));
        let ramp: Vec<Vec<f64>> = (0..10).map(|t| vec![0.5 * t as f64]).collect();
        let d = delta(&ramp, 2, 1);
        for row in &d[2..8] {
            assert!((row[0] - 0.5).abs() < 1e-12);
        }
        assert_eq!(delta(&[vec![4.0, 1.0]], 2, 2), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn layout_matches_column_order() {
        let l = FrameSpec::default().layout();
        assert_eq!(l.mfcc, 0..12);
        assert_eq!(l.log_energy, 12);
        assert_eq!(l.delta, 13..26);
        assert_eq!(l.delta2, 26..39);
        assert_eq!(l.fbank, 39..73);
        assert_eq!(FrameSpec::default().tandem_dims(), 73);
    }
}
