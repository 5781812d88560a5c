//! Mono audio clips and fixed-duration segmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Device class index, when known.
    pub label: Option<u32>,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate, label: None, source_id: String::new() }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn duration_s(&self) -> f64 {
        if self.sample_rate == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Checks the clip invariants against a minimum length (one analysis frame).
    pub fn validate(&self, min_len: usize) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Domain {
                op: "audio",
                detail: format!("sample {i} = {} outside [-1, 1]", self.samples[i]),
            });
        }
        if self.samples.len() < min_len {
            return Err(Error::TooShort { len: self.samples.len(), need: min_len });
        }
        Ok(())
    }
}

/// Splits a clip into consecutive non-overlapping segments of `duration_s`
/// seconds. A trailing remainder shorter than the duration is dropped, and a
/// clip shorter than one segment yields no segments.
///
/// `min_len` is the analysis frame length the segments must cover.
pub fn segment(clip: &AudioClip, duration_s: f64, min_len: usize) -> Result<Vec<AudioClip>> {
    if clip.sample_rate == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Config(format!("segment duration {duration_s} must be positive")));
    }
    let seg_len = num_traits::Float::round(duration_s * clip.sample_rate as f64) as usize;
    if seg_len < min_len.max(1) {
        return Err(Error::Config(format!(
            "segment of {seg_len} samples is shorter than the frame length {min_len}"
        )));
    }
    Ok(clip
        .samples
        .chunks_exact(seg_len)
        .enumerate()
        .map(|(i, chunk)| AudioClip {
            samples: chunk.to_vec(),
            sample_rate: clip.sample_rate,
            label: clip.label,
            source_id: format!("{}#{i}", clip.source_id),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, sr: u32) -> AudioClip {
        AudioClip::new((0..n).map(|i| (i % 1000) as f32 / 1000.0).collect(), sr).with_label(3)
    }

    #[test]
    fn ten_second_clip_gives_one_segment() {
        let clip = ramp(320_000, 32_000);
        let segs = segment(&clip, 10.0, 1024).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].samples.len(), 320_000);
    }

    #[test]
    fn remainder_is_dropped_and_labels_inherited() {
        let clip = ramp(25 * 100, 100);
        let segs = segment(&clip, 10.0, 10).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.label == Some(3) && s.samples.len() == 1000));
        let joined: Vec<f32> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
        assert_eq!(&joined[..], &clip.samples[..2000]);
    }

    #[test]
    fn short_clip_gives_empty_list() {
        let clip = ramp(300, 100);
        assert!(segment(&clip, 10.0, 10).unwrap().is_empty());
    }

    #[test]
    fn segment_shorter_than_frame_is_rejected() {
        let clip = ramp(32_000, 16_000);
        assert!(matches!(segment(&clip, 0.01, 1024), Err(Error::Config(_))));
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut clip = ramp(2048, 16_000);
        clip.validate(1024).unwrap();
        clip.samples[5] = 1.5;
        assert!(clip.validate(1024).is_err());
        let short = ramp(100, 16_000);
        assert_eq!(short.validate(1024), Err(Error::TooShort { len: 100, need: 1024 }));
    }
}
