//! Deterministic synthetic device corpus.
//!
//! Every device is an FIR coloration plus additive white noise. All devices
//! render the same pool of harmonic-plus-noise sources, so the channel is
//! the only class-dependent signal.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::{Error, Result};

pub const MIN_FIR_LEN: usize = 32;
pub const MAX_FIR_LEN: usize = 128;
/// Required pairwise magnitude-response difference.
pub const SEPARATION_DB: f64 = 3.0;
pub const PEAK: f64 = 0.9;
const RESPONSE_BINS: usize = 256;
const DB_FLOOR: f64 = -80.0;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: u32,
    pub fir: Vec<f64>,
    /// Noise RMS relative to the filtered signal RMS.
    pub noise_level: f64,
    pub gain: f64,
}

impl DeviceProfile {
    /// Magnitude response in dB at `bins` frequencies spanning `[0, pi]`,
    /// floored at -80 dB.
    pub fn response_db(&self, bins: usize) -> Vec<f64> {
        fir_response_db(&self.fir, bins)
    }
}

pub fn fir_response_db(fir: &[f64], bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|b| {
            let w = PI * b as f64 / (bins - 1).max(1) as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &h) in fir.iter().enumerate() {
                re += h * (w * k as f64).cos();
                im -= h * (w * k as f64).sin();
            }
            (20.0 * (re * re + im * im).sqrt().log10()).max(DB_FLOOR)
        })
        .collect()
}

/// Largest absolute dB difference between two responses, both as measured
/// and with each response's mean removed; the smaller of the two.
pub fn separation_db(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let raw = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let shape = d.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    raw.min(shape)
}

fn random_profile(id: u32, rng: &mut ChaCha8Rng) -> DeviceProfile {
    let len = rng.random_range(MIN_FIR_LEN..=MAX_FIR_LEN);
    let decay = rng.random_range(1.5..10.0);
    let mut fir = Vec::with_capacity(len);
    fir.push(1.0);
    for k in 1..len {
        let g: f64 = rng.sample(StandardNormal);
        fir.push(0.6 * g * (-(k as f64) / decay).exp());
    }
    DeviceProfile { id, fir, noise_level: rng.random_range(0.005..0.03), gain: rng.random_range(0.5..1.5) }
}

/// `n` device profiles drawn from `seed`, resampled until every pair is at
/// least [`SEPARATION_DB`] apart.
pub fn make_profiles(n: usize, seed: u64) -> Result<Vec<DeviceProfile>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 devices, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles: Vec<DeviceProfile> = Vec::with_capacity(n);
    let mut responses: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while profiles.len() < n {
        if tries == MAX_TRIES {
            return Err(Error::Generation(format!(
                "could not separate {n} profiles by {SEPARATION_DB} dB in {MAX_TRIES} draws"
            )));
        }
        tries += 1;
        let p = random_profile(profiles.len() as u32, &mut rng);
        let r = p.response_db(RESPONSE_BINS);
        if responses.iter().all(|q| separation_db(&r, q) >= SEPARATION_DB) {
            profiles.push(p);
            responses.push(r);
        }
    }
    Ok(profiles)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Applies a device channel: causal FIR convolution truncated to the source
/// length, gain, white noise at `noise_level` times the filtered RMS, then
/// peak normalization to 0.9.
pub fn render(source: &AudioClip, profile: &DeviceProfile, seed: u64) -> AudioClip {
    let x: Vec<f64> = source.samples.iter().map(|&v| v as f64).collect();
    let mut y = alloc::vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &h) in profile.fir.iter().enumerate().take(n + 1) {
            acc += h * x[n - k];
        }
        *out = profile.gain * acc;
    }
    if profile.noise_level > 0.0 {
        let sigma = profile.noise_level * rms(&y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = if peak > 0.0 { PEAK / peak } else { 0.0 };
    AudioClip::new(y.iter().map(|v| (v * k) as f32).collect(), source.sample_rate)
        .with_label(profile.id)
        .with_source(source.source_id.clone())
}

/// Speech-like source: a vibrato harmonic series with per-harmonic jitter
/// under a syllabic envelope, plus breath noise, peak-normalized to 0.9.
pub fn make_source(seed: u64, len: usize, sample_rate: u32, source_id: impl Into<String>) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let f0 = rng.random_range(80.0..300.0);
    let n_harm = rng.random_range(5..=12usize);
    let vib_rate = rng.random_range(3.0..7.0);
    let vib_depth = rng.random_range(0.005..0.03);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let env_rate = rng.random_range(2.0..5.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let breath = rng.random_range(0.02..0.1);
    let harmonics: Vec<(f64, f64, f64)> = (1..=n_harm)
        .map(|h| {
            let jitter = 1.0 + rng.random_range(-0.01..0.01);
            let amp = rng.random_range(0.5..1.0) / h as f64;
            (h as f64 * jitter, amp, rng.random_range(0.0..2.0 * PI))
        })
        .filter(|&(mult, _, _)| mult * f0 * (1.0 + vib_depth) < 0.45 * sr)
        .collect();
    let mut phase = alloc::vec![0.0f64; harmonics.len()];
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin());
        let env = (0.55 + 0.45 * (2.0 * PI * env_rate * t + env_phase).sin()).powi(2);
        let mut v = 0.0;
        for ((mult, amp, phi), ph) in harmonics.iter().zip(phase.iter_mut()) {
            *ph += 2.0 * PI * f * mult / sr;
            v += amp * (*ph + phi).sin();
        }
        let g: f64 = rng.sample(StandardNormal);
        out.push(env * (v + breath * g));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = if peak > 0.0 { PEAK / peak } else { 0.0 };
    AudioClip::new(out.iter().map(|v| (v * k) as f32).collect(), sample_rate).with_source(source_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCorpusSpec {
    pub n_devices: usize,
    pub clips_per_device: usize,
    pub clip_duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        SynthCorpusSpec { n_devices: 8, clips_per_device: 60, clip_duration_s: 2.0, sample_rate: 16_000, seed: 0 }
    }
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 2 {
            return Err(Error::Config(format!("n_devices = {} (need at least 2)", self.n_devices)));
        }
        if self.clips_per_device < 10 {
            return Err(Error::Config(format!("clips_per_device = {} (need at least 10)", self.clips_per_device)));
        }
        if !(self.clip_duration_s > 0.0) || self.sample_rate == 0 || self.clip_len() == 0 {
            return Err(Error::Config("clip duration and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_duration_s * self.sample_rate as f64).round() as usize
    }
}

/// One rendered clip with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    /// Stable clip identifier, `dev{device:02}_src{source:03}`.
    pub name: String,
    pub device_id: u32,
    pub source_id: String,
    /// Seed of the clip's noise stream.
    pub seed: u64,
    pub clip: AudioClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub spec: SynthCorpusSpec,
    pub profiles: Vec<DeviceProfile>,
    /// Device-major order: all sources of device 0, then device 1, ...
    pub clips: Vec<SynthClip>,
}

/// SplitMix64 finalizer; decorrelates derived seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders the shared source pool through every device profile.
pub fn build_corpus(spec: &SynthCorpusSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let profiles = make_profiles(spec.n_devices, mix_seed(spec.seed, 1, 0))?;
    let len = spec.clip_len();
    let sources: Vec<AudioClip> = (0..spec.clips_per_device)
        .map(|s| make_source(mix_seed(spec.seed, 2, s as u64), len, spec.sample_rate, format!("src{s:03}")))
        .collect();
    let jobs: Vec<(usize, usize)> =
        (0..spec.n_devices).flat_map(|d| (0..spec.clips_per_device).map(move |s| (d, s))).collect();
    let render_job = |&(d, s): &(usize, usize)| {
        let seed = mix_seed(spec.seed, 3 + d as u64, s as u64);
        let profile = &profiles[d];
        SynthClip {
            name: format!("dev{d:02}_src{s:03}"),
            device_id: profile.id,
            source_id: sources[s].source_id.clone(),
            seed,
            clip: render(&sources[s], profile, seed),
        }
    };
    #[cfg(feature = "parallel")]
    let clips = {
        use rayon::prelude::*;
        jobs.par_iter().map(render_job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let clips = jobs.iter().map(render_job).collect();
    Ok(SynthCorpus { spec: spec.clone(), profiles, clips })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(fir: Vec<f64>, noise: f64) -> DeviceProfile {
        DeviceProfile { id: 3, fir, noise_level: noise, gain: 1.0 }
    }

    fn ramp() -> AudioClip {
        let s: Vec<f32> = (0..64).map(|i| ((i as f32) * 0.3).sin() * 0.5).collect();
        AudioClip::new(s, 8000).with_source("x")
    }

    #[test]
    fn identity_channel_normalizes_peak() {
        let src = ramp();
        let out = render(&src, &profile(alloc::vec![1.0], 0.0), 0);
        let peak = src.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (a, b) in out.samples.iter().zip(&src.samples) {
            assert!((a - b * (0.9 / peak)).abs() < 1e-6);
        }
        assert_eq!(out.label, Some(3));
    }

    #[test]
    fn delay_impulse_shifts() {
        let src = ramp();
        let out = render(&src, &profile(alloc::vec![0.0, 0.0, 0.0, 1.0], 0.0), 0);
        let head = render(&src, &profile(alloc::vec![1.0], 0.0), 0);
        let k = 0.9 / src.samples[..61].iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert_eq!(&out.samples[..3], &[0.0; 3]);
        for i in 3..64 {
            assert!((out.samples[i] - src.samples[i - 3] * k).abs() < 1e-6);
        }
        assert_eq!(head.samples.len(), out.samples.len());
    }

    #[test]
    fn profiles_are_deterministic_and_separated() {
        let a = make_profiles(8, 5).unwrap();
        assert_eq!(a, make_profiles(8, 5).unwrap());
        for p in &a {
            assert!((MIN_FIR_LEN..=MAX_FIR_LEN).contains(&p.fir.len()));
            assert!(p.noise_level >= 0.0 && p.fir.iter().any(|&h| h != 0.0));
        }
        for i in 0..8 {
            for j in i + 1..8 {
                assert!(separation_db(&a[i].response_db(256), &a[j].response_db(256)) >= SEPARATION_DB);
            }
        }
        assert!(matches!(make_profiles(1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn small_corpus_shape() {
        let spec = SynthCorpusSpec { n_devices: 3, clips_per_device: 10, clip_duration_s: 0.1, ..Default::default() };
        let c = build_corpus(&spec).unwrap();
        assert_eq!(c.clips.len(), 30);
        for d in 0..3u32 {
            assert_eq!(c.clips.iter().filter(|k| k.device_id == d).count(), 10);
        }
        assert!(c.clips.iter().all(|k| k.clip.samples.len() == 1600 && k.clip.validate(1024).is_ok()));
        assert_eq!(c, build_corpus(&spec).unwrap());
        assert!(matches!(
            build_corpus(&SynthCorpusSpec { clips_per_device: 9, ..spec }),
            Err(Error::Config(_))
        ));
    }
}
