use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * Float::log10(1.0 + hz / 700.0)
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (Float::powf(10.0, mel / 2595.0) - 1.0)
}

/// Triangular filters spaced uniformly on the Mel scale from 0 Hz to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_bins: usize,
    /// (first bin, weights) per filter
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mel: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_mel == 0 || sample_rate == 0 || fft_size < 2 {
            return Err(Error::Config("mel filterbank needs n_mel, fft_size and sample_rate".into()));
        }
        let n_bins = fft_size / 2 + 1;
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let bins: Vec<usize> = (0..n_mel + 2)
            .map(|i| {
                let hz = mel_to_hz(top * i as f64 / (n_mel + 1) as f64);
                let b = Float::floor((fft_size + 1) as f64 * hz / sample_rate as f64) as usize;
                b.min(n_bins - 1)
            })
            .collect();
        let mut filters = Vec::with_capacity(n_mel);
        for m in 1..=n_mel {
            let (left, center, right) = (bins[m - 1], bins[m], bins[m + 1]);
            if !(left < center && center < right) {
                return Err(Error::Config(format!(
                    "mel filter {} has no support (bins {left}, {center}, {right}); \
                     reduce n_mel or raise fft_size",
                    m - 1
                )));
            }
            let weights = (left..=right)
                .map(|k| {
                    if k <= center {
                        (k - left) as f64 / (center - left) as f64
                    } else {
                        (right - k) as f64 / (right - center) as f64
                    }
                })
                .collect();
            filters.push((left, weights));
        }
        Ok(MelFilterbank { n_bins, filters })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense weight row of filter `m` over all spectrum bins.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        let mut row = alloc::vec![0.0; self.n_bins];
        let (start, w) = &self.filters[m];
        row[*start..*start + w.len()].copy_from_slice(w);
        row
    }

    /// Filter energies `dot(weights_m, power)`.
    pub fn apply(&self, power: &[f64]) -> Result<Vec<f64>> {
        if power.len() != self.n_bins {
            return Err(Error::shape(
                "mel_filterbank",
                format!("spectrum has {} bins, expected {}", power.len(), self.n_bins),
            ));
        }
        Ok(self
            .filters
            .iter()
            .map(|(start, w)| w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_filter_peaks_at_one() {
        let fb = MelFilterbank::new(34, 1024, 16_000).unwrap();
        assert_eq!(fb.len(), 34);
        for m in 0..fb.len() {
            let w = fb.weights(m);
            let peak = w.iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, 1.0);
        }
    }

    #[test]
    fn ones_spectrum_gives_weight_sums() {
        let fb = MelFilterbank::new(34, 1024, 32_000).unwrap();
        let out = fb.apply(&alloc::vec![1.0; 513]).unwrap();
        for (m, v) in out.iter().enumerate() {
            let sum: f64 = fb.weights(m).iter().sum();
            assert!((v - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_filters_is_config_error() {
        assert!(matches!(MelFilterbank::new(200, 64, 8000), Err(Error::Config(_))));
    }
}
