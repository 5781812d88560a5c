//! RIFF/WAVE input and 16-bit PCM output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use devid_core::AudioClip;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result};

/// Reads a mono or stereo PCM (8/16/24/32-bit integer) or 32-bit float WAV
/// file. Integer samples are divided by `2^(bits - 1)`, float samples are
/// clamped to `[-1, 1]` and stereo is averaged to mono.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let file = File::open(path).map_err(Error::io(path))?;
    decode_wav(BufReader::new(file), path)
}

/// [`load_wav`] over any byte source; `path` only labels errors.
pub fn decode_wav<R: Read>(reader: R, path: &Path) -> Result<AudioClip> {
    let format = |detail: String| Error::WavFormat { path: path.to_path_buf(), detail };
    let mut reader = WavReader::new(reader).map_err(|e| classify(e, path))?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedCodec { path: path.to_path_buf(), detail: format!("{} channels", spec.channels) });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<Result<_, _>>()
                .map_err(|e| classify(e, path))?
        }
        (SampleFormat::Float, 32) => {
            let raw: Vec<f32> = reader.samples::<f32>().collect::<Result<_, _>>().map_err(|e| classify(e, path))?;
            if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
                return Err(format(format!("non-finite float sample at index {i}")));
            }
            raw.into_iter().map(|v| (v as f64).clamp(-1.0, 1.0)).collect()
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec { path: path.to_path_buf(), detail: format!("{bits}-bit {fmt:?} samples") })
        }
    };
    let channels = spec.channels as usize;
    if interleaved.len() % channels != 0 {
        return Err(format("partial frame at end of data".into()));
    }
    let samples: Vec<f32> = interleaved.chunks_exact(channels).map(|f| (f.iter().sum::<f64>() / channels as f64) as f32).collect();
    if samples.is_empty() {
        return Err(Error::EmptyAudio { path: path.to_path_buf() });
    }
    let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AudioClip::new(samples, spec.sample_rate).with_source(source))
}

/// Read failures after the file is open are reported as malformed data:
/// hound surfaces truncation as an I/O error.
fn classify(e: hound::Error, path: &Path) -> Error {
    let path = path.to_path_buf();
    match e {
        hound::Error::Unsupported => Error::UnsupportedCodec { path, detail: "non-PCM format tag".into() },
        other => Error::WavFormat { path, detail: other.to_string() },
    }
}

/// Quantizes a clip to 16-bit PCM: `round(x * 32768)` clamped to the i16 range.
pub fn quantize_i16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let file = File::create(path).map_err(Error::io(path))?;
    let wav_err = |e: hound::Error| classify(e, path);
    let mut writer = WavWriter::new(BufWriter::new(file), spec).map_err(wav_err)?;
    for &s in &clip.samples {
        writer.write_sample(quantize_i16(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn encode<S: hound::Sample + Copy>(spec: WavSpec, samples: &[S]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut buf, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        buf.into_inner()
    }

    fn int_spec(channels: u16, bits: u16) -> WavSpec {
        WavSpec { channels, sample_rate: 16_000, bits_per_sample: bits, sample_format: SampleFormat::Int }
    }

    fn decode(bytes: Vec<u8>) -> Result<AudioClip> {
        decode_wav(Cursor::new(bytes), Path::new("mem.wav"))
    }

    #[test]
    fn full_scale_16_bit() {
        let clip = decode(encode(int_spec(1, 16), &[32767i16, -32768, 0])).unwrap();
        assert_eq!(clip.samples, [32767.0 / 32768.0, -1.0, 0.0]);
        assert_eq!(clip.sample_rate, 16_000);
    }

    #[test]
    fn silent_file() {
        let clip = decode(encode(int_spec(1, 16), &[0i16; 1000])).unwrap();
        assert_eq!(clip.samples, vec![0.0; 1000]);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = decode(encode(int_spec(2, 16), &[16384i16, -16384, 8192, 8192])).unwrap();
        assert_eq!(clip.samples, [0.0, 0.25]);
    }

    #[test]
    fn other_bit_depths() {
        let c8 = decode(encode(int_spec(1, 8), &[64i8, -128])).unwrap();
        assert_eq!(c8.samples, [0.5, -1.0]);
        let c24 = decode(encode(int_spec(1, 24), &[1i32 << 22, -(1 << 23)])).unwrap();
        assert_eq!(c24.samples, [0.5, -1.0]);
        let fspec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let cf = decode(encode(fspec, &[0.25f32, 1.5, -2.0])).unwrap();
        assert_eq!(cf.samples, [0.25, 1.0, -1.0]);
    }

    #[test]
    fn empty_data_is_an_error() {
        assert!(matches!(decode(encode::<i16>(int_spec(1, 16), &[])), Err(Error::EmptyAudio { .. })));
    }

    #[test]
    fn garbage_is_a_format_error() {
        let e = decode(b"RIFF\x04\x00\x00\x00WAVEjunk".to_vec());
        assert!(matches!(e, Err(Error::WavFormat { .. })), "{e:?}");
        assert!(matches!(decode(b"not a wav file at all".to_vec()), Err(Error::WavFormat { .. })));
    }

    #[test]
    fn compressed_codec_is_rejected() {
        let mut bytes = encode(int_spec(1, 16), &[0i16; 4]);
        // format tag 2: MS ADPCM
        bytes[20] = 2;
        assert!(matches!(decode(bytes), Err(Error::UnsupportedCodec { .. })));
    }

    #[test]
    fn written_file_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let clip = AudioClip::new(vec![0.5, -0.25, 0.999, -1.0], 22_050);
        write_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples, [0.5, -0.25, 32735.0 / 32768.0, -1.0]);
        assert_eq!(back.sample_rate, 22_050);
        assert_eq!(back.source_id, "a");
    }
}
