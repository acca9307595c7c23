use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Int16,
    Int24,
    Float32,
}

fn file_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::File {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a PCM WAV file (16/24-bit integer or 32-bit float, 1–2 channels)
/// and averages the channels to mono.
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => file_err(path, format!("malformed WAV: {other}")),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedEncoding(format!(
            "{channels} channels (expected 1 or 2)"
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16 | 24) => {
            let scale = 1.0 / (1u32 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{bits}-bit {fmt:?}")));
        }
    };
    if interleaved.is_empty() {
        return Err(file_err(path, "no audio samples"));
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|c| ((c[0] as f64 + c[1] as f64) * 0.5) as f32)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes the canonical format: mono 32-bit float.
pub fn save_wav(path: &Path, buffer: &AudioBuffer) -> Result<()> {
    save_wav_as(path, buffer, WavEncoding::Float32)
}

/// Integer encodings clip to [-1, 1].
pub fn save_wav_as(path: &Path, buffer: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        WavEncoding::Int16 => (16, SampleFormat::Int),
        WavEncoding::Int24 => (24, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec)?;
    match encoding {
        WavEncoding::Float32 => {
            for &s in buffer.samples() {
                writer.write_sample(s)?;
            }
        }
        WavEncoding::Int16 | WavEncoding::Int24 => {
            let full = (1i64 << (bits - 1)) as f64;
            for &s in buffer.samples() {
                let v = (s as f64 * full).round().clamp(-full, full - 1.0) as i32;
                writer.write_sample(v)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, spec: WavSpec, samples: &[i32]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    fn int_spec(channels: u16, bits: u16) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: 48_000,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        }
    }

    #[test]
    fn silent_16_bit_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.wav");
        write_raw(&p, int_spec(1, 16), &vec![0; 48_000]);
        let buf = load_wav(&p).unwrap();
        assert_eq!(buf.len(), 48_000);
        assert_eq!(buf.sample_rate(), 48_000);
        assert!(buf.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn antiphase_stereo_averages_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stereo.wav");
        let mut s = Vec::new();
        for i in 0..1000 {
            let x = (i * 37 % 20_000) - 10_000;
            s.extend([x, -x]);
        }
        write_raw(&p, int_spec(2, 16), &s);
        let buf = load_wav(&p).unwrap();
        assert_eq!(buf.len(), 1000);
        assert!(buf.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_scale_24_bit_dc() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dc24.wav");
        let max = (1 << 23) - 1;
        write_raw(&p, int_spec(1, 24), &vec![max; 64]);
        let buf = load_wav(&p).unwrap();
        // (2^23 − 1) / 2^23 = 1 − 2^−23
        let expected = 1.0 - 2f64.powi(-23);
        for &v in buf.samples() {
            assert!((v as f64 - expected).abs() <= 2f64.powi(-24));
            assert!((v as f64 - 1.0).abs() <= 2f64.powi(-23));
        }
    }

    #[test]
    fn rejects_empty_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.wav");
        write_raw(&empty, int_spec(1, 16), &[]);
        assert!(load_wav(&empty).is_err());

        let eight = dir.path().join("u8.wav");
        write_raw(&eight, int_spec(1, 8), &[1, 2, 3]);
        assert!(matches!(load_wav(&eight), Err(Error::UnsupportedEncoding(_))));

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"RIFF\x04\0\0\0WAVEjunk").unwrap();
        assert!(load_wav(&garbage).is_err());
    }

    #[test]
    fn save_load_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<f32> = (0..2000).map(|i| ((i as f32) * 0.01).sin() * 0.8).collect();
        let buf = AudioBuffer::new(samples, 48_000).unwrap();
        for (enc, tol) in [
            (WavEncoding::Float32, 0.0),
            (WavEncoding::Int24, 2f32.powi(-23)),
            (WavEncoding::Int16, 2f32.powi(-15)),
        ] {
            let p = dir.path().join(format!("{enc:?}.wav"));
            save_wav_as(&p, &buf, enc).unwrap();
            let first = load_wav(&p).unwrap();
            for (a, b) in first.samples().iter().zip(buf.samples()) {
                assert!((a - b).abs() <= tol, "{enc:?}: {a} vs {b}");
            }
            save_wav_as(&p, &first, enc).unwrap();
            assert_eq!(load_wav(&p).unwrap(), first);
        }
    }
}
