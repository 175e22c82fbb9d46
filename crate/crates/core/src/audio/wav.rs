//! Minimal 16-bit PCM mono WAV reader/writer with linear resampling to 16 kHz.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AudioError, Waveform, SAMPLE_RATE};

fn malformed(reason: &str) -> AudioError {
    AudioError::MalformedWav { reason: reason.to_string() }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), AudioError> {
    r.read_exact(buf).map_err(|_| malformed(&format!("truncated {what}")))
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

/// Loads a 1-channel 16-bit PCM WAV; anything else is `UnsupportedWav`.
/// Non-16 kHz input is linearly resampled so downstream code sees one rate.
pub fn load_wav_mono(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hdr = [0u8; 12];
    read_exact_or(&mut r, &mut hdr, "RIFF header")?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(malformed("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<Vec<u8>> = None;
    let mut chunk_hdr = [0u8; 8];
    loop {
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(_) => break, // clean end of chunk list
        }
        let size = u32_le(&chunk_hdr[4..8]) as usize;
        match &chunk_hdr[0..4] {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                let mut body = vec![0u8; size];
                read_exact_or(&mut r, &mut body, "fmt chunk")?;
                fmt = Some((
                    u16_le(&body[0..2]),
                    u16_le(&body[2..4]),
                    u32_le(&body[4..8]),
                    u16_le(&body[14..16]),
                ));
            }
            b"data" => {
                let mut body = vec![0u8; size];
                read_exact_or(&mut r, &mut body, "data chunk")?;
                data = Some(body);
            }
            _ => {
                // Skip unknown chunks, honoring the RIFF word alignment.
                let skip = size + (size & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
                continue;
            }
        }
        if size & 1 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if format != 1 || bits != 16 {
        return Err(AudioError::UnsupportedWav {
            reason: format!("need 16-bit PCM, got format {format} / {bits} bits"),
        });
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedWav {
            reason: format!("need mono, got {channels} channels"),
        });
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(resample_to(Waveform { samples, sample_rate: rate }, SAMPLE_RATE))
}

/// Linear-interpolation resampler; identity when rates already match.
fn resample_to(w: Waveform, target_rate: u32) -> Waveform {
    if w.sample_rate == target_rate || w.samples.is_empty() {
        return Waveform { samples: w.samples, sample_rate: target_rate };
    }
    let out_len = (w.samples.len() as u64 * target_rate as u64 / w.sample_rate as u64) as usize;
    let step = w.sample_rate as f64 / target_rate as f64;
    let src = &w.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(src.len() - 1);
            let i1 = (i0 + 1).min(src.len() - 1);
            let frac = pos - i0 as f64;
            src[i0] * (1.0 - frac) + src[i1] * frac
        })
        .collect();
    Waveform { samples, sample_rate: target_rate }
}

/// Writes 16-bit PCM mono; samples clamped to [-1, 1] and rounded.
pub fn save_wav_mono(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut f = BufWriter::new(File::create(path)?);
    let data_len = (w.samples.len() * 2) as u32;
    f.write_all(b"RIFF")?;
    f.write_all(&(36 + data_len).to_le_bytes())?;
    f.write_all(b"WAVE")?;
    f.write_all(b"fmt ")?;
    f.write_all(&16u32.to_le_bytes())?;
    f.write_all(&1u16.to_le_bytes())?; // PCM
    f.write_all(&1u16.to_le_bytes())?; // mono
    f.write_all(&w.sample_rate.to_le_bytes())?;
    f.write_all(&(w.sample_rate * 2).to_le_bytes())?; // byte rate
    f.write_all(&2u16.to_le_bytes())?; // block align
    f.write_all(&16u16.to_le_bytes())?;
    f.write_all(b"data")?;
    f.write_all(&data_len.to_le_bytes())?;
    for &s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        f.write_all(&q.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_quantizes_within_half_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Waveform {
            samples: (0..48_000).map(|_| rng.random_range(-1.0..1.0)).collect(),
            sample_rate: 16_000,
        };
        save_wav_mono(&w, &path).unwrap();
        let back = load_wav_mono(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 48_000);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
        // A second pass is exact: quantized values survive unchanged.
        let path2 = dir.path().join("b.wav");
        save_wav_mono(&back, &path2).unwrap();
        assert_eq!(load_wav_mono(&path2).unwrap().samples, back.samples);
    }

    #[test]
    fn file_is_44_byte_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let w = Waveform { samples: vec![0.0; 100], sample_rate: 16_000 };
        save_wav_mono(&w, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 44 + 200);
    }

    #[test]
    fn resamples_32k_to_16k_by_half_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.wav");
        // 1 Hz-ish ramp so interpolation error is tiny.
        let w = Waveform {
            samples: (0..96_000).map(|i| (i as f64 / 96_000.0) * 0.5).collect(),
            sample_rate: 32_000,
        };
        save_wav_mono(&w, &path).unwrap();
        let back = load_wav_mono(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 48_000);
        // Every other source sample, up to quantization.
        for (i, &s) in back.samples.iter().enumerate().step_by(1000) {
            let expect = (2 * i) as f64 / 96_000.0 * 0.5;
            assert!((s - expect).abs() < 2.0 / 32768.0, "i={i}: {s} vs {expect}");
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.wav");
        let w = Waveform { samples: vec![0.1; 32], sample_rate: 16_000 };
        save_wav_mono(&w, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[22] = 2; // channel count
        std::fs::write(&path, &bytes).unwrap();
        match load_wav_mono(&path) {
            Err(AudioError::UnsupportedWav { reason }) => assert!(reason.contains("mono")),
            other => panic!("expected UnsupportedWav, got {other:?}"),
        }
    }

    #[test]
    fn non_pcm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        save_wav_mono(&Waveform { samples: vec![0.1; 32], sample_rate: 16_000 }, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] = 3; // IEEE float tag
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_wav_mono(&path), Err(AudioError::UnsupportedWav { .. })));
    }

    #[test]
    fn truncated_and_junk_files_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wav");
        std::fs::write(&path, b"RIFF").unwrap();
        assert!(matches!(load_wav_mono(&path), Err(AudioError::MalformedWav { .. })));
        std::fs::write(&path, b"not a wav file at all....").unwrap();
        assert!(matches!(load_wav_mono(&path), Err(AudioError::MalformedWav { .. })));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.wav");
        let w = Waveform { samples: vec![0.25; 16], sample_rate: 16_000 };
        save_wav_mono(&w, &path).unwrap();
        // Splice a LIST chunk between fmt and data.
        let bytes = std::fs::read(&path).unwrap();
        let mut spliced = bytes[..36].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&6u32.to_le_bytes());
        spliced.extend_from_slice(b"INFOab");
        spliced.extend_from_slice(&bytes[36..]);
        let riff_len = (spliced.len() - 8) as u32;
        spliced[4..8].copy_from_slice(&riff_len.to_le_bytes());
        std::fs::write(&path, &spliced).unwrap();
        let back = load_wav_mono(&path).unwrap();
        assert_eq!(back.samples.len(), 16);
        assert!((back.samples[0] - 0.25).abs() < 1.0 / 32768.0);
    }
}
