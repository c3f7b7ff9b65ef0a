use std::io::{Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::SAMPLE_RATE;

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

/// Writes 16-bit PCM mono at the model's sample rate. Samples are clamped to
/// `[-1, 1]` and scaled by `i16::MAX`.
pub fn write_wav<W: Write + Seek>(writer: W, samples: &[f64]) -> Result<()> {
    let mut w = hound::WavWriter::new(writer, spec())?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav_file(path: &Path, samples: &[f64]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_wav(file, samples)
}

/// In-memory WAV encoding.
pub fn wav_bytes(samples: &[f64]) -> Result<Vec<u8>> {
    let mut cur = std::io::Cursor::new(Vec::new());
    write_wav(&mut cur, samples)?;
    Ok(cur.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_clamping() {
        let bytes = wav_bytes(&[0.0, 2.0, -2.0]).unwrap();
        assert_eq!(&bytes[..4], b"RIFF");
        assert_eq!(bytes.len(), 44 + 6);
        let r = hound::WavReader::new(std::io::Cursor::new(bytes)).unwrap();
        assert_eq!(r.spec().sample_rate, 16_000);
        let s: Vec<i16> = r.into_samples().map(|v| v.unwrap()).collect();
        assert_eq!(s, vec![0, i16::MAX, -i16::MAX]);
    }
}
