//! Binary feature (`UVF1`) and statistics (`UVS1`) files.
//!
//! ```text
//! UVF1: "UVF1" | u32 n_frames | u32 n_mels | f32 data[n_frames·n_mels]   (row-major, LE)
//! UVS1: "UVS1" | u32 n_mels | f32 mean[n_mels] | f32 std[n_mels]          (LE)
//! ```

use std::path::Path;

use super::mel::{MelSpectrogram, NormStats};
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"UVF1";
const STATS_MAGIC: &[u8; 4] = b"UVS1";

struct Cursor<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.kind, "truncated file"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.kind, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        if self.take(4)? != want {
            return Err(Error::format(self.kind, "bad magic"));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if !self.buf.is_empty() {
            return Err(Error::format(self.kind, "trailing bytes"));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_features(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mel.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(mel.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(mel.n_mels as u32).to_le_bytes());
    push_f32s(&mut out, &mel.data);
    out
}

/// Decodes a feature file. Files carry no normalization flag; features
/// produced by extraction are normalized, so the result is marked as such.
pub fn decode_features(bytes: &[u8]) -> Result<MelSpectrogram> {
    let mut c = Cursor {
        buf: bytes,
        kind: "UVF1",
    };
    c.magic(FEATURE_MAGIC)?;
    let n_frames = c.u32()? as usize;
    let n_mels = c.u32()? as usize;
    let data = c.f32s(n_frames * n_mels)?;
    c.finish()?;
    MelSpectrogram::new(data, n_frames, n_mels, true)
}

pub fn encode_stats(stats: &NormStats) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + stats.mean.len() * 8);
    out.extend_from_slice(STATS_MAGIC);
    out.extend_from_slice(&(stats.mean.len() as u32).to_le_bytes());
    push_f32s(&mut out, &stats.mean);
    push_f32s(&mut out, &stats.std);
    out
}

pub fn decode_stats(bytes: &[u8]) -> Result<NormStats> {
    let mut c = Cursor {
        buf: bytes,
        kind: "UVS1",
    };
    c.magic(STATS_MAGIC)?;
    let n = c.u32()? as usize;
    let mean = c.f32s(n)?;
    let std = c.f32s(n)?;
    c.finish()?;
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::format("UVS1", "non-positive standard deviation"));
    }
    Ok(NormStats { mean, std })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_features(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    write(path.as_ref(), &encode_features(mel))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    decode_features(&read(path.as_ref())?)
}

pub fn write_stats(path: impl AsRef<Path>, stats: &NormStats) -> Result<()> {
    write(path.as_ref(), &encode_stats(stats))
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<NormStats> {
    decode_stats(&read(path.as_ref())?)
}
