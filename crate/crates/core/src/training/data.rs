use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dsp::{
    compute_norm_stats, load_wav, log_mel, read_features, AudioBuffer, MelSpectrogram, NormStats,
    HOP,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One utterance with its normalized log-mel features.
#[derive(Debug, Clone)]
pub struct Clip {
    pub name: String,
    pub audio: AudioBuffer,
    pub mel: MelSpectrogram,
}

impl Clip {
    /// Frames whose full 256-sample window lies inside the waveform.
    pub fn whole_frames(&self) -> usize {
        (self.audio.len() / HOP).min(self.mel.n_frames)
    }
}

/// A training example: `frames` condition frames and the waveform samples
/// they cover.
#[derive(Debug, Clone)]
pub struct Segment {
    pub clip: usize,
    pub start_frame: usize,
    /// `[n_mels, frames]`.
    pub cond: Tensor<f32>,
    /// `[frames·256]`, starting at sample `start_frame·256`.
    pub wave: Tensor<f32>,
}

/// Training corpus with normalization statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub stats: NormStats,
}

/// Sorted `.wav` files of a directory.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Input(format!("no WAV files in {}", dir.display())));
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl Dataset {
    /// Computes features for named clips; `stats` defaults to the corpus
    /// statistics.
    pub fn from_audio(clips: Vec<(String, AudioBuffer)>, stats: Option<NormStats>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        let raw: Vec<MelSpectrogram> = clips
            .iter()
            .map(|(_, a)| log_mel(a, None))
            .collect::<Result<_>>()?;
        let stats = match stats {
            Some(s) => s,
            None => compute_norm_stats(&raw)?,
        };
        let clips = clips
            .into_iter()
            .zip(raw)
            .map(|((name, audio), mel)| {
                Ok(Clip {
                    name,
                    audio,
                    mel: mel.normalize(&stats)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { clips, stats })
    }

    /// Loads every WAV in `dir` and extracts features.
    pub fn from_wav_dir(dir: &Path, stats: Option<NormStats>) -> Result<Self> {
        let clips = list_wavs(dir)?
            .into_iter()
            .map(|p| Ok((stem(&p), load_wav(&p)?)))
            .collect::<Result<_>>()?;
        Self::from_audio(clips, stats)
    }

    /// Pairs WAVs with precomputed `<stem>.uvf` features from `feature_dir`.
    pub fn from_features(wav_dir: &Path, feature_dir: &Path, stats: NormStats) -> Result<Self> {
        let mut clips = Vec::new();
        for wav in list_wavs(wav_dir)? {
            let name = stem(&wav);
            let audio = load_wav(&wav)?;
            let mel = read_features(feature_dir.join(format!("{name}.uvf")))?;
            let expected = audio.len() / HOP + 1;
            if mel.n_frames != expected {
                return Err(Error::Alignment(format!(
                    "{name}: features have {} frames but the waveform of {} samples implies {expected}",
                    mel.n_frames,
                    audio.len()
                )));
            }
            clips.push(Clip { name, audio, mel });
        }
        Ok(Self { clips, stats })
    }

    /// Clips long enough for a segment of `frames` frames.
    pub fn eligible(&self, frames: usize) -> Vec<usize> {
        (0..self.clips.len())
            .filter(|&i| self.clips[i].whole_frames() >= frames)
            .collect()
    }

    pub fn check_segment_frames(&self, frames: usize) -> Result<()> {
        if self.eligible(frames).is_empty() {
            let longest = self.clips.iter().map(Clip::whole_frames).max().unwrap_or(0);
            return Err(Error::Input(format!(
                "no clip covers {frames} frames (longest has {longest})"
            )));
        }
        Ok(())
    }

    /// Segment of clip `clip` starting at condition frame `start_frame`.
    pub fn segment(&self, clip: usize, start_frame: usize, frames: usize) -> Result<Segment> {
        let c = self
            .clips
            .get(clip)
            .ok_or_else(|| Error::Input(format!("no clip {clip}")))?;
        if start_frame + frames > c.whole_frames() {
            return Err(Error::Input(format!(
                "frames {start_frame}..{} exceed the {} whole frames of {}",
                start_frame + frames,
                c.whole_frames(),
                c.name
            )));
        }
        let s0 = start_frame * HOP;
        let wave = c.audio.samples[s0..s0 + frames * HOP].to_vec();
        Ok(Segment {
            clip,
            start_frame,
            cond: c.mel.slice_frames(start_frame, frames)?.to_condition(),
            wave: Tensor::new(wave, &[frames * HOP])?,
        })
    }

    /// Uniformly random clip and start frame.
    pub fn sample(&self, rng: &mut impl Rng, frames: usize) -> Result<Segment> {
        self.check_segment_frames(frames)?;
        let eligible = self.eligible(frames);
        let clip = eligible[rng.random_range(0..eligible.len())];
        let start = rng.random_range(0..=self.clips[clip].whole_frames() - frames);
        self.segment(clip, start, frames)
    }
}
