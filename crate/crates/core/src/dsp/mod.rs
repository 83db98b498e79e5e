//! Audio I/O and spectral features.

mod audio;
mod features;
mod mel;
mod stft;

pub use audio::{load_wav, write_wav, AudioBuffer, SAMPLE_RATE};
pub use features::{
    decode_features, decode_stats, encode_features, encode_stats, read_features, read_stats,
    write_features, write_stats,
};
pub use mel::{
    compute_norm_stats, feature_filterbank, hz_to_mel, log_mel, mel_filterbank, mel_to_hz,
    MelFilterbank, MelSpectrogram, NormStats, LOG_FLOOR, MEL_F_MAX, MEL_F_MIN, N_MELS,
};
pub use stft::{hann, stft_magnitude, stft_magnitude_tensor, Spectrogram, StftParams};

/// Samples per condition frame; also the generator's upsampling ratio.
pub const HOP: usize = 256;
