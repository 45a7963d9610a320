//! Log mel-band energy features: 20 ms Hamming-windowed frames with a 10 ms
//! hop, power spectrum, 40 triangular mel bands, natural log.

mod audio;
mod mel;

pub use audio::{read_wav, write_wav, AudioClip};
pub use mel::{hz_to_mel, logmel, mel_filterbank, mel_to_hz, FeatureConfig, FeatureMatrix, FrameLayout};
