//! Synthetic acoustic frames standing in for recorded audio.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, ModelError};
use crate::numerics::Tensor;
use crate::vocab::TokenId;

const VOICE_SALT: u64 = 0x0005_eed0_fa11_c0de;

/// Frame sequence plus the tokens and noise seed that reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechSample {
    /// `T × feat_dim`, with `T = frames_per_token · source_tokens.len()`.
    pub frames: Tensor,
    pub source_tokens: Vec<TokenId>,
    pub noise_seed: u64,
}

/// Fixed per-token "pronunciation" vector, a function of `cfg.seed` and the token only.
pub fn token_voice(token: TokenId, cfg: &ModelConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VOICE_SALT);
    rng.set_stream(u64::from(token));
    (0..cfg.feat_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Repeats each token's voice vector `frames_per_token` times and adds Gaussian noise.
pub fn featurize_speech(
    tokens: &[TokenId],
    cfg: &ModelConfig,
    noise_seed: u64,
    noise_sigma: f64,
) -> Result<SpeechSample, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let r = cfg.frames_per_token;
    let d = cfg.feat_dim;
    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut data = Vec::with_capacity(tokens.len() * r * d);
    for &t in tokens {
        let voice = token_voice(t, cfg);
        for _ in 0..r {
            for v in &voice {
                let eps: f64 = StandardNormal.sample(&mut noise);
                data.push(v + noise_sigma * eps);
            }
        }
    }
    Ok(SpeechSample {
        frames: Tensor::matrix(tokens.len() * r, d, data),
        source_tokens: tokens.to_vec(),
        noise_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_token_repeats_its_voice() {
        let cfg = ModelConfig {
            frames_per_token: 3,
            ..ModelConfig::default()
        };
        let s = featurize_speech(&[5], &cfg, 9, 0.0).unwrap();
        assert_eq!(s.frames.shape(), &[3, cfg.feat_dim]);
        let voice = token_voice(5, &cfg);
        for i in 0..3 {
            assert_eq!(s.frames.row(i), voice.as_slice());
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let cfg = ModelConfig::default();
        let a = featurize_speech(&[4, 9, 7], &cfg, 11, 0.1).unwrap();
        let b = featurize_speech(&[4, 9, 7], &cfg, 11, 0.1).unwrap();
        assert_eq!(a, b);
        let c = featurize_speech(&[4, 9, 7], &cfg, 12, 0.1).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn empty_tokens_rejected() {
        assert!(matches!(
            featurize_speech(&[], &ModelConfig::default(), 0, 0.1),
            Err(ModelError::EmptyInput)
        ));
    }
}
