use serde::{Deserialize, Serialize};

use super::ModelError;

/// Every architectural dimension of the encoder–decoder and its adapters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub mel_bins: usize,
    /// Number of discrete acoustic units (k-means clusters).
    pub unit_count: usize,
    pub span_len: usize,
    pub mix_prob: f64,
    pub conv_channels: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub codebook_groups: usize,
    pub codebook_entries: usize,
    pub codebook_tau_start: f64,
    pub codebook_tau_end: f64,
    /// Per-update multiplicative temperature decay.
    pub codebook_tau_decay: f64,
    pub reduction_factor: usize,
    pub speech_prenet_dim: usize,
    pub prenet_dropout: f64,
    pub postnet_channels: usize,
    pub postnet_layers: usize,
    pub postnet_kernel: usize,
    pub n_speakers: usize,
}

const KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
const STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

impl ModelConfig {
    /// Desk-scale default.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 128,
            dropout: 0.0,
            vocab_size,
            mel_bins: 80,
            unit_count: 16,
            span_len: 10,
            mix_prob: 0.1,
            conv_channels: 32,
            conv_kernels: KERNELS.to_vec(),
            conv_strides: STRIDES.to_vec(),
            codebook_groups: 2,
            codebook_entries: 100,
            codebook_tau_start: 1.0,
            codebook_tau_end: 0.5,
            codebook_tau_decay: 0.999,
            reduction_factor: 1,
            speech_prenet_dim: 64,
            prenet_dropout: 0.05,
            postnet_channels: 32,
            postnet_layers: 5,
            postnet_kernel: 5,
            n_speakers: 1,
        }
    }

    /// Base-size preset: 768-wide, 12 encoder and 6 decoder layers.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            d_model: 768,
            n_heads: 12,
            enc_layers: 12,
            dec_layers: 6,
            ffn_dim: 3072,
            dropout: 0.1,
            vocab_size,
            mel_bins: 80,
            unit_count: 500,
            span_len: 10,
            mix_prob: 0.1,
            conv_channels: 512,
            conv_kernels: KERNELS.to_vec(),
            conv_strides: STRIDES.to_vec(),
            codebook_groups: 2,
            codebook_entries: 100,
            codebook_tau_start: 1.0,
            codebook_tau_end: 0.5,
            codebook_tau_decay: 0.999_995,
            reduction_factor: 1,
            speech_prenet_dim: 256,
            prenet_dropout: 0.5,
            postnet_channels: 256,
            postnet_layers: 5,
            postnet_kernel: 5,
            n_speakers: 1,
        }
    }

    /// Smallest useful network, for finite-difference checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            d_model: 8,
            n_heads: 1,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 16,
            unit_count: 4,
            conv_channels: 4,
            codebook_entries: 4,
            speech_prenet_dim: 8,
            postnet_channels: 4,
            postnet_layers: 2,
            mel_bins: 8,
            mix_prob: 0.0,
            ..Self::toy(vocab_size)
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy(vocab_size)),
            "paper" => Some(Self::paper(vocab_size)),
            "tiny" => Some(Self::tiny(vocab_size)),
            _ => None,
        }
    }

    /// Waveform samples per encoder frame.
    pub fn frame_hop(&self) -> usize {
        self.conv_strides.iter().product()
    }

    /// Encoder frames produced from `samples` waveform samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.frame_hop()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn group_dim(&self) -> usize {
        self.d_model / self.codebook_groups
    }

    /// Codebook temperature after `step` updates.
    pub fn codebook_tau(&self, step: u64) -> f64 {
        (self.codebook_tau_start * self.codebook_tau_decay.powf(step as f64)).max(self.codebook_tau_end)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        let counts = [
            self.d_model,
            self.n_heads,
            self.enc_layers,
            self.dec_layers,
            self.ffn_dim,
            self.vocab_size,
            self.mel_bins,
            self.unit_count,
            self.span_len,
            self.conv_channels,
            self.codebook_groups,
            self.codebook_entries,
            self.reduction_factor,
            self.speech_prenet_dim,
            self.postnet_channels,
            self.postnet_layers,
            self.postnet_kernel,
            self.n_speakers,
        ];
        if counts.contains(&0) {
            return bad("all sizes and counts must be at least 1");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.d_model % self.codebook_groups != 0 {
            return bad("d_model must be divisible by codebook_groups");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.prenet_dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return bad("mix_prob must lie in [0, 1]");
        }
        if self.conv_kernels.is_empty() || self.conv_kernels.len() != self.conv_strides.len() {
            return bad("conv_kernels and conv_strides must be non-empty and equally long");
        }
        if self.conv_kernels.iter().zip(&self.conv_strides).any(|(&k, &s)| s == 0 || k < s) {
            return bad("every conv kernel must be at least its stride");
        }
        if self.reduction_factor != 1 {
            return bad("only reduction_factor 1 is supported");
        }
        if self.postnet_kernel % 2 == 0 {
            return bad("postnet_kernel must be odd");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["toy", "paper", "tiny"] {
            let c = ModelConfig::preset(name, 80).unwrap();
            c.validate().unwrap();
            assert_eq!(c.frame_hop(), 320);
        }
        assert_eq!(ModelConfig::toy(80).frames_for(16000), 50);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::toy(80);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(80);
        c.mix_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(80);
        c.enc_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn temperature_decays_to_floor() {
        let c = ModelConfig::toy(80);
        assert_eq!(c.codebook_tau(0), 1.0);
        assert!(c.codebook_tau(100) < 1.0);
        assert_eq!(c.codebook_tau(1_000_000), 0.5);
    }
}
