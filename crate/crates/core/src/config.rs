use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};

/// How the backbone assigns position ids along an assembled sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScheme {
    /// Row `i` gets id `i`.
    Sequential,
    /// Every reference sample reuses the ids of the first one, so ids from
    /// `REF_TOK` on do not depend on the reference-set size.
    #[default]
    PerSample,
}

/// Architecture hyperparameters shared by the encoders and the backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Backbone depth; zero gives the identity backbone.
    pub layers: usize,
    pub mlp_ratio: usize,
    /// Learned prompt vectors prepended to every sequence.
    pub prompt_len: usize,
    /// Capacity of the backbone's position table.
    pub max_seq_len: usize,
    pub positions: PositionScheme,

    /// Patch length `p` expected by the time-series branch.
    pub patch_len: usize,
    /// Channel count `d_raw` expected by the time-series branch.
    pub channels: usize,
    pub conv_layers: usize,
    pub instance_norm_eps: f64,

    /// Tabular width `F′`.
    pub f_prime: usize,
    /// Hidden width of the tabular perceptron; `None` means `2 · d_model`.
    pub tab_hidden: Option<usize>,

    /// Template ids `0..log_vocab` get their own embedding; everything else
    /// shares one rare bucket.
    pub log_vocab: usize,
    pub log_window: usize,
    pub log_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            heads: 4,
            layers: 4,
            mlp_ratio: 4,
            prompt_len: 8,
            max_seq_len: 256,
            positions: PositionScheme::PerSample,
            patch_len: 16,
            channels: 2,
            conv_layers: 1,
            instance_norm_eps: 1e-5,
            f_prime: 16,
            tab_hidden: None,
            log_vocab: 64,
            log_window: 16,
            log_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn tab_hidden(&self) -> usize {
        self.tab_hidden.unwrap_or(2 * self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IcadError::Config(msg));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.mlp_ratio == 0 || self.prompt_len == 0 {
            return bad("mlp_ratio and prompt_len must be >= 1".into());
        }
        if self.patch_len == 0 || self.channels == 0 || self.conv_layers == 0 {
            return bad("patch_len, channels and conv_layers must be >= 1".into());
        }
        if self.f_prime == 0 || self.tab_hidden() == 0 {
            return bad("F_prime and the tabular hidden width must be >= 1".into());
        }
        if self.log_vocab == 0 || self.log_window == 0 {
            return bad("log_vocab and log_window must be >= 1".into());
        }
        if !(self.instance_norm_eps > 0.0) {
            return bad("instance_norm_eps must be > 0".into());
        }
        Ok(())
    }
}
