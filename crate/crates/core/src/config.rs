//! Run configuration: model dimensions, data parameters, and the two
//! curriculum stages.
//!
//! Two shipped profiles: [`RunConfig::desk`] trains in minutes on one CPU
//! core and is what the test suite uses; [`RunConfig::paper_defaults`]
//! records the published full-scale hyperparameters for documentation and
//! is not meant to be trained at desk scale.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Backbone embedding width D.
    pub dim: usize,
    /// Decoder depth.
    pub depth: usize,
    /// Attention heads (must divide `dim`).
    pub heads: usize,
    /// Feed-forward hidden width.
    pub ffn_dim: usize,
    /// LoRA rank R on the attention q/k/v/o projections.
    pub lora_rank: usize,
    /// Prompt-adapter bottleneck width K.
    pub prompt_bottleneck: usize,
    /// Hard cap on rendered sequence length.
    pub max_seq: usize,
    /// Seed for all frozen backbone and trainable-module init.
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Layers L in each synthetic encoder stack.
    pub layers: usize,
    /// Raw speech feature width fed to both encoders.
    pub feat_dim: usize,
    /// Semantic encoder output width.
    pub sem_dim: usize,
    /// Acoustic encoder output width.
    pub ac_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Conv kernel size (odd).
    pub kernel: usize,
    /// Bottleneck width inside each modality adapter.
    pub bottleneck: usize,
    /// Output width of each modality adapter (fusion input is twice this).
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Distinct payload symbols (at most 26).
    pub symbols: usize,
    /// Latent categories (at most 8).
    pub categories: usize,
    /// Symbols per utterance, inclusive bounds.
    pub min_symbols: usize,
    pub max_symbols: usize,
    /// Amplitude of the uniform per-entry feature noise.
    pub noise: f64,
    /// Summary keeps the first k distinct symbols.
    pub summary_k: usize,
    /// Translation applies s -> (s + shift) mod symbols.
    pub translate_shift: usize,
    /// Seed for the frozen feature tables.
    pub seed: u64,
    pub train_single_per_kind: usize,
    pub train_multi: usize,
    pub eval_per_kind: usize,
    pub eval_multi: usize,
    pub eval_cot: usize,
}

/// One curriculum stage: step budget, schedule, batch and mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub steps: usize,
    pub peak_lr: f64,
    /// Fraction of steps spent ramping linearly 0 -> peak.
    pub warmup_frac: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of multi-task samples in the stage mixture (0 for stage 1).
    pub multi_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub encoders: EncoderConfig,
    pub adapters: AdapterConfig,
    pub data: DataConfig,
    pub stage1: StageParams,
    pub stage2: StageParams,
}

impl RunConfig {
    /// Desk profile: minutes-scale training on one CPU core.
    pub fn desk() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                dim: 64,
                depth: 4,
                heads: 4,
                ffn_dim: 128,
                lora_rank: 4,
                prompt_bottleneck: 16,
                max_seq: 192,
                init_seed: 7,
            },
            encoders: EncoderConfig {
                layers: 4,
                feat_dim: 16,
                sem_dim: 24,
                ac_dim: 16,
                seed: 11,
            },
            adapters: AdapterConfig {
                kernel: 3,
                bottleneck: 8,
                out_dim: 32,
            },
            data: DataConfig {
                symbols: 26,
                categories: 4,
                min_symbols: 3,
                max_symbols: 6,
                noise: 0.05,
                summary_k: 2,
                translate_shift: 1,
                seed: 13,
                train_single_per_kind: 400,
                train_multi: 1200,
                eval_per_kind: 50,
                eval_multi: 60,
                eval_cot: 40,
            },
            stage1: StageParams {
                steps: 2000,
                peak_lr: 2e-3,
                warmup_frac: 0.1,
                batch_size: 8,
                seed: 1,
                multi_frac: 0.0,
            },
            stage2: StageParams {
                steps: 1000,
                peak_lr: 1e-3,
                warmup_frac: 0.1,
                batch_size: 8,
                seed: 2,
                multi_frac: 0.5,
            },
        }
    }

    /// Micro profile for the gradient suite: small enough that central
    /// finite differences over every trainable entry run in seconds.
    pub fn micro() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.model = ModelConfig {
            dim: 12,
            depth: 2,
            heads: 2,
            ffn_dim: 16,
            lora_rank: 2,
            prompt_bottleneck: 4,
            max_seq: 64,
            init_seed: 7,
        };
        cfg.encoders = EncoderConfig {
            layers: 2,
            feat_dim: 6,
            sem_dim: 8,
            ac_dim: 6,
            seed: 11,
        };
        cfg.adapters = AdapterConfig {
            kernel: 3,
            bottleneck: 4,
            out_dim: 6,
        };
        cfg.data.symbols = 6;
        cfg.data.categories = 2;
        cfg.data.min_symbols = 2;
        cfg.data.max_symbols = 3;
        cfg.stage1.steps = 8;
        cfg.stage1.batch_size = 2;
        cfg.stage2.steps = 8;
        cfg.stage2.batch_size = 2;
        cfg
    }

    /// Published full-scale hyperparameters (LoRA rank 32, prompt bottleneck
    /// 1024, 400K + 150K steps, peak lr 1e-4 with 10% warmup). Kept for
    /// documentation; not trainable at desk scale.
    pub fn paper_defaults() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                dim: 4096,
                depth: 32,
                heads: 32,
                ffn_dim: 11008,
                lora_rank: 32,
                prompt_bottleneck: 1024,
                max_seq: 4096,
                init_seed: 7,
            },
            encoders: EncoderConfig {
                layers: 32,
                feat_dim: 128,
                sem_dim: 1280,
                ac_dim: 768,
                seed: 11,
            },
            adapters: AdapterConfig {
                kernel: 3,
                bottleneck: 512,
                out_dim: 2048,
            },
            data: DataConfig {
                symbols: 26,
                categories: 4,
                min_symbols: 3,
                max_symbols: 6,
                noise: 0.05,
                summary_k: 2,
                translate_shift: 1,
                seed: 13,
                train_single_per_kind: 400,
                train_multi: 1200,
                eval_per_kind: 50,
                eval_multi: 60,
                eval_cot: 40,
            },
            stage1: StageParams {
                steps: 400_000,
                peak_lr: 1e-4,
                warmup_frac: 0.1,
                batch_size: 32,
                seed: 1,
                multi_frac: 0.0,
            },
            stage2: StageParams {
                steps: 150_000,
                peak_lr: 1e-4,
                warmup_frac: 0.1,
                batch_size: 32,
                seed: 2,
                multi_frac: 0.5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| -> Result<()> { Err(Error::Invalid { what: msg }) };
        let m = &self.model;
        if m.dim == 0 || m.depth == 0 || m.heads == 0 || m.ffn_dim == 0 || m.lora_rank == 0 {
            return fail(format!("config.model: all dims must be positive, got {m:?}"));
        }
        if m.dim % m.heads != 0 {
            return fail(format!(
                "config.model: heads {} must divide dim {}",
                m.heads, m.dim
            ));
        }
        if m.prompt_bottleneck == 0 {
            return fail("config.model.prompt_bottleneck must be >= 1".into());
        }
        let e = &self.encoders;
        if e.layers == 0 || e.feat_dim == 0 || e.sem_dim == 0 || e.ac_dim == 0 {
            return fail(format!("config.encoders: all dims must be positive, got {e:?}"));
        }
        let a = &self.adapters;
        if a.kernel % 2 == 0 || a.kernel == 0 {
            return fail(format!("config.adapters.kernel must be odd, got {}", a.kernel));
        }
        if a.bottleneck == 0 || a.out_dim == 0 {
            return fail("config.adapters: bottleneck/out_dim must be positive".into());
        }
        let d = &self.data;
        if d.symbols == 0 || d.symbols > 26 {
            return fail(format!("config.data.symbols must be in 1..=26, got {}", d.symbols));
        }
        if d.categories == 0 || d.categories > 8 {
            return fail(format!(
                "config.data.categories must be in 1..=8, got {}",
                d.categories
            ));
        }
        if d.min_symbols == 0 || d.min_symbols > d.max_symbols {
            return fail(format!(
                "config.data: min_symbols {} / max_symbols {} invalid",
                d.min_symbols, d.max_symbols
            ));
        }
        if d.summary_k == 0 {
            return fail("config.data.summary_k must be >= 1".into());
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if s.batch_size == 0 {
                return fail(format!("config.{name}.batch_size must be >= 1"));
            }
            if !(0.0..=1.0).contains(&s.warmup_frac) || !(0.0..=1.0).contains(&s.multi_frac) {
                return fail(format!("config.{name}: fractions must lie in [0, 1]"));
            }
            if !(s.peak_lr > 0.0) {
                return fail(format!("config.{name}.peak_lr must be > 0"));
            }
        }
        if self.stage1.multi_frac != 0.0 {
            return fail("config.stage1.multi_frac must be 0 (single-task stage)".into());
        }
        if self.stage2.multi_frac <= 0.0 {
            return fail("config.stage2.multi_frac must be > 0 (multi-task stage)".into());
        }
        Ok(())
    }

    /// Stable textual form used for fingerprinting (JSON-style, field order
    /// fixed by struct declaration).
    pub fn canonical_repr(&self) -> Vec<u8> {
        // serde_json lives std-side; a hand-rolled stable debug form keeps
        // the fingerprint computable here without pulling JSON into no_std.
        format!("{self:?}").into_bytes()
    }
}
