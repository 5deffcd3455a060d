//! The assembled speech-text model: encoders -> modality adapters ->
//! fusion -> backbone with (optionally prompt-scaled) LoRA.
//!
//! One [`SpeechLm`] owns every parameter. Training builds one graph per
//! batch through [`SpeechLm::forward_loss`]; evaluation decodes greedily
//! with [`SpeechLm::generate`].

use alloc::string::String;
use alloc::vec::Vec;

use crate::adapters::{FusionProjector, ModalityAdapter};
use crate::backbone::{Backbone, LoraMode};
use crate::config::RunConfig;
use crate::encoders::{build_encoders, layer_weighted_sum, FeatureSequence, LayerWeights, SyntheticEncoder};
use crate::error::{Error, Result};
use crate::params::{Binder, Param};
use crate::prompt_adapter::{PromptAdapter, ScalingVector};
use crate::rng::Rng;
use crate::taskforge::{render_prefix, render_template, InstructionSample, Rendered, Vocab};
use crate::tensor::{Array, Graph, Var};

/// How forward passes treat LoRA and its prompt-dependent scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    /// Frozen base only; low-rank branches are not evaluated.
    Base,
    /// Plain LoRA (r = all-ones). The mixed single-task stage runs here.
    Plain,
    /// LoRA scaled by r from the prompt adapter (the advanced stage).
    Adaptive,
}

/// A rendered sample ready for the backbone: token/label/mask streams with
/// the speech placeholder span, plus the raw speech features.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub rendered: Rendered,
    pub speech: FeatureSequence,
}

impl ModelInput {
    pub fn prompt_ids(&self) -> &[usize] {
        self.rendered.prompt_ids()
    }

    /// Scrambles labels only at masked-out positions; the loss must not
    /// change (masking contract).
    pub fn perturb_masked_labels(&mut self, rng: &mut Rng, vocab_len: usize) {
        let rendered = &mut self.rendered;
        for (label, m) in rendered.labels.iter_mut().zip(rendered.mask.iter()) {
            if *m == 0.0 {
                *label = rng.below(vocab_len);
            }
        }
    }
}

pub struct LossOutput {
    pub loss: Var,
    pub logits: Var,
}

/// Dual-encoder speech LLM with prompt-aware LoRA scaling.
pub struct SpeechLm {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub semantic: SyntheticEncoder,
    pub acoustic: SyntheticEncoder,
    pub layer_weights: LayerWeights,
    pub sem_adapter: ModalityAdapter,
    pub ac_adapter: ModalityAdapter,
    pub fusion: FusionProjector,
    pub backbone: Backbone,
    pub prompt_adapter: PromptAdapter,
}

impl SpeechLm {
    pub fn new(config: &RunConfig) -> Result<SpeechLm> {
        config.validate()?;
        let vocab = Vocab::build(config.data.symbols, config.data.categories)?;
        let (semantic, acoustic, layer_weights) = build_encoders(&config.encoders);
        let seeds = Rng::new(config.model.init_seed);
        let sem_adapter = ModalityAdapter::new(
            "adapters.semantic",
            seeds.derive(1).next_u64(),
            config.encoders.sem_dim,
            &config.adapters,
        );
        let ac_adapter = ModalityAdapter::new(
            "adapters.acoustic",
            seeds.derive(2).next_u64(),
            config.encoders.ac_dim,
            &config.adapters,
        );
        let fusion = FusionProjector::new(
            "fusion",
            seeds.derive(3).next_u64(),
            config.adapters.out_dim,
            config.adapters.out_dim,
            config.model.dim,
        );
        let backbone = Backbone::new(&config.model, vocab.len(), seeds.derive(4).next_u64());
        let prompt_adapter = PromptAdapter::new(
            "prompt_adapter",
            seeds.derive(5).next_u64(),
            config.model.dim,
            config.model.prompt_bottleneck,
        );
        Ok(SpeechLm {
            config: config.clone(),
            vocab,
            semantic,
            acoustic,
            layer_weights,
            sem_adapter,
            ac_adapter,
            fusion,
            backbone,
            prompt_adapter,
        })
    }

    /// Visits every parameter in a fixed order (checkpoint order).
    pub fn for_each_param(&self, f: &mut dyn FnMut(&Param)) {
        for p in self.semantic.params() {
            f(p);
        }
        for p in self.acoustic.params() {
            f(p);
        }
        f(&self.layer_weights.logits);
        for p in self.sem_adapter.params() {
            f(p);
        }
        for p in self.ac_adapter.params() {
            f(p);
        }
        for p in self.fusion.params() {
            f(p);
        }
        for p in self.backbone.params() {
            f(p);
        }
        for p in self.prompt_adapter.params() {
            f(p);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in self.semantic.params_mut() {
            f(p);
        }
        for p in self.acoustic.params_mut() {
            f(p);
        }
        f(&mut self.layer_weights.logits);
        for p in self.sem_adapter.params_mut() {
            f(p);
        }
        for p in self.ac_adapter.params_mut() {
            f(p);
        }
        for p in self.fusion.params_mut() {
            f(p);
        }
        for p in self.backbone.params_mut() {
            f(p);
        }
        for p in self.prompt_adapter.params_mut() {
            f(p);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |p| names.push(p.name.clone()));
        names
    }

    pub fn snapshot(&self) -> Vec<(String, Array, bool)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |p| out.push((p.name.clone(), p.value.clone(), p.frozen)));
        out
    }

    /// Fused speech rows (frames×D) on the graph; gradients flow into both
    /// adapters, the fusion projector, and the acoustic layer weights.
    pub fn speech_rows(&self, binder: &mut Binder<'_>, speech: &FeatureSequence) -> Result<Var> {
        let g = binder.graph();
        let sem_seq = self.semantic.encode_last(speech)?;
        let sem_in = g.constant(sem_seq.features);
        let (sem_out, _) = self.sem_adapter.adapt(binder, sem_in, sem_seq.stride)?;
        let ac_layers = self.acoustic.encode_all(speech)?;
        let ac_mix = layer_weighted_sum(binder, &self.layer_weights, &ac_layers)?;
        let (ac_out, _) = self.ac_adapter.adapt(binder, ac_mix, speech.stride)?;
        self.fusion.fuse(binder, sem_out, ac_out)
    }

    /// Renders a sample into model-ready form.
    pub fn prepare(&self, sample: &InstructionSample) -> Result<ModelInput> {
        let n = ModalityAdapter::out_frames(sample.speech.frames());
        let rendered = render_template(&self.vocab, sample, n, self.config.model.max_seq)?;
        Ok(ModelInput {
            rendered,
            speech: sample.speech.clone(),
        })
    }

    /// r as an on-graph var (1×D) for a prompt.
    pub fn scaling_var(&self, binder: &mut Binder<'_>, prompt_ids: &[usize]) -> Result<Var> {
        let t = self.backbone.prompt_hidden(binder, prompt_ids)?;
        self.prompt_adapter.scaling_from_hidden(binder, t)
    }

    /// r as plain values, computed on a throwaway graph.
    pub fn scaling_vector(&self, prompt_ids: &[usize]) -> Result<ScalingVector> {
        let g = Graph::new();
        let mut binder = Binder::inference(&g);
        let r = self.scaling_var(&mut binder, prompt_ids)?;
        Ok(ScalingVector { r: g.value(r) })
    }

    /// Prompt hidden states t (M×D) as plain values.
    pub fn prompt_hidden_array(&self, prompt_ids: &[usize]) -> Result<Array> {
        let g = Graph::new();
        let mut binder = Binder::inference(&g);
        let t = self.backbone.prompt_hidden(&mut binder, prompt_ids)?;
        Ok(g.value(t))
    }

    fn lora_mode(&self, binder: &mut Binder<'_>, mode: ScalingMode, prompt_ids: &[usize]) -> Result<LoraMode> {
        Ok(match mode {
            ScalingMode::Base => LoraMode::Disabled,
            ScalingMode::Plain => LoraMode::Plain,
            ScalingMode::Adaptive => LoraMode::Scaled(self.scaling_var(binder, prompt_ids)?),
        })
    }

    /// Assembles embedded rows for a token stream whose speech span is
    /// substituted by `speech_rows`, then adds positions.
    fn assemble_rows(
        &self,
        binder: &mut Binder<'_>,
        tokens: &[usize],
        speech_start: usize,
        speech_len: usize,
        speech_rows: Var,
    ) -> Result<Var> {
        let g = binder.graph();
        let prefix = &tokens[..speech_start];
        let suffix = &tokens[speech_start + speech_len..];
        let emb_prefix = self.backbone.embed_tokens(binder, prefix)?;
        let emb_suffix = self.backbone.embed_tokens(binder, suffix)?;
        let rows = g.concat_rows(&[emb_prefix, speech_rows, emb_suffix])?;
        self.backbone.add_positions(binder, rows)
    }

    /// Masked next-token loss over one rendered sample.
    pub fn forward_loss(
        &self,
        binder: &mut Binder<'_>,
        input: &ModelInput,
        mode: ScalingMode,
    ) -> Result<LossOutput> {
        let g = binder.graph();
        let r = input.rendered.clone();
        let lora = self.lora_mode(binder, mode, r.prompt_ids())?;
        let speech_rows = self.speech_rows(binder, &input.speech)?;
        let got = g.shape_of(speech_rows)[0];
        if got != r.speech_len {
            return Err(Error::invalid(alloc::format!(
                "speech placeholder span {} does not match fused frames {got}",
                r.speech_len
            )));
        }
        let rows = self.assemble_rows(binder, &r.tokens, r.speech_start, r.speech_len, speech_rows)?;
        let hidden = self.backbone.hidden_states(binder, rows, lora)?;
        let logits = self.backbone.logits(binder, hidden)?;
        let s = r.tokens.len();
        let pred = g.slice_rows(logits, 0, s - 1)?;
        let loss = g.masked_cross_entropy(pred, &r.labels[1..], &r.mask[1..])?;
        Ok(LossOutput { loss, logits })
    }

    /// Greedy decoding: builds the template prefix around the speech clip
    /// and argmax-decodes until `<eos>` or `max_new` tokens. Returns the
    /// generated ids (including the end token when one is produced).
    pub fn generate(
        &self,
        speech: &FeatureSequence,
        prompt: &str,
        mode: ScalingMode,
        max_new: usize,
    ) -> Result<Vec<usize>> {
        if max_new == 0 {
            return Err(Error::invalid("generate: max_new must be >= 1"));
        }
        let n = ModalityAdapter::out_frames(speech.frames());
        let prefix = render_prefix(&self.vocab, prompt, n, self.config.model.max_seq)?;

        // speech rows and r are prompt-level constants across decode steps
        let speech_arr = {
            let g = Graph::new();
            let mut binder = Binder::inference(&g);
            let v = self.speech_rows(&mut binder, speech)?;
            g.value(v)
        };
        let r_arr = match mode {
            ScalingMode::Adaptive => Some(self.scaling_vector(prefix.prompt_ids())?.r),
            _ => None,
        };

        let mut tokens = prefix.tokens.clone();
        let mut generated = Vec::new();
        while generated.len() < max_new {
            if tokens.len() + 1 > self.config.model.max_seq {
                break;
            }
            let g = Graph::new();
            let mut binder = Binder::inference(&g);
            let lora = match mode {
                ScalingMode::Base => LoraMode::Disabled,
                ScalingMode::Plain => LoraMode::Plain,
                ScalingMode::Adaptive => {
                    LoraMode::Scaled(g.constant(r_arr.as_ref().expect("r computed").clone()))
                }
            };
            let speech_rows = g.constant(speech_arr.clone());
            let rows =
                self.assemble_rows(&mut binder, &tokens, prefix.speech_start, prefix.speech_len, speech_rows)?;
            let hidden = self.backbone.hidden_states(&mut binder, rows, lora)?;
            let logits = self.backbone.logits(&mut binder, hidden)?;
            let logits = g.value(logits);
            let last = logits.row(logits.rows() - 1);
            let next = argmax(last);
            tokens.push(next);
            generated.push(next);
            if next == self.vocab.eos() {
                break;
            }
        }
        Ok(generated)
    }

    /// Generated ids with a trailing `<eos>` stripped.
    pub fn strip_eos<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        match ids.last() {
            Some(&t) if t == self.vocab.eos() => &ids[..ids.len() - 1],
            _ => ids,
        }
    }
}

/// Deterministic argmax; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::taskforge::{Split, TaskForge, TaskKind};

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.model.dim = 16;
        cfg.model.depth = 2;
        cfg.model.heads = 2;
        cfg.model.ffn_dim = 24;
        cfg.model.lora_rank = 2;
        cfg.model.prompt_bottleneck = 4;
        cfg.encoders.layers = 2;
        cfg.encoders.feat_dim = 8;
        cfg.encoders.sem_dim = 10;
        cfg.encoders.ac_dim = 6;
        cfg.adapters.out_dim = 8;
        cfg.adapters.bottleneck = 4;
        cfg
    }

    fn model_and_forge() -> (SpeechLm, TaskForge) {
        let cfg = small_config();
        let model = SpeechLm::new(&cfg).unwrap();
        let forge = TaskForge::new(&cfg.data, cfg.encoders.feat_dim).unwrap();
        (model, forge)
    }

    #[test]
    fn initial_loss_is_near_ln_vocab() {
        let (model, forge) = model_and_forge();
        let v = model.vocab.len() as f64;
        let mut acc = 0.0;
        let mut n = 0.0;
        for seed in 0..4 {
            let sample = forge.synth_single(TaskKind::Transcribe, seed, Split::Train);
            let input = model.prepare(&sample).unwrap();
            let g = Graph::new();
            let mut binder = Binder::training(&g);
            let out = model.forward_loss(&mut binder, &input, ScalingMode::Plain).unwrap();
            acc += g.value(out.loss).item();
            n += 1.0;
        }
        let mean = acc / n;
        let lnv = math::ln(v);
        assert!(
            (mean - lnv).abs() / lnv < 0.05,
            "initial loss {mean} not within 5% of ln V = {lnv}"
        );
    }

    #[test]
    fn mask_zero_label_perturbation_leaves_loss_bit_identical() {
        let (model, forge) = model_and_forge();
        let sample = forge.synth_single(TaskKind::Classify, 5, Split::Train);
        let mut input = model.prepare(&sample).unwrap();

        let loss_of = |input: &ModelInput| {
            let g = Graph::new();
            let mut binder = Binder::training(&g);
            let out = model.forward_loss(&mut binder, input, ScalingMode::Plain).unwrap();
            g.value(out.loss).item()
        };
        let base = loss_of(&input);
        let mut rng = Rng::new(17);
        input.perturb_masked_labels(&mut rng, model.vocab.len());
        let fuzzed = loss_of(&input);
        assert_eq!(base.to_bits(), fuzzed.to_bits());
    }

    #[test]
    fn single_target_token_loss_matches_hand_computation() {
        // a 3-entry logit row with mask on one position: loss = -log softmax[t]
        let g = Graph::new();
        let logits = g.constant(Array::from_vec(&[1, 3], alloc::vec![0.2, -0.4, 1.1]).unwrap());
        let loss = g.masked_cross_entropy(logits, &[2], &[1.0]).unwrap();
        let row = [0.2, -0.4, 1.1];
        let lse = {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            m + math::ln(row.iter().map(|&v| math::exp(v - m)).sum::<f64>())
        };
        let want = lse - 1.1;
        assert!((g.value(loss).item() - want).abs() < 1e-14);
    }

    #[test]
    fn generation_is_deterministic_and_respects_max_new() {
        let (model, forge) = model_and_forge();
        let sample = forge.synth_single(TaskKind::Transcribe, 2, Split::Train);
        let one = model
            .generate(&sample.speech, &sample.prompt, ScalingMode::Plain, 1)
            .unwrap();
        assert_eq!(one.len(), 1);
        let a = model
            .generate(&sample.speech, &sample.prompt, ScalingMode::Plain, 8)
            .unwrap();
        let b = model
            .generate(&sample.speech, &sample.prompt, ScalingMode::Plain, 8)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lora_generation_matches_base_token_for_token() {
        let (mut model, forge) = model_and_forge();
        // move A freely; keep B zero so the low-rank term stays zero
        let mut rng = Rng::new(31);
        model.for_each_param_mut(&mut |p| {
            if p.name.ends_with(".lora_a") {
                for v in p.value.data_mut() {
                    *v = rng.symmetric(0.8);
                }
            }
        });
        let sample = forge.synth_single(TaskKind::Sqa, 3, Split::Train);
        let plain = model
            .generate(&sample.speech, &sample.prompt, ScalingMode::Plain, 10)
            .unwrap();
        let base = model
            .generate(&sample.speech, &sample.prompt, ScalingMode::Base, 10)
            .unwrap();
        assert_eq!(plain, base);
    }

    #[test]
    fn scaling_vector_is_deterministic_per_prompt() {
        let (model, forge) = model_and_forge();
        let s = forge.synth_single(TaskKind::Translate, 9, Split::Train);
        let ids = model.vocab.tokenize(&s.prompt).unwrap();
        let a = model.scaling_vector(&ids).unwrap();
        let b = model.scaling_vector(&ids).unwrap();
        assert!(a.r.bit_eq(&b.r));
        assert_eq!(a.dim(), model.config.model.dim);
    }

    #[test]
    fn adaptive_forward_runs_and_differs_from_plain_once_lora_is_nonzero() {
        let (mut model, forge) = model_and_forge();
        let mut rng = Rng::new(77);
        model.for_each_param_mut(&mut |p| {
            if p.name.contains(".lora_") {
                for v in p.value.data_mut() {
                    *v = rng.symmetric(0.4);
                }
            }
        });
        let sample = forge.synth_single(TaskKind::Transcribe, 6, Split::Train);
        let input = model.prepare(&sample).unwrap();
        let loss = |mode: ScalingMode| {
            let g = Graph::new();
            let mut binder = Binder::training(&g);
            let out = model.forward_loss(&mut binder, &input, mode).unwrap();
            g.value(out.loss).item()
        };
        let plain = loss(ScalingMode::Plain);
        let adaptive = loss(ScalingMode::Adaptive);
        assert!(plain.is_finite() && adaptive.is_finite());
        assert_ne!(plain.to_bits(), adaptive.to_bits());
    }
}
