//! Deterministic synthetic-task generators and instruction assembly.
//!
//! Every sample is a pure function of (task kinds, seed, config): the
//! latent symbol sequence and category determine the speech features, the
//! ground-truth answer, and the rendered prompt/target text. Multi-task
//! samples join sub-prompts with ordinal connectives and format their
//! targets as one parsable section per sub-task:
//!
//! ```text
//! ### task <i> : <echo> => <answer>
//! ```
//!
//! one line per section. Single-task targets are the bare answer.

mod prompts;
mod template;
mod vocab;

pub use prompts::{bank, banks_disjoint, chain_bank, PromptTemplate, DIRECT_XSUM_BANK};
pub use template::{render_prefix, render_template, Rendered};
pub use vocab::Vocab;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::encoders::FeatureSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Array;

/// Feature frames generated per latent symbol; two stride-2 convolutions
/// collapse them to one post-downsampling frame per symbol.
pub const FRAMES_PER_SYMBOL: usize = 4;

/// Seed namespaces keeping generated populations disjoint.
pub const SEED_EVAL_BASE: u64 = 10_000_000;
pub const SEED_COT_BASE: u64 = 20_000_000;
pub const SEED_ROBUST_BASE: u64 = 30_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// ASR analog: emit the latent symbols.
    Transcribe,
    /// ST analog: emit the symbols under a fixed alphabet shift.
    Translate,
    /// ER/SV analog: emit the latent category injected into the features.
    Classify,
    /// Positional question about the symbol sequence.
    Sqa,
    /// Text-only instruction; the audio is ignored.
    TextIt,
    /// Emit the first k distinct symbols.
    Summarize,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Transcribe,
        TaskKind::Translate,
        TaskKind::Classify,
        TaskKind::Sqa,
        TaskKind::TextIt,
        TaskKind::Summarize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Transcribe => "transcribe",
            TaskKind::Translate => "translate",
            TaskKind::Classify => "classify",
            TaskKind::Sqa => "sqa",
            TaskKind::TextIt => "text_it",
            TaskKind::Summarize => "summarize",
        }
    }

    pub fn from_str(s: &str) -> Result<TaskKind> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task kind {s:?}")))
    }

    fn index(self) -> u64 {
        TaskKind::ALL.iter().position(|&k| k == self).unwrap() as u64
    }

    fn uses_audio(self) -> bool {
        !matches!(self, TaskKind::TextIt)
    }
}

/// Which paraphrase bank a sample's prompts were drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }

    pub fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }

    fn label(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Heldout => 1,
        }
    }
}

/// A sub-task to synthesize: its kind, and whether a Translate step applies
/// to the summary instead of the whole transcript (the chain-final step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub translate_summary: bool,
}

impl TaskSpec {
    pub fn plain(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            translate_summary: false,
        }
    }

    pub fn chain_final() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Translate,
            translate_summary: true,
        }
    }

    pub fn name(self) -> &'static str {
        if self.translate_summary {
            "translate_summary"
        } else {
            self.kind.as_str()
        }
    }

    pub fn from_name(s: &str) -> Result<TaskSpec> {
        if s == "translate_summary" {
            Ok(TaskSpec::chain_final())
        } else {
            Ok(TaskSpec::plain(TaskKind::from_str(s)?))
        }
    }
}

/// The transcribe -> summarize -> translate-the-summary chain.
pub const CHAIN_SPECS: [TaskSpec; 3] = [
    TaskSpec {
        kind: TaskKind::Transcribe,
        translate_summary: false,
    },
    TaskSpec {
        kind: TaskKind::Summarize,
        translate_summary: false,
    },
    TaskSpec {
        kind: TaskKind::Translate,
        translate_summary: true,
    },
];

/// One sub-instruction with its rendered prompt, echo phrase, and
/// ground-truth answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTask {
    pub kind: TaskKind,
    pub translate_summary: bool,
    pub prompt: String,
    pub echo: String,
    pub answer: String,
}

impl SubTask {
    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.kind,
            translate_summary: self.translate_summary,
        }
    }
}

/// One training/eval example.
#[derive(Debug, Clone)]
pub struct InstructionSample {
    pub symbols: Vec<u8>,
    pub category: u8,
    pub speech: FeatureSequence,
    pub prompt: String,
    pub target: String,
    pub sub_tasks: Vec<SubTask>,
    pub split: Split,
    pub seed: u64,
    pub tags: Vec<String>,
}

impl InstructionSample {
    pub fn is_multi(&self) -> bool {
        self.tags.iter().any(|t| t == "multi")
    }

    pub fn k(&self) -> usize {
        self.sub_tasks.len()
    }
}

/// Serialized dataset record; speech features are regenerated from
/// (tasks, seed, split) on load and the stored text doubles as an
/// integrity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub symbols: String,
    pub category: String,
    pub tasks: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub split: String,
    pub seed: u64,
}

/// Deterministic sample generator over the symbolic task family.
pub struct TaskForge {
    cfg: DataConfig,
    vocab: Vocab,
    sym_table: Array,
    cat_table: Array,
}

// rng stream labels
const L_LATENTS: u64 = 1;
const L_SPEECH: u64 = 2;
const L_PROMPT: u64 = 3;
const L_PARAMS: u64 = 4;
const L_CONNECTIVE: u64 = 5;
const L_SINGLE: u64 = 100;
const L_MULTI: u64 = 200;

impl TaskForge {
    pub fn new(cfg: &DataConfig, feat_dim: usize) -> Result<TaskForge> {
        let vocab = Vocab::build(cfg.symbols, cfg.categories)?;
        let base = Rng::new(cfg.seed);
        let mut sym_rng = base.derive(0xf0);
        let mut cat_rng = base.derive(0xf1);
        let mut sym_table = Array::zeros(&[cfg.symbols, feat_dim]);
        for v in sym_table.data_mut() {
            *v = sym_rng.symmetric(1.0);
        }
        let mut cat_table = Array::zeros(&[cfg.categories, feat_dim]);
        for v in cat_table.data_mut() {
            *v = cat_rng.symmetric(0.6);
        }
        Ok(TaskForge {
            cfg: cfg.clone(),
            vocab,
            sym_table,
            cat_table,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    // ---- ground truth ---------------------------------------------------

    /// Fixed symbol permutation: s -> (s + shift) mod symbols.
    pub fn translate_symbols(&self, symbols: &[u8]) -> Vec<u8> {
        symbols
            .iter()
            .map(|&s| ((s as usize + self.cfg.translate_shift) % self.cfg.symbols) as u8)
            .collect()
    }

    /// First k distinct symbols in order of first appearance.
    pub fn summarize_symbols(&self, symbols: &[u8]) -> Vec<u8> {
        let mut seen = Vec::new();
        for &s in symbols {
            if !seen.contains(&s) {
                seen.push(s);
                if seen.len() == self.cfg.summary_k {
                    break;
                }
            }
        }
        seen
    }

    // ---- speech synthesis ------------------------------------------------

    /// Symbol embedding repeated over [`FRAMES_PER_SYMBOL`] frames, plus the
    /// category bias vector, plus seeded uniform noise.
    fn synth_speech(&self, symbols: &[u8], category: u8, rng: &mut Rng) -> FeatureSequence {
        let dim = self.sym_table.cols();
        let frames = symbols.len() * FRAMES_PER_SYMBOL;
        let mut feats = Array::zeros(&[frames, dim]);
        for (i, &s) in symbols.iter().enumerate() {
            for f in 0..FRAMES_PER_SYMBOL {
                let row = i * FRAMES_PER_SYMBOL + f;
                for d in 0..dim {
                    let v = self.sym_table.at2(s as usize, d)
                        + self.cat_table.at2(category as usize, d)
                        + self.cfg.noise * rng.symmetric(1.0);
                    feats.set2(row, d, v);
                }
            }
        }
        FeatureSequence::new(feats, 1)
    }

    /// Symbols are drawn without replacement (clips never repeat a symbol),
    /// so content-matching between a clip and its transcript is unambiguous.
    /// The summarize rule still handles repeats for callers that build them.
    fn sample_latents(&self, rng: &mut Rng) -> (Vec<u8>, u8) {
        let len = self.cfg.min_symbols + rng.below(self.cfg.max_symbols - self.cfg.min_symbols + 1);
        let len = len.min(self.cfg.symbols);
        let mut pool: Vec<u8> = (0..self.cfg.symbols as u8).collect();
        rng.shuffle(&mut pool);
        pool.truncate(len);
        let category = rng.below(self.cfg.categories) as u8;
        (pool, category)
    }

    // ---- sub-task assembly -----------------------------------------------

    fn make_subtask(
        &self,
        spec: TaskSpec,
        symbols: &[u8],
        category: u8,
        split: Split,
        prompt_rng: &mut Rng,
        param_rng: &mut Rng,
    ) -> SubTask {
        let template = if spec.translate_summary {
            *prompt_rng.pick(chain_bank(split))
        } else {
            *prompt_rng.pick(bank(spec.kind, split))
        };
        let mut prompt = template.text.to_string();
        let mut echo = template.echo.to_string();
        let answer = match (spec.kind, spec.translate_summary) {
            (TaskKind::Transcribe, _) => self.vocab.symbols_text(symbols),
            (TaskKind::Translate, false) => {
                self.vocab.symbols_text(&self.translate_symbols(symbols))
            }
            (TaskKind::Translate, true) => self
                .vocab
                .symbols_text(&self.translate_symbols(&self.summarize_symbols(symbols))),
            (TaskKind::Classify, _) => self.vocab.category_text(category).to_string(),
            (TaskKind::Sqa, _) => {
                let p = 1 + param_rng.below(symbols.len().min(9));
                let digit = format!("{p}");
                prompt = prompt.replace("{p}", &digit);
                echo = echo.replace("{p}", &digit);
                self.vocab.symbol_text(symbols[p - 1]).to_string()
            }
            (TaskKind::TextIt, _) => {
                let n = 2 + param_rng.below(2);
                let phrase: Vec<u8> = (0..n)
                    .map(|_| param_rng.below(self.cfg.symbols) as u8)
                    .collect();
                let text = self.vocab.symbols_text(&phrase);
                prompt = prompt.replace("{phrase}", &text);
                text
            }
            (TaskKind::Summarize, _) => self.vocab.symbols_text(&self.summarize_symbols(symbols)),
        };
        SubTask {
            kind: spec.kind,
            translate_summary: spec.translate_summary,
            prompt,
            echo,
            answer,
        }
    }

    fn rngs(&self, namespace: u64, seed: u64) -> (Rng, Rng, Rng, Rng, Rng) {
        let base = Rng::new(self.cfg.seed ^ 0xa77).derive(namespace).derive(seed);
        (
            base.derive(L_LATENTS),
            base.derive(L_SPEECH),
            base.derive(L_PROMPT),
            base.derive(L_PARAMS),
            base.derive(L_CONNECTIVE),
        )
    }

    // ---- generators -------------------------------------------------------

    /// One single-task sample, deterministic per (kind, seed, split).
    pub fn synth_single(&self, kind: TaskKind, seed: u64, split: Split) -> InstructionSample {
        let (mut lat, mut sp, mut pr, mut pa, _) = self.rngs(L_SINGLE + kind.index(), seed);
        let (symbols, category) = self.sample_latents(&mut lat);
        let speech = self.synth_speech(&symbols, category, &mut sp);
        let sub = self.make_subtask(
            TaskSpec::plain(kind),
            &symbols,
            category,
            split,
            &mut pr,
            &mut pa,
        );
        InstructionSample {
            symbols,
            category,
            speech,
            prompt: sub.prompt.clone(),
            target: sub.answer.clone(),
            sub_tasks: vec![sub],
            split,
            seed,
            tags: vec![format!("single:{}", kind.as_str())],
        }
    }

    /// Joins already-generated samples over one shared speech clip into a
    /// multi-task sample. A singleton list composes to the sample itself.
    pub fn compose_multitask(
        &self,
        parts: &[InstructionSample],
        rng: &mut Rng,
    ) -> Result<InstructionSample> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                what: "compose_multitask",
            });
        }
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        if parts.len() > 4 {
            return Err(Error::invalid(format!(
                "compose_multitask: {} sub-tasks, at most 4 supported",
                parts.len()
            )));
        }
        // all audio-using parts must share one clip
        let mut clip: Option<&InstructionSample> = None;
        for p in parts {
            if p.sub_tasks.iter().any(|s| s.kind.uses_audio()) {
                match clip {
                    None => clip = Some(p),
                    Some(c) => {
                        if !c.speech.features.bit_eq(&p.speech.features) {
                            return Err(Error::invalid(
                                "compose_multitask: audio sub-tasks reference different speech clips",
                            ));
                        }
                    }
                }
            }
        }
        let anchor = clip.unwrap_or(&parts[0]);

        let mut sub_tasks = Vec::new();
        let mut prompt = String::new();
        let mut target = String::new();
        for (i, p) in parts.iter().enumerate() {
            if p.sub_tasks.len() != 1 {
                return Err(Error::invalid(
                    "compose_multitask: parts must be single-task samples",
                ));
            }
            let sub = p.sub_tasks[0].clone();
            let conn = if i == 0 {
                rng.pick(prompts::CONNECTIVES_FIRST)
            } else if i + 1 == parts.len() {
                rng.pick(prompts::CONNECTIVES_LAST)
            } else {
                rng.pick(prompts::CONNECTIVES_MIDDLE)
            };
            if i > 0 {
                prompt.push_str(" ; ");
            }
            prompt.push_str(conn);
            prompt.push(' ');
            prompt.push_str(&sub.prompt);

            if i > 0 {
                target.push('\n');
            }
            target.push_str(&format!(
                "### task {} : {} => {}",
                i + 1,
                sub.echo,
                sub.answer
            ));
            sub_tasks.push(sub);
        }
        let mut tags = vec!["multi".to_string()];
        if sub_tasks.len() == CHAIN_SPECS.len()
            && sub_tasks
                .iter()
                .zip(CHAIN_SPECS.iter())
                .all(|(s, c)| s.spec() == *c)
        {
            tags.push("cot".to_string());
        }
        Ok(InstructionSample {
            symbols: anchor.symbols.clone(),
            category: anchor.category,
            speech: anchor.speech.clone(),
            prompt,
            target,
            sub_tasks,
            split: anchor.split,
            seed: anchor.seed,
            tags,
        })
    }

    /// A multi-task sample over one shared clip, deterministic per
    /// (specs, seed, split).
    pub fn synth_multi(
        &self,
        specs: &[TaskSpec],
        seed: u64,
        split: Split,
    ) -> Result<InstructionSample> {
        if specs.is_empty() || specs.len() > 4 {
            return Err(Error::invalid(format!(
                "synth_multi: {} sub-tasks, need 1..=4",
                specs.len()
            )));
        }
        let (mut lat, mut sp, mut pr, mut pa, mut conn) = self.rngs(L_MULTI, seed);
        let (symbols, category) = self.sample_latents(&mut lat);
        let speech = self.synth_speech(&symbols, category, &mut sp);
        let parts: Vec<InstructionSample> = specs
            .iter()
            .map(|&spec| {
                let sub = self.make_subtask(spec, &symbols, category, split, &mut pr, &mut pa);
                InstructionSample {
                    symbols: symbols.clone(),
                    category,
                    speech: speech.clone(),
                    prompt: sub.prompt.clone(),
                    target: sub.answer.clone(),
                    sub_tasks: vec![sub],
                    split,
                    seed,
                    tags: vec![format!("single:{}", spec.kind.as_str())],
                }
            })
            .collect();
        let mut composed = self.compose_multitask(&parts, &mut conn)?;
        composed.seed = seed;
        Ok(composed)
    }

    /// Direct translated-summary sample over the same latents as the chain
    /// sample with this seed. Single-task format; never used in training.
    pub fn synth_direct_xsum(&self, seed: u64) -> InstructionSample {
        let (mut lat, mut sp, mut pr, _, _) = self.rngs(L_MULTI, seed);
        let (symbols, category) = self.sample_latents(&mut lat);
        let speech = self.synth_speech(&symbols, category, &mut sp);
        let template = *pr.pick(DIRECT_XSUM_BANK);
        let answer = self
            .vocab
            .symbols_text(&self.translate_symbols(&self.summarize_symbols(&symbols)));
        let sub = SubTask {
            kind: TaskKind::Translate,
            translate_summary: true,
            prompt: template.text.to_string(),
            echo: template.echo.to_string(),
            answer: answer.clone(),
        };
        InstructionSample {
            symbols,
            category,
            speech,
            prompt: sub.prompt.clone(),
            target: answer,
            sub_tasks: vec![sub],
            split: Split::Train,
            seed,
            tags: vec!["non_cot".to_string()],
        }
    }

    /// Chain sample plus its direct one-shot counterpart: same speech, same
    /// final answer, three-step vs single-step prompting.
    pub fn make_cot_pair(&self, seed: u64) -> Result<(InstructionSample, InstructionSample)> {
        let cot = self.synth_multi(&CHAIN_SPECS, seed, Split::Train)?;
        let direct = self.synth_direct_xsum(seed);
        debug_assert_eq!(
            cot.sub_tasks.last().map(|s| s.answer.as_str()),
            Some(direct.target.as_str())
        );
        Ok((cot, direct))
    }

    /// Same underlying sample, prompts re-drawn from `split`'s bank.
    /// Content, answers, and speech are unchanged.
    pub fn reprompt(&self, sample: &InstructionSample, split: Split) -> Result<InstructionSample> {
        if sample.is_multi() {
            return Err(Error::invalid(
                "reprompt currently supports single-task samples only",
            ));
        }
        let sub = &sample.sub_tasks[0];
        let base = Rng::new(self.cfg.seed ^ 0xa77)
            .derive(0x9e9)
            .derive(sample.seed)
            .derive(split.label());
        let mut pr = base.derive(L_PROMPT);
        let template = if sub.translate_summary {
            *pr.pick(chain_bank(split))
        } else {
            *pr.pick(bank(sub.kind, split))
        };
        let mut prompt = template.text.to_string();
        // re-substitute the original parameters into the new paraphrase
        match sub.kind {
            TaskKind::Sqa => {
                let digit = sub
                    .echo
                    .split(' ')
                    .nth(1)
                    .expect("sqa echo carries its position");
                prompt = prompt.replace("{p}", digit);
            }
            TaskKind::TextIt => {
                prompt = prompt.replace("{phrase}", &sub.answer);
            }
            _ => {}
        }
        let mut out = sample.clone();
        out.split = split;
        out.prompt = prompt.clone();
        out.sub_tasks[0].prompt = prompt;
        Ok(out)
    }

    /// Random 2..=4 distinct-kind composition; about a quarter of draws are
    /// the fixed chain.
    pub fn multi_specs(&self, rng: &mut Rng) -> Vec<TaskSpec> {
        if rng.below(4) == 0 {
            return CHAIN_SPECS.to_vec();
        }
        let k = 2 + rng.below(3);
        let mut pool = TaskKind::ALL.to_vec();
        rng.shuffle(&mut pool);
        pool.truncate(k);
        pool.into_iter().map(TaskSpec::plain).collect()
    }

    // ---- dataset builders --------------------------------------------------

    /// Stage-1 pool: single-task only, uniform over kinds, train prompts.
    pub fn stage1_pool(&self, per_kind: usize, seed0: u64) -> Vec<InstructionSample> {
        let mut out = Vec::with_capacity(per_kind * TaskKind::ALL.len());
        for kind in TaskKind::ALL {
            for i in 0..per_kind {
                out.push(self.synth_single(kind, seed0 + i as u64, Split::Train));
            }
        }
        out
    }

    /// Stage-2 multi-task pool (single-task data comes from the stage-1
    /// pool; the trainer mixes the two by `multi_frac`).
    pub fn stage2_multi_pool(&self, count: usize, seed0: u64) -> Result<Vec<InstructionSample>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let seed = seed0 + i as u64;
            let mut spec_rng = Rng::new(self.cfg.seed ^ 0x5bec).derive(seed);
            let specs = self.multi_specs(&mut spec_rng);
            out.push(self.synth_multi(&specs, seed, Split::Train)?);
        }
        Ok(out)
    }

    /// Held-out single-task eval set: fresh content, seen (train-bank)
    /// prompts.
    pub fn eval_single_pool(&self, kind: TaskKind, count: usize, seed0: u64) -> Vec<InstructionSample> {
        (0..count)
            .map(|i| self.synth_single(kind, SEED_EVAL_BASE + seed0 + i as u64, Split::Train))
            .collect()
    }

    /// Held-out multi-task eval set.
    pub fn eval_multi_pool(&self, count: usize, seed0: u64) -> Result<Vec<InstructionSample>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let seed = SEED_EVAL_BASE + seed0 + i as u64;
            let mut spec_rng = Rng::new(self.cfg.seed ^ 0x5bec).derive(seed);
            let specs = self.multi_specs(&mut spec_rng);
            out.push(self.synth_multi(&specs, seed, Split::Train)?);
        }
        Ok(out)
    }

    /// Chain/direct eval pairs.
    pub fn cot_eval_pairs(
        &self,
        count: usize,
        seed0: u64,
    ) -> Result<Vec<(InstructionSample, InstructionSample)>> {
        (0..count)
            .map(|i| self.make_cot_pair(SEED_COT_BASE + seed0 + i as u64))
            .collect()
    }

    // ---- records -----------------------------------------------------------

    pub fn record(&self, sample: &InstructionSample) -> SampleRecord {
        SampleRecord {
            symbols: self.vocab.symbols_text(&sample.symbols),
            category: self.vocab.category_text(sample.category).to_string(),
            tasks: sample.sub_tasks.iter().map(|s| s.spec().name().to_string()).collect(),
            prompt: sample.prompt.clone(),
            target: sample.target.clone(),
            split: sample.split.as_str().to_string(),
            seed: sample.seed,
        }
    }

    /// Regenerates the sample a record describes and verifies the stored
    /// text matches the generator output. A lone `translate_summary` task
    /// identifies the direct one-shot sample.
    pub fn regenerate(&self, record: &SampleRecord) -> Result<InstructionSample> {
        let split = Split::from_str(&record.split)?;
        let specs: Vec<TaskSpec> = record
            .tasks
            .iter()
            .map(|t| TaskSpec::from_name(t))
            .collect::<Result<_>>()?;
        let sample = if specs.len() == 1 && specs[0].translate_summary {
            self.synth_direct_xsum(record.seed)
        } else if specs.len() == 1 {
            self.synth_single(specs[0].kind, record.seed, split)
        } else {
            self.synth_multi(&specs, record.seed, split)?
        };
        if sample.prompt != record.prompt || sample.target != record.target {
            return Err(Error::invalid(format!(
                "dataset record (seed {}) does not match regenerated sample; \
                 was it produced under a different config?",
                record.seed
            )));
        }
        Ok(sample)
    }
}
