//! Chat template rendering.
//!
//! Token order:
//!
//! ```text
//! <bos> [INST] <<SYS>> helpful speech assistant <</SYS>>
//!   <SPEECH> <frame> x N </SPEECH> <instruction> [/INST] <target> <eos>
//! ```
//!
//! The `<frame>` positions mark where the fused speech embeddings are
//! substituted (N is the post-downsampling frame count). The loss mask is
//! 1 exactly on the target tokens and the end token; labels start as a
//! copy of the token stream so masked-out labels can be perturbed without
//! touching the model input.

use alloc::vec;
use alloc::vec::Vec;

use super::{InstructionSample, Vocab};
use crate::error::{Error, Result};

const SYS_WORDS: [&str; 3] = ["helpful", "speech", "assistant"];

/// Rendered template: tokens, a parallel label stream, the loss mask, the
/// speech placeholder span, and the instruction span (for the prompt
/// adapter).
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
    pub mask: Vec<f64>,
    pub speech_start: usize,
    pub speech_len: usize,
    pub prompt_start: usize,
    pub prompt_len: usize,
}

impl Rendered {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prompt_ids(&self) -> &[usize] {
        &self.tokens[self.prompt_start..self.prompt_start + self.prompt_len]
    }
}

fn prefix_tokens(
    vocab: &Vocab,
    prompt: &str,
    speech_frames: usize,
) -> Result<(Vec<usize>, usize, usize, usize)> {
    let mut tokens = vec![vocab.bos(), vocab.inst_open(), vocab.sys_open()];
    for w in SYS_WORDS {
        tokens.push(vocab.id(w)?);
    }
    tokens.push(vocab.sys_close());
    tokens.push(vocab.speech_open());
    let speech_start = tokens.len();
    tokens.extend(core::iter::repeat(vocab.frame()).take(speech_frames));
    tokens.push(vocab.speech_close());
    let prompt_start = tokens.len();
    let prompt_ids = vocab.tokenize(prompt)?;
    if prompt_ids.is_empty() {
        return Err(Error::EmptyInput {
            what: "render_template prompt",
        });
    }
    let prompt_len = prompt_ids.len();
    tokens.extend(prompt_ids);
    tokens.push(vocab.inst_close());
    Ok((tokens, speech_start, prompt_start, prompt_len))
}

/// Full training-order rendering with loss mask.
pub fn render_template(
    vocab: &Vocab,
    sample: &InstructionSample,
    speech_frames: usize,
    max_seq: usize,
) -> Result<Rendered> {
    let (mut tokens, speech_start, prompt_start, prompt_len) =
        prefix_tokens(vocab, &sample.prompt, speech_frames)?;
    let target_start = tokens.len();
    tokens.extend(vocab.tokenize(&sample.target)?);
    tokens.push(vocab.eos());
    if tokens.len() > max_seq {
        return Err(Error::invalid(alloc::format!(
            "rendered sequence length {} exceeds configured max {}",
            tokens.len(),
            max_seq
        )));
    }
    let mut mask = vec![0.0; tokens.len()];
    for m in mask.iter_mut().skip(target_start) {
        *m = 1.0;
    }
    Ok(Rendered {
        labels: tokens.clone(),
        tokens,
        mask,
        speech_start,
        speech_len: speech_frames,
        prompt_start,
        prompt_len,
    })
}

/// Generation prefix: everything up to and including `[/INST]`.
pub fn render_prefix(
    vocab: &Vocab,
    prompt: &str,
    speech_frames: usize,
    max_seq: usize,
) -> Result<Rendered> {
    let (tokens, speech_start, prompt_start, prompt_len) =
        prefix_tokens(vocab, prompt, speech_frames)?;
    if tokens.len() >= max_seq {
        return Err(Error::invalid(alloc::format!(
            "prompt prefix length {} leaves no room under max {}",
            tokens.len(),
            max_seq
        )));
    }
    let mask = vec![0.0; tokens.len()];
    Ok(Rendered {
        labels: tokens.clone(),
        tokens,
        mask,
        speech_start,
        speech_len: speech_frames,
        prompt_start,
        prompt_len,
    })
}
