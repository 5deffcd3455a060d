//! Frozen decoder-only transformer backbone with LoRA on the attention
//! q/k/v/o projections.
//!
//! The base weights (embeddings, positions, attention, FFN, norms) are
//! frozen at init; only the low-rank factors train. Each projection
//! computes
//!
//! ```text
//! h = W0·x + (B·(A·x)) ⊙ r
//! ```
//!
//! where r is the prompt-dependent scaling vector broadcast across all
//! sequence positions (absent r means all-ones, i.e. plain LoRA). A single
//! r is shared by every layer and every projection type. B starts at zero
//! so the initial model equals the frozen base bit for bit.

use alloc::format;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{uniform_init, Binder, Param};
use crate::rng::Rng;
use crate::tensor::{Array, Graph, Var};

const NORM_EPS: f64 = 1e-6;
const MASKED: f64 = -1e30;
/// Embedding scale keeps initial logits small enough that the untrained
/// predictive distribution is near uniform (initial loss ≈ ln V).
const EMB_SCALE: f64 = 0.13;
/// Position rows are louder than token content so low-rank attention
/// updates can key on position early in training.
const POS_SCALE: f64 = 0.15;
/// Geometric frequency base of the sinusoidal position table.
const POS_BASE: f64 = 10_000.0;
/// Frozen q/k projections start quiet: base attention is near uniform and
/// the trainable low-rank factors shape the patterns from a clean slate.
const QK_QUIET: f64 = 0.25;
/// Frozen FFN output scale; keeps the random feed-forward from drowning
/// the residual stream.
const FFN_QUIET: f64 = 0.5;

/// Frozen sinusoidal position table. Any fixed positional shift is a
/// linear map on this code, which keeps relative attention patterns
/// expressible by the low-rank factors.
fn sinusoid_table(max_seq: usize, dim: usize) -> Array {
    let mut table = Array::zeros(&[max_seq, dim]);
    for p in 0..max_seq {
        for pair in 0..dim / 2 {
            let freq = math::powf(POS_BASE, -2.0 * pair as f64 / dim as f64);
            let angle = p as f64 * freq;
            table.set2(p, 2 * pair, POS_SCALE * libm::sin(angle));
            table.set2(p, 2 * pair + 1, POS_SCALE * libm::cos(angle));
        }
    }
    table
}

/// Frozen base matrix plus trainable low-rank factors for one projection.
pub struct AdaptiveLoraLayer {
    pub w0: Param,
    pub a: Param,
    pub b: Param,
    pub rank: usize,
}

impl AdaptiveLoraLayer {
    fn new(prefix: &str, rng: &mut Rng, dim: usize, rank: usize, w0_scale: f64) -> AdaptiveLoraLayer {
        let w0 = uniform_init(rng, &[dim, dim], w0_scale * math::sqrt(1.0 / dim as f64));
        let a = uniform_init(rng, &[rank, dim], math::sqrt(1.0 / dim as f64));
        AdaptiveLoraLayer {
            w0: Param::frozen(format!("{prefix}.w0"), w0),
            a: Param::trainable(format!("{prefix}.lora_a"), a),
            b: Param::trainable(format!("{prefix}.lora_b"), Array::zeros(&[dim, rank])),
            rank,
        }
    }

    fn params(&self) -> impl Iterator<Item = &Param> {
        [&self.w0, &self.a, &self.b].into_iter()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [&mut self.w0, &mut self.a, &mut self.b].into_iter()
    }
}

/// How a forward pass treats the low-rank branches.
#[derive(Clone, Copy)]
pub enum LoraMode {
    /// Base weights only; the low-rank term is not even evaluated.
    Disabled,
    /// W0·x + B·A·x (r = all-ones).
    Plain,
    /// W0·x + (B·A·x) ⊙ r with the given 1×D scaling row.
    Scaled(Var),
}

/// x is S×D row-major; applies one adaptive-LoRA projection.
pub fn lora_linear(
    binder: &mut Binder<'_>,
    x: Var,
    layer: &AdaptiveLoraLayer,
    mode: LoraMode,
) -> Result<Var> {
    let g = binder.graph();
    let base = g.matmul_nt(x, binder.bind(&layer.w0))?;
    match mode {
        LoraMode::Disabled => Ok(base),
        LoraMode::Plain => {
            let ax = g.matmul_nt(x, binder.bind(&layer.a))?;
            let bax = g.matmul_nt(ax, binder.bind(&layer.b))?;
            g.add(base, bax)
        }
        LoraMode::Scaled(r) => {
            let sr = g.shape_of(r);
            let d = g.shape_of(x)[1];
            if sr.iter().product::<usize>() != d {
                return Err(Error::ShapeMismatch {
                    op: "lora_linear scaling",
                    lhs: sr,
                    rhs: alloc::vec![d],
                });
            }
            let ax = g.matmul_nt(x, binder.bind(&layer.a))?;
            let bax = g.matmul_nt(ax, binder.bind(&layer.b))?;
            let scaled = g.mul_rows(bax, r)?;
            g.add(base, scaled)
        }
    }
}

struct Block {
    attn_gain: Param,
    ffn_gain: Param,
    q: AdaptiveLoraLayer,
    k: AdaptiveLoraLayer,
    v: AdaptiveLoraLayer,
    o: AdaptiveLoraLayer,
    ffn_in: Param,
    ffn_out: Param,
}

/// Decoder-only transformer with tied input/output embeddings and learned
/// (frozen) absolute positions.
pub struct Backbone {
    pub emb: Param,
    pub pos: Param,
    blocks: Vec<Block>,
    final_gain: Param,
    dim: usize,
    heads: usize,
    head_dim: usize,
    vocab: usize,
    max_seq: usize,
}

impl Backbone {
    pub fn new(cfg: &ModelConfig, vocab: usize, seed: u64) -> Backbone {
        let base = Rng::new(seed);
        let dim = cfg.dim;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let mut rng = base.derive(100 + l as u64);
            let prefix = format!("backbone.layers.{l}");
            blocks.push(Block {
                attn_gain: Param::frozen(format!("{prefix}.attn_norm"), Array::filled(&[dim], 1.0)),
                ffn_gain: Param::frozen(format!("{prefix}.ffn_norm"), Array::filled(&[dim], 1.0)),
                q: AdaptiveLoraLayer::new(&format!("{prefix}.attn.q"), &mut rng, dim, cfg.lora_rank, QK_QUIET),
                k: AdaptiveLoraLayer::new(&format!("{prefix}.attn.k"), &mut rng, dim, cfg.lora_rank, QK_QUIET),
                v: AdaptiveLoraLayer::new(&format!("{prefix}.attn.v"), &mut rng, dim, cfg.lora_rank, 1.0),
                o: AdaptiveLoraLayer::new(&format!("{prefix}.attn.o"), &mut rng, dim, cfg.lora_rank, 1.0),
                ffn_in: Param::frozen(
                    format!("{prefix}.ffn.w_in"),
                    uniform_init(&mut rng, &[cfg.ffn_dim, dim], math::sqrt(1.0 / dim as f64)),
                ),
                ffn_out: Param::frozen(
                    format!("{prefix}.ffn.w_out"),
                    uniform_init(
                        &mut rng,
                        &[dim, cfg.ffn_dim],
                        FFN_QUIET * math::sqrt(1.0 / cfg.ffn_dim as f64),
                    ),
                ),
            });
        }
        let mut rng = base.derive(1);
        Backbone {
            emb: Param::frozen(
                "backbone.emb",
                uniform_init(&mut rng, &[vocab, dim], EMB_SCALE),
            ),
            pos: Param::frozen("backbone.pos", sinusoid_table(cfg.max_seq, dim)),
            blocks,
            final_gain: Param::frozen("backbone.final_norm", Array::filled(&[dim], 1.0)),
            dim,
            heads: cfg.heads,
            head_dim: dim / cfg.heads,
            vocab,
            max_seq: cfg.max_seq,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_seq(&self) -> usize {
        self.max_seq
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        [&self.emb, &self.pos]
            .into_iter()
            .chain(self.blocks.iter().flat_map(|b| {
                [&b.attn_gain, &b.ffn_gain]
                    .into_iter()
                    .chain(b.q.params())
                    .chain(b.k.params())
                    .chain(b.v.params())
                    .chain(b.o.params())
                    .chain([&b.ffn_in, &b.ffn_out])
            }))
            .chain([&self.final_gain])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [&mut self.emb, &mut self.pos]
            .into_iter()
            .chain(self.blocks.iter_mut().flat_map(|b| {
                [&mut b.attn_gain, &mut b.ffn_gain]
                    .into_iter()
                    .chain(b.q.params_mut())
                    .chain(b.k.params_mut())
                    .chain(b.v.params_mut())
                    .chain(b.o.params_mut())
                    .chain([&mut b.ffn_in, &mut b.ffn_out])
            }))
            .chain([&mut self.final_gain])
    }

    /// Embeds token ids (rows of the tied table).
    pub fn embed_tokens(&self, binder: &mut Binder<'_>, ids: &[usize]) -> Result<Var> {
        binder
            .graph()
            .embedding_lookup(binder.bind(&self.emb), ids)
    }

    /// Adds the frozen position rows 0..S to an S×D sequence.
    pub fn add_positions(&self, binder: &mut Binder<'_>, x: Var) -> Result<Var> {
        let g = binder.graph();
        let s = g.shape_of(x)[0];
        if s > self.max_seq {
            return Err(Error::invalid(format!(
                "sequence length {s} exceeds max_seq {}",
                self.max_seq
            )));
        }
        let pos = binder.bind(&self.pos);
        let slice = g.slice_rows(pos, 0, s)?;
        g.add(x, slice)
    }

    fn causal_mask(g: &Graph, s: usize) -> Var {
        let mut m = Array::zeros(&[s, s]);
        for i in 0..s {
            for j in (i + 1)..s {
                m.set2(i, j, MASKED);
            }
        }
        g.constant(m)
    }

    /// Runs the block stack over an embedded sequence (positions already
    /// added); returns post-final-norm hidden states S×D.
    pub fn hidden_states(&self, binder: &mut Binder<'_>, rows: Var, mode: LoraMode) -> Result<Var> {
        let g = binder.graph();
        let s = g.shape_of(rows)[0];
        let mask = Self::causal_mask(g, s);
        let scale = 1.0 / math::sqrt(self.head_dim as f64);
        let mut x = rows;
        for block in &self.blocks {
            let xn = g.rms_norm(x, binder.bind(&block.attn_gain), NORM_EPS)?;
            let q = lora_linear(binder, xn, &block.q, mode)?;
            let k = lora_linear(binder, xn, &block.k, mode)?;
            let v = lora_linear(binder, xn, &block.v, mode)?;
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let off = h * self.head_dim;
                let qh = g.slice_cols(q, off, self.head_dim)?;
                let kh = g.slice_cols(k, off, self.head_dim)?;
                let vh = g.slice_cols(v, off, self.head_dim)?;
                let scores = g.scale(g.matmul_nt(qh, kh)?, scale)?;
                let scores = g.add(scores, mask)?;
                let probs = g.softmax(scores, 1)?;
                heads.push(g.matmul(probs, vh)?);
            }
            let ctx = g.concat_cols(&heads)?;
            let attn = lora_linear(binder, ctx, &block.o, mode)?;
            x = g.add(x, attn)?;

            let xn2 = g.rms_norm(x, binder.bind(&block.ffn_gain), NORM_EPS)?;
            let f = g.matmul_nt(xn2, binder.bind(&block.ffn_in))?;
            let f = g.gelu(f)?;
            let f = g.matmul_nt(f, binder.bind(&block.ffn_out))?;
            x = g.add(x, f)?;
        }
        g.rms_norm(x, binder.bind(&self.final_gain), NORM_EPS)
    }

    /// Tied-head logits: h · embᵀ.
    pub fn logits(&self, binder: &mut Binder<'_>, hidden: Var) -> Result<Var> {
        binder.graph().matmul_nt(hidden, binder.bind(&self.emb))
    }

    /// Text-only, base-weights-only causal pass over the prompt tokens;
    /// returns the final-layer (post final norm) hidden states M×D. LoRA
    /// and scaling are inactive by construction, so t never changes during
    /// training.
    pub fn prompt_hidden(&self, binder: &mut Binder<'_>, prompt_ids: &[usize]) -> Result<Var> {
        if prompt_ids.is_empty() {
            return Err(Error::EmptyInput {
                what: "prompt_hidden",
            });
        }
        let rows = self.embed_tokens(binder, prompt_ids)?;
        let rows = self.add_positions(binder, rows)?;
        self.hidden_states(binder, rows, LoraMode::Disabled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            dim: 12,
            depth: 2,
            heads: 2,
            ffn_dim: 20,
            lora_rank: 2,
            prompt_bottleneck: 4,
            max_seq: 32,
            init_seed: 5,
        }
    }

    #[test]
    fn lora_with_zero_b_equals_base_bitwise() {
        let bb = Backbone::new(&tiny_cfg(), 10, 3);
        let ids = [1usize, 4, 7, 2];

        let g1 = Graph::new();
        let mut b1 = Binder::training(&g1);
        let rows = bb.embed_tokens(&mut b1, &ids).unwrap();
        let rows = bb.add_positions(&mut b1, rows).unwrap();
        let h_base = bb.hidden_states(&mut b1, rows, LoraMode::Disabled).unwrap();

        let g2 = Graph::new();
        let mut b2 = Binder::training(&g2);
        let rows2 = bb.embed_tokens(&mut b2, &ids).unwrap();
        let rows2 = bb.add_positions(&mut b2, rows2).unwrap();
        let h_plain = bb.hidden_states(&mut b2, rows2, LoraMode::Plain).unwrap();

        assert!(g1.value(h_base).bit_eq(&g2.value(h_plain)));
    }

    #[test]
    fn lora_linear_matches_dense_eval() {
        // random D=6, R=2, 3 positions vs brute-force W0 x + (B A x) ⊙ r
        let mut rng = Rng::new(40);
        let mut layer = AdaptiveLoraLayer::new("t", &mut rng, 6, 2, 1.0);
        layer.b.value = uniform_init(&mut rng, &[6, 2], 0.7);
        let x = Array::from_fn2(3, 6, |_, _| rng.symmetric(1.0));
        let r = Array::from_fn2(1, 6, |_, _| rng.symmetric(1.0));

        let g = Graph::new();
        let mut b = Binder::training(&g);
        let xv = g.constant(x.clone());
        let rv = g.constant(r.clone());
        let out = g.value(lora_linear(&mut b, xv, &layer, LoraMode::Scaled(rv)).unwrap());

        for pos in 0..3 {
            for d in 0..6 {
                let mut w0x = 0.0;
                for j in 0..6 {
                    w0x += layer.w0.value.at2(d, j) * x.at2(pos, j);
                }
                let mut bax = 0.0;
                for rr in 0..2 {
                    let mut ax = 0.0;
                    for j in 0..6 {
                        ax += layer.a.value.at2(rr, j) * x.at2(pos, j);
                    }
                    bax += layer.b.value.at2(d, rr) * ax;
                }
                let want = w0x + bax * r.at2(0, d);
                let got = out.at2(pos, d);
                assert!((got - want).abs() < 1e-12, "({pos},{d}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn all_ones_scaling_is_plain_lora() {
        let mut rng = Rng::new(41);
        let mut layer = AdaptiveLoraLayer::new("t", &mut rng, 4, 2, 1.0);
        layer.b.value = uniform_init(&mut rng, &[4, 2], 0.5);
        let x = Array::from_fn2(2, 4, |_, _| rng.symmetric(1.0));

        let g = Graph::new();
        let mut b = Binder::training(&g);
        let xv = g.constant(x.clone());
        let ones = g.constant(Array::filled(&[1, 4], 1.0));
        let scaled = lora_linear(&mut b, xv, &layer, LoraMode::Scaled(ones)).unwrap();
        let plain = lora_linear(&mut b, xv, &layer, LoraMode::Plain).unwrap();
        assert!(g.value(scaled).bit_eq(&g.value(plain)));
    }

    #[test]
    fn scaling_dim_mismatch_fails() {
        let mut rng = Rng::new(42);
        let layer = AdaptiveLoraLayer::new("t", &mut rng, 4, 2, 1.0);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let x = g.constant(Array::zeros(&[2, 4]));
        let bad_r = g.constant(Array::filled(&[1, 3], 1.0));
        assert!(lora_linear(&mut b, x, &layer, LoraMode::Scaled(bad_r)).is_err());
    }

    #[test]
    fn causality_holds() {
        // changing a later token never changes logits at earlier positions
        let bb = Backbone::new(&tiny_cfg(), 10, 3);
        let run = |ids: &[usize]| {
            let g = Graph::new();
            let mut b = Binder::inference(&g);
            let rows = bb.embed_tokens(&mut b, ids).unwrap();
            let rows = bb.add_positions(&mut b, rows).unwrap();
            let h = bb.hidden_states(&mut b, rows, LoraMode::Plain).unwrap();
            g.value(bb.logits(&mut b, h).unwrap())
        };
        let a = run(&[1, 2, 3, 4]);
        let b = run(&[1, 2, 3, 9]);
        for pos in 0..3 {
            for v in 0..10 {
                assert_eq!(
                    a.at2(pos, v).to_bits(),
                    b.at2(pos, v).to_bits(),
                    "position {pos} affected by a later token"
                );
            }
        }
    }

    #[test]
    fn prompt_hidden_is_deterministic_and_shaped() {
        let bb = Backbone::new(&tiny_cfg(), 10, 3);
        let run = || {
            let g = Graph::new();
            let mut b = Binder::inference(&g);
            g.value(bb.prompt_hidden(&mut b, &[3, 1, 4]).unwrap())
        };
        let t1 = run();
        let t2 = run();
        assert!(t1.bit_eq(&t2));
        assert_eq!(t1.shape(), &[3, 12]);

        let g = Graph::new();
        let mut b = Binder::inference(&g);
        let one = g.value(bb.prompt_hidden(&mut b, &[5]).unwrap());
        assert_eq!(one.shape(), &[1, 12]);
        assert!(bb.prompt_hidden(&mut Binder::inference(&g), &[]).is_err());
    }

    #[test]
    fn prompt_hidden_unchanged_by_lora_factors() {
        let mut bb = Backbone::new(&tiny_cfg(), 10, 3);
        let before = {
            let g = Graph::new();
            let mut b = Binder::inference(&g);
            g.value(bb.prompt_hidden(&mut b, &[2, 6]).unwrap())
        };
        // simulate training having moved the LoRA factors
        let mut rng = Rng::new(99);
        for p in bb.params_mut() {
            if p.name.contains(".lora_") {
                for v in p.value.data_mut() {
                    *v = rng.symmetric(1.0);
                }
            }
        }
        let after = {
            let g = Graph::new();
            let mut b = Binder::inference(&g);
            g.value(bb.prompt_hidden(&mut b, &[2, 6]).unwrap())
        };
        assert!(before.bit_eq(&after));
    }

    #[test]
    fn sequence_over_max_seq_fails() {
        let bb = Backbone::new(&tiny_cfg(), 10, 3);
        let g = Graph::new();
        let mut b = Binder::inference(&g);
        let ids: Vec<usize> = (0..33).map(|i| i % 10).collect();
        let rows = bb.embed_tokens(&mut b, &ids).unwrap();
        assert!(bb.add_positions(&mut b, rows).is_err());
    }
}
