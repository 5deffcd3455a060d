//! Prompt-aware LoRA weight adapter.
//!
//! Maps prompt hidden states t (M positions × D) to a per-dimension
//! scaling vector r:
//!
//! ```text
//! o = up( GeLU( down(t) ) )          bottleneck, D -> K -> D per position
//! a = o · w_attnᵀ                    one unnormalized logit per position
//! w = softmax(a) over positions
//! r = Σ_m w_m · o_m                  convex combination of the o columns
//! ```
//!
//! The softmax is taken over the M prompt positions, which is the only
//! axis that makes r a convex combination of hidden states. r broadcasts
//! across all sequence positions when it scales LoRA outputs.

use alloc::format;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{uniform_init, Binder, Param};
use crate::rng::Rng;
use crate::tensor::{Array, Var};

/// The prompt-dependent scaling vector r (1×D).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVector {
    pub r: Array,
}

impl ScalingVector {
    pub fn dim(&self) -> usize {
        self.r.cols()
    }

    /// All-ones scaling of a given width: plain LoRA.
    pub fn ones(dim: usize) -> ScalingVector {
        ScalingVector {
            r: Array::filled(&[1, dim], 1.0),
        }
    }
}

/// Bottleneck + attention-pooling parameters. All three blocks train only
/// during the advanced stage.
pub struct PromptAdapter {
    pub down: Param,
    pub up: Param,
    pub attn: Param,
    bottleneck: usize,
    dim: usize,
}

impl PromptAdapter {
    /// `up` starts small-random and `attn` starts at zero (uniform pooling),
    /// so the initial r is a small mean-pooled vector rather than exactly
    /// zero, which would silence the LoRA branch at the start of stage 2.
    pub fn new(prefix: &str, seed: u64, dim: usize, bottleneck: usize) -> PromptAdapter {
        let base = Rng::new(seed);
        PromptAdapter {
            down: Param::trainable(
                format!("{prefix}.down"),
                uniform_init(
                    &mut base.derive(1),
                    &[bottleneck, dim],
                    math::sqrt(1.0 / dim as f64),
                ),
            ),
            up: Param::trainable(
                format!("{prefix}.up"),
                uniform_init(
                    &mut base.derive(2),
                    &[dim, bottleneck],
                    math::sqrt(1.0 / bottleneck as f64),
                ),
            ),
            attn: Param::trainable(format!("{prefix}.attn"), Array::zeros(&[1, dim])),
            bottleneck,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.bottleneck
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        [&self.down, &self.up, &self.attn].into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [&mut self.down, &mut self.up, &mut self.attn].into_iter()
    }

    /// o = up(GeLU(down(t))); `t` is M×D, output M×D.
    pub fn bottleneck(&self, binder: &mut Binder<'_>, t: Var) -> Result<Var> {
        let g = binder.graph();
        let st = g.shape_of(t);
        if st.len() != 2 || st[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "prompt_adapter.bottleneck",
                lhs: st,
                rhs: alloc::vec![self.dim],
            });
        }
        let h = g.matmul_nt(t, binder.bind(&self.down))?;
        let h = g.gelu(h)?;
        g.matmul_nt(h, binder.bind(&self.up))
    }

    /// Attention pooling over positions: r = Σ_m softmax(o·w_attnᵀ)_m · o_m.
    /// Output is 1×D.
    pub fn pool(&self, binder: &mut Binder<'_>, o: Var) -> Result<Var> {
        let g = binder.graph();
        let so = g.shape_of(o);
        if so.len() != 2 || so[0] == 0 {
            return Err(Error::EmptyInput {
                what: "prompt_adapter.pool",
            });
        }
        let logits = g.matmul_nt(o, binder.bind(&self.attn))?; // M×1
        let w = g.softmax(logits, 0)?;
        g.matmul_gen(w, o, true, false) // (1×M)·(M×D)
    }

    /// Full prompt-adapter transform of hidden states: pool(bottleneck(t)).
    pub fn scaling_from_hidden(&self, binder: &mut Binder<'_>, t: Var) -> Result<Var> {
        let o = self.bottleneck(binder, t)?;
        self.pool(binder, o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn adapter(dim: usize, k: usize) -> PromptAdapter {
        PromptAdapter::new("prompt_adapter", 17, dim, k)
    }

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array {
        Array::from_fn2(rows, cols, |_, _| rng.symmetric(1.0))
    }

    #[test]
    fn bottleneck_fixes_the_origin() {
        let pa = adapter(4, 3);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let t = g.constant(Array::zeros(&[2, 4]));
        let o = pa.bottleneck(&mut b, t).unwrap();
        assert!(g.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_up_projection_gives_zero_o() {
        let mut pa = adapter(4, 3);
        for v in pa.up.value.data_mut() {
            *v = 0.0;
        }
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let mut rng = Rng::new(5);
        let t = g.constant(random_matrix(&mut rng, 2, 4));
        let o = pa.bottleneck(&mut b, t).unwrap();
        assert!(g.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bottleneck_matches_dense_composition() {
        let pa = adapter(4, 3);
        let mut rng = Rng::new(9);
        let t = random_matrix(&mut rng, 2, 4);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let tv = g.constant(t.clone());
        let o = g.value(pa.bottleneck(&mut b, tv).unwrap());
        for m in 0..2 {
            for d in 0..4 {
                // o[m,d] = Σ_k up[d,k] · gelu(Σ_j down[k,j] t[m,j])
                let mut acc = 0.0;
                for k in 0..3 {
                    let mut pre = 0.0;
                    for j in 0..4 {
                        pre += pa.down.value.at2(k, j) * t.at2(m, j);
                    }
                    acc += pa.up.value.at2(d, k) * math::gelu(pre);
                }
                assert!((o.at2(m, d) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_attention_pools_to_column_mean() {
        let pa = adapter(5, 2); // attn starts at zero
        let mut rng = Rng::new(11);
        let o = random_matrix(&mut rng, 3, 5);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let ov = g.constant(o.clone());
        let r = g.value(pa.pool(&mut b, ov).unwrap());
        for d in 0..5 {
            let mean = (0..3).map(|m| o.at2(m, d)).sum::<f64>() / 3.0;
            assert!((r.at2(0, d) - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn single_position_pool_is_identity() {
        let mut pa = adapter(4, 2);
        let mut rng = Rng::new(13);
        pa.attn.value = random_matrix(&mut rng, 1, 4);
        let o = random_matrix(&mut rng, 1, 4);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let ov = g.constant(o.clone());
        let r = g.value(pa.pool(&mut b, ov).unwrap());
        for d in 0..4 {
            assert!((r.at2(0, d) - o.at2(0, d)).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_matches_literal_matrix_form() {
        // oracle: Softmax(I_D (w_attn o)) ⊙ o · I_M in the column-major
        // orientation, evaluated densely
        let mut rng = Rng::new(23);
        for trial in 0..20 {
            let (d, m) = (5, 3);
            let mut pa = adapter(d, 2);
            pa.attn.value = random_matrix(&mut rng, 1, d);
            let o_rows = random_matrix(&mut rng, m, d); // row-major M×D

            let g = Graph::new();
            let mut b = Binder::training(&g);
            let ov = g.constant(o_rows.clone());
            let r = g.value(pa.pool(&mut b, ov).unwrap());

            // column-major oracle: o_cm is D×M with o_cm[dd][mm] = o_rows[mm][dd]
            let logits: alloc::vec::Vec<f64> = (0..m)
                .map(|mm| (0..d).map(|dd| pa.attn.value.at2(0, dd) * o_rows.at2(mm, dd)).sum())
                .collect();
            // I_D (w_attn o) replicates the logits down D rows; softmax along
            // positions then produces the same weight row D times
            let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: alloc::vec::Vec<f64> = logits.iter().map(|&v| math::exp(v - max)).collect();
            let z: f64 = exps.iter().sum();
            for dd in 0..d {
                let mut acc = 0.0;
                for mm in 0..m {
                    acc += (exps[mm] / z) * o_rows.at2(mm, dd);
                }
                assert!(
                    (r.at2(0, dd) - acc).abs() < 1e-12,
                    "trial {trial} dim {dd}: {} vs {acc}",
                    r.at2(0, dd)
                );
            }
        }
    }

    #[test]
    fn pool_is_shift_invariant_in_the_logits() {
        // adding a constant to every attention logit leaves r unchanged
        let mut rng = Rng::new(31);
        let (d, m) = (4, 3);
        let mut pa = adapter(d, 2);
        pa.attn.value = random_matrix(&mut rng, 1, d);
        let o = random_matrix(&mut rng, m, d);

        let pool_with_shift = |shift: f64| -> Array {
            let g = Graph::new();
            let mut b = Binder::training(&g);
            let ov = g.constant(o.clone());
            let logits = g.matmul_nt(ov, b.bind(&pa.attn)).unwrap();
            let shifted = g
                .add(logits, g.constant(Array::filled(&[m, 1], shift)))
                .unwrap();
            let w = g.softmax(shifted, 0).unwrap();
            g.value(g.matmul_gen(w, ov, true, false).unwrap())
        };
        let base = pool_with_shift(0.0);
        let shifted = pool_with_shift(7.5);
        assert!(base.max_abs_diff(&shifted) < 1e-9);
    }
}
