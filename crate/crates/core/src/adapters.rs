//! Modality adapters and the fusion projector.
//!
//! Each adapter downsamples its encoder stream by exactly 4 in time (two
//! stride-2 convolutions), passes a residual down-up bottleneck, and
//! projects to the per-stream output width. The fusion projector
//! concatenates both streams feature-wise and maps into the backbone
//! embedding space.

use alloc::format;

use crate::config::AdapterConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{uniform_init, Binder, Param};
use crate::rng::Rng;
use crate::tensor::Var;

/// conv -> conv -> residual bottleneck -> linear, all trainable.
pub struct ModalityAdapter {
    pub conv1_w: Param,
    pub conv1_b: Param,
    pub conv2_w: Param,
    pub conv2_b: Param,
    pub down_w: Param,
    pub down_b: Param,
    pub up_w: Param,
    pub up_b: Param,
    pub proj_w: Param,
    pub proj_b: Param,
    kernel: usize,
    in_dim: usize,
    out_dim: usize,
}

impl ModalityAdapter {
    pub fn new(prefix: &str, seed: u64, in_dim: usize, cfg: &AdapterConfig) -> ModalityAdapter {
        let base = Rng::new(seed);
        let k = cfg.kernel;
        // variance-preserving inits: GeLU-followed layers get the He-style
        // gain so speech content arrives at the backbone full-strength
        let conv_scale = math::sqrt(6.0 / (k * in_dim) as f64);
        let mk = |label: u64, shape: &[usize], scale: f64| {
            uniform_init(&mut base.derive(label), shape, scale)
        };
        ModalityAdapter {
            conv1_w: Param::trainable(
                format!("{prefix}.conv1.w"),
                mk(1, &[k, in_dim, in_dim], conv_scale),
            ),
            conv1_b: Param::trainable(format!("{prefix}.conv1.b"), crate::tensor::Array::zeros(&[in_dim])),
            conv2_w: Param::trainable(
                format!("{prefix}.conv2.w"),
                mk(2, &[k, in_dim, in_dim], conv_scale),
            ),
            conv2_b: Param::trainable(format!("{prefix}.conv2.b"), crate::tensor::Array::zeros(&[in_dim])),
            down_w: Param::trainable(
                format!("{prefix}.bottleneck.down.w"),
                mk(3, &[cfg.bottleneck, in_dim], math::sqrt(6.0 / in_dim as f64)),
            ),
            down_b: Param::trainable(
                format!("{prefix}.bottleneck.down.b"),
                crate::tensor::Array::zeros(&[cfg.bottleneck]),
            ),
            up_w: Param::trainable(
                format!("{prefix}.bottleneck.up.w"),
                mk(4, &[in_dim, cfg.bottleneck], math::sqrt(3.0 / cfg.bottleneck as f64)),
            ),
            up_b: Param::trainable(
                format!("{prefix}.bottleneck.up.b"),
                crate::tensor::Array::zeros(&[in_dim]),
            ),
            proj_w: Param::trainable(
                format!("{prefix}.proj.w"),
                mk(5, &[cfg.out_dim, in_dim], math::sqrt(3.0 / in_dim as f64)),
            ),
            proj_b: Param::trainable(
                format!("{prefix}.proj.b"),
                crate::tensor::Array::zeros(&[cfg.out_dim]),
            ),
            kernel: k,
            in_dim,
            out_dim: cfg.out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Output frame count for a given input frame count: two stride-2
    /// stages, each producing ceil(n/2).
    pub fn out_frames(frames: usize) -> usize {
        frames.div_ceil(2).div_ceil(2)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.down_w,
            &self.down_b,
            &self.up_w,
            &self.up_b,
            &self.proj_w,
            &self.proj_b,
        ]
        .into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.down_w,
            &mut self.down_b,
            &mut self.up_w,
            &mut self.up_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
        .into_iter()
    }

    /// Runs the adapter over an on-graph frame sequence. Input stride is
    /// multiplied by 4; the returned var has ceil(ceil(N/2)/2) frames.
    pub fn adapt(&self, binder: &mut Binder<'_>, seq: Var, stride: u32) -> Result<(Var, u32)> {
        let g = binder.graph();
        let frames = g.shape_of(seq)[0];
        if frames == 0 {
            return Err(Error::EmptyInput { what: "adapt" });
        }
        let c1 = g.conv1d(seq, binder.bind(&self.conv1_w), 2)?;
        let c1 = g.add_rows(c1, binder.bind(&self.conv1_b))?;
        let c1 = g.gelu(c1)?;
        let c2 = g.conv1d(c1, binder.bind(&self.conv2_w), 2)?;
        let c2 = g.add_rows(c2, binder.bind(&self.conv2_b))?;
        let c2 = g.gelu(c2)?;
        // residual bottleneck: h + up(gelu(down(h)))
        let d = g.matmul_nt(c2, binder.bind(&self.down_w))?;
        let d = g.add_rows(d, binder.bind(&self.down_b))?;
        let d = g.gelu(d)?;
        let u = g.matmul_nt(d, binder.bind(&self.up_w))?;
        let u = g.add_rows(u, binder.bind(&self.up_b))?;
        let h = g.add(c2, u)?;
        let out = g.matmul_nt(h, binder.bind(&self.proj_w))?;
        let out = g.add_rows(out, binder.bind(&self.proj_b))?;
        debug_assert_eq!(g.shape_of(out)[0], Self::out_frames(frames));
        Ok((out, stride * 4))
    }

    /// Uses kernel size for shape reporting.
    pub fn kernel(&self) -> usize {
        self.kernel
    }
}

/// Linear map from the concatenated adapter outputs into the backbone
/// embedding width.
pub struct FusionProjector {
    pub w: Param,
    pub b: Param,
    in_dim: usize,
}

impl FusionProjector {
    pub fn new(prefix: &str, seed: u64, sem_dim: usize, ac_dim: usize, model_dim: usize) -> Self {
        let mut rng = Rng::new(seed);
        let in_dim = sem_dim + ac_dim;
        FusionProjector {
            w: Param::trainable(
                format!("{prefix}.w"),
                uniform_init(&mut rng, &[model_dim, in_dim], math::sqrt(3.0 / in_dim as f64)),
            ),
            b: Param::trainable(format!("{prefix}.b"), crate::tensor::Array::zeros(&[model_dim])),
            in_dim,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        [&self.w, &self.b].into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [&mut self.w, &mut self.b].into_iter()
    }

    /// Feature-wise concatenation then projection; frame counts must match.
    pub fn fuse(&self, binder: &mut Binder<'_>, sem: Var, ac: Var) -> Result<Var> {
        let g = binder.graph();
        let (fs, fa) = (g.shape_of(sem), g.shape_of(ac));
        if fs[0] != fa[0] {
            return Err(Error::invalid(format!(
                "fuse: frame counts differ (semantic {} vs acoustic {})",
                fs[0], fa[0]
            )));
        }
        if fs[1] + fa[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                lhs: alloc::vec![fs[1] + fa[1]],
                rhs: alloc::vec![self.in_dim],
            });
        }
        let cat = g.concat_cols(&[sem, ac])?;
        let out = g.matmul_nt(cat, binder.bind(&self.w))?;
        g.add_rows(out, binder.bind(&self.b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Array, Graph};
    use alloc::vec;
    use alloc::vec::Vec;

    fn adapter() -> ModalityAdapter {
        let cfg = AdapterConfig {
            kernel: 3,
            bottleneck: 4,
            out_dim: 6,
        };
        ModalityAdapter::new("adapters.test", 21, 5, &cfg)
    }

    fn run(adapter: &ModalityAdapter, frames: usize) -> Vec<usize> {
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let x = g.constant(Array::filled(&[frames, 5], 0.3));
        let (out, stride) = adapter.adapt(&mut b, x, 1).unwrap();
        assert_eq!(stride, 4);
        g.shape_of(out)
    }

    #[test]
    fn downsampling_factor_is_exactly_four() {
        let a = adapter();
        assert_eq!(run(&a, 16), vec![4, 6]);
        assert_eq!(run(&a, 5), vec![2, 6]);
        for n in 1..40 {
            assert_eq!(
                ModalityAdapter::out_frames(n),
                n.div_ceil(2).div_ceil(2),
                "n={n}"
            );
            assert_eq!(run(&a, n)[0], ModalityAdapter::out_frames(n));
        }
    }

    #[test]
    fn empty_input_fails() {
        let a = adapter();
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let x = g.constant(Array::zeros(&[0, 5]));
        assert!(a.adapt(&mut b, x, 1).is_err());
    }

    #[test]
    fn zeroed_up_projection_makes_bottleneck_passthrough() {
        let mut a = adapter();
        for v in a.up_w.value.data_mut() {
            *v = 0.0;
        }
        // with up = 0 and up bias 0 the residual branch adds nothing:
        // output must equal conv+proj alone
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let x = g.constant(Array::filled(&[8, 5], 0.4));
        let (full, _) = a.adapt(&mut b, x, 1).unwrap();

        let g2 = Graph::new();
        let mut b2 = Binder::training(&g2);
        let x2 = g2.constant(Array::filled(&[8, 5], 0.4));
        let c1 = g2.conv1d(x2, b2.bind(&a.conv1_w), 2).unwrap();
        let c1 = g2.add_rows(c1, b2.bind(&a.conv1_b)).unwrap();
        let c1 = g2.gelu(c1).unwrap();
        let c2 = g2.conv1d(c1, b2.bind(&a.conv2_w), 2).unwrap();
        let c2 = g2.add_rows(c2, b2.bind(&a.conv2_b)).unwrap();
        let c2 = g2.gelu(c2).unwrap();
        let out = g2.matmul_nt(c2, b2.bind(&a.proj_w)).unwrap();
        let out = g2.add_rows(out, b2.bind(&a.proj_b)).unwrap();

        assert!(g.value(full).bit_eq(&g2.value(out)));
    }

    #[test]
    fn fuse_checks_frame_counts_and_projects() {
        let f = FusionProjector::new("fusion", 3, 4, 4, 10);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let sem = g.constant(Array::filled(&[4, 4], 1.0));
        let ac = g.constant(Array::filled(&[4, 4], 2.0));
        let out = f.fuse(&mut b, sem, ac).unwrap();
        assert_eq!(g.shape_of(out), vec![4, 10]);

        let ac_bad = g.constant(Array::filled(&[3, 4], 2.0));
        let err = f.fuse(&mut b, sem, ac_bad).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains('4') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn fuse_with_identity_on_semantic_block_passes_semantic_through() {
        let mut f = FusionProjector::new("fusion", 3, 3, 3, 3);
        // w = [I | 0], b = 0 -> output equals the semantic block
        let mut w = Array::zeros(&[3, 6]);
        for i in 0..3 {
            w.set2(i, i, 1.0);
        }
        f.w.value = w;
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let sem = g.constant(Array::from_fn2(2, 3, |r, c| (r * 3 + c) as f64));
        let ac = g.constant(Array::zeros(&[2, 3]));
        let out = f.fuse(&mut b, sem, ac).unwrap();
        assert!(g.value(out).bit_eq(&g.value(sem)));
    }

    #[test]
    fn fuse_matches_dense_concat_then_matmul() {
        let f = FusionProjector::new("fusion", 9, 3, 2, 4);
        let mut rng = Rng::new(77);
        let sem = Array::from_fn2(3, 3, |_, _| rng.symmetric(1.0));
        let ac = Array::from_fn2(3, 2, |_, _| rng.symmetric(1.0));
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let sv = g.constant(sem.clone());
        let av = g.constant(ac.clone());
        let out = g.value(f.fuse(&mut b, sv, av).unwrap());
        // brute force
        for r in 0..3 {
            for o in 0..4 {
                let mut acc = f.b.value.data()[o];
                for c in 0..5 {
                    let x = if c < 3 { sem.at2(r, c) } else { ac.at2(r, c - 3) };
                    acc += x * f.w.value.at2(o, c);
                }
                let got = out.at2(r, o);
                assert!((got - acc).abs() < 1e-12, "({r},{o}): {got} vs {acc}");
            }
        }
    }
}
