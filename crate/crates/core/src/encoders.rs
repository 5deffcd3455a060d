//! Frozen synthetic stand-ins for the semantic and acoustic speech
//! encoders, plus the learnable weighted sum over acoustic layers.
//!
//! Each encoder is a stack of frozen random affine maps with GeLU at
//! stride 1: the parameters are fixed at construction from a seed and
//! never receive gradients, so the only trainable piece on the encoder
//! side is the [`LayerWeights`] vector mixing the acoustic layers.

use alloc::format;
use alloc::vec::Vec;

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{uniform_init, Binder, Param};
use crate::rng::Rng;
use crate::tensor::{mm, Array, Var};

/// A frames×dim feature matrix with its frame stride (time units per
/// frame). The speech-side payload at every pipeline stage.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub features: Array,
    pub stride: u32,
}

impl FeatureSequence {
    pub fn new(features: Array, stride: u32) -> FeatureSequence {
        FeatureSequence { features, stride }
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Frozen random projection stack. All layers output frames×`out_dim`.
pub struct SyntheticEncoder {
    layers: Vec<Param>,
    out_dim: usize,
}

impl SyntheticEncoder {
    /// Builds `layer_count` frozen affine+GeLU layers mapping
    /// `in_dim -> out_dim -> ... -> out_dim`.
    pub fn new(prefix: &str, seed: u64, layer_count: usize, in_dim: usize, out_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(layer_count);
        let base = Rng::new(seed);
        let mut prev = in_dim;
        for l in 0..layer_count {
            let mut rng = base.derive(l as u64);
            // uniform He gain: Var(U(-a,a)) = a^2/3, so a^2 = 6/fan keeps
            // activation magnitudes roughly stable through GeLU
            let scale = math::sqrt(6.0 / prev as f64);
            let w = uniform_init(&mut rng, &[out_dim, prev], scale);
            layers.push(Param::frozen(format!("{prefix}.layer{l}.w"), w));
            prev = out_dim;
        }
        SyntheticEncoder { layers, out_dim }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut()
    }

    /// All layer outputs, in order. Frame count and stride are preserved.
    pub fn encode_all(&self, speech: &FeatureSequence) -> Result<Vec<FeatureSequence>> {
        if speech.frames() == 0 {
            return Err(Error::EmptyInput { what: "encoder" });
        }
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut x = speech.features.clone();
        for layer in &self.layers {
            let mut h = mm(&x, &layer.value, false, true);
            for v in h.data_mut() {
                *v = math::gelu(*v);
            }
            outs.push(FeatureSequence::new(h.clone(), speech.stride));
            x = h;
        }
        Ok(outs)
    }

    /// Final layer output only (the semantic stream's contract).
    pub fn encode_last(&self, speech: &FeatureSequence) -> Result<FeatureSequence> {
        Ok(self
            .encode_all(speech)?
            .pop()
            .expect("encoder has at least one layer"))
    }
}

/// Trainable logits over the acoustic encoder layers; the mixing weights
/// are their softmax, so they are nonnegative and sum to one.
pub struct LayerWeights {
    pub logits: Param,
}

impl LayerWeights {
    pub fn new(name: &str, layer_count: usize) -> LayerWeights {
        LayerWeights {
            logits: Param::trainable(name, Array::zeros(&[layer_count])),
        }
    }

    /// Softmax-normalized weights as plain values.
    pub fn normalized(&self) -> Vec<f64> {
        let logits = self.logits.value.data();
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = logits.iter().map(|&v| math::exp(v - max)).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|v| v / sum).collect()
    }
}

/// out = Σ_l softmax(logits)_l · layers[l], with gradients flowing into
/// the logits.
pub fn layer_weighted_sum(
    binder: &mut Binder<'_>,
    weights: &LayerWeights,
    layers: &[FeatureSequence],
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::EmptyInput {
            what: "layer_weighted_sum",
        });
    }
    let shape0 = layers[0].features.shape().to_vec();
    for l in layers {
        if l.features.shape() != shape0.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "layer_weighted_sum",
                lhs: shape0,
                rhs: l.features.shape().to_vec(),
            });
        }
    }
    let g = binder.graph();
    let logits = binder.bind(&weights.logits);
    let w = g.softmax(logits, 0)?;
    let layer_vars: Vec<Var> = layers
        .iter()
        .map(|l| g.constant(l.features.clone()))
        .collect();
    g.mix_layers(w, &layer_vars)
}

/// Builds both encoder stacks from one config.
pub fn build_encoders(cfg: &EncoderConfig) -> (SyntheticEncoder, SyntheticEncoder, LayerWeights) {
    let base = Rng::new(cfg.seed);
    let semantic = SyntheticEncoder::new(
        "encoders.semantic",
        base.derive(1).next_u64(),
        cfg.layers,
        cfg.feat_dim,
        cfg.sem_dim,
    );
    let acoustic = SyntheticEncoder::new(
        "encoders.acoustic",
        base.derive(2).next_u64(),
        cfg.layers,
        cfg.feat_dim,
        cfg.ac_dim,
    );
    let weights = LayerWeights::new("encoders.acoustic.layer_weights", cfg.layers);
    (semantic, acoustic, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use alloc::vec;

    fn feats(frames: usize, dim: usize, fill: f64) -> FeatureSequence {
        FeatureSequence::new(Array::filled(&[frames, dim], fill), 1)
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let enc = SyntheticEncoder::new("enc", 5, 3, 4, 6);
        let out = enc.encode_last(&feats(12, 4, 0.0)).unwrap();
        assert_eq!(out.frames(), 12);
        assert!(out.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_preserved_and_all_layers_returned() {
        let enc = SyntheticEncoder::new("enc", 5, 3, 4, 6);
        let outs = enc.encode_all(&feats(12, 4, 0.5)).unwrap();
        assert_eq!(outs.len(), 3);
        for o in &outs {
            assert_eq!(o.features.shape(), &[12, 6]);
        }
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let a = SyntheticEncoder::new("enc", 9, 2, 4, 5)
            .encode_last(&feats(3, 4, 0.7))
            .unwrap();
        let b = SyntheticEncoder::new("enc", 9, 2, 4, 5)
            .encode_last(&feats(3, 4, 0.7))
            .unwrap();
        assert!(a.features.bit_eq(&b.features));
    }

    #[test]
    fn empty_input_fails() {
        let enc = SyntheticEncoder::new("enc", 5, 2, 4, 6);
        assert!(enc.encode_last(&feats(0, 4, 0.0)).is_err());
    }

    #[test]
    fn weighted_sum_of_identical_layers_is_that_layer() {
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let mut lw = LayerWeights::new("lw", 3);
        lw.logits.value = Array::from_vec(&[3], vec![0.4, -1.0, 2.0]).unwrap();
        let layer = feats(2, 3, 1.5);
        let out = layer_weighted_sum(&mut b, &lw, &[layer.clone(), layer.clone(), layer]).unwrap();
        for &v in g.value(out).data() {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_select_one_layer() {
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let mut lw = LayerWeights::new("lw", 3);
        lw.logits.value = Array::from_vec(&[3], vec![40.0, -40.0, -40.0]).unwrap();
        let layers = [feats(2, 2, 1.0), feats(2, 2, 5.0), feats(2, 2, 9.0)];
        let out = layer_weighted_sum(&mut b, &lw, &layers).unwrap();
        for &v in g.value(out).data() {
            assert!((v - 1.0).abs() < 1e-6, "expected layer 0, got {v}");
        }
    }

    #[test]
    fn equal_logits_average_layers() {
        // L=2, logits [0,0], layers of 1s and 3s -> all 2s
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let lw = LayerWeights::new("lw", 2);
        let out = layer_weighted_sum(&mut b, &lw, &[feats(3, 2, 1.0), feats(3, 2, 3.0)]).unwrap();
        for &v in g.value(out).data() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn convexity_envelope_holds() {
        let mut rng = Rng::new(3);
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let mut lw = LayerWeights::new("lw", 3);
        lw.logits.value = Array::from_vec(&[3], vec![0.3, -0.8, 1.2]).unwrap();
        let layers: Vec<FeatureSequence> = (0..3)
            .map(|_| {
                let mut a = Array::zeros(&[4, 3]);
                for v in a.data_mut() {
                    *v = rng.symmetric(2.0);
                }
                FeatureSequence::new(a, 1)
            })
            .collect();
        let out = g.value(layer_weighted_sum(&mut b, &lw, &layers).unwrap());
        for i in 0..out.len() {
            let lo = layers
                .iter()
                .map(|l| l.features.data()[i])
                .fold(f64::INFINITY, f64::min);
            let hi = layers
                .iter()
                .map(|l| l.features.data()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let v = out.data()[i];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn weights_normalize_to_one() {
        let mut lw = LayerWeights::new("lw", 4);
        lw.logits.value = Array::from_vec(&[4], vec![0.2, -3.0, 1.4, 0.0]).unwrap();
        let w = lw.normalized();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }
}
