//! Named parameters and their binding onto computation graphs.
//!
//! Every model component owns [`Param`]s; the trainer, checkpoint writer,
//! and freezing checks enumerate them by name in a fixed order. A
//! [`Binder`] interns parameters onto a [`Graph`] so that a parameter used
//! several times in one graph (e.g. across the samples of a batch) maps to
//! a single leaf and its gradients accumulate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::{Array, Graph, Var};

/// A named tensor with a frozen flag. Frozen parameters never receive
/// gradients and are never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array,
    pub frozen: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array, frozen: bool) -> Param {
        Param {
            name: name.into(),
            value,
            frozen,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Array) -> Param {
        Param::new(name, value, true)
    }

    pub fn trainable(name: impl Into<String>, value: Array) -> Param {
        Param::new(name, value, false)
    }
}

/// Uniform init in [-scale, scale).
pub fn uniform_init(rng: &mut Rng, shape: &[usize], scale: f64) -> Array {
    let mut a = Array::zeros(shape);
    for v in a.data_mut() {
        *v = rng.symmetric(scale);
    }
    a
}

/// Interns [`Param`]s as graph leaves, one leaf per name per graph.
pub struct Binder<'g> {
    graph: &'g Graph,
    train: bool,
    bound: BTreeMap<String, Var>,
}

impl<'g> Binder<'g> {
    /// Binder for training graphs: non-frozen params become gradient leaves.
    pub fn training(graph: &'g Graph) -> Binder<'g> {
        Binder {
            graph,
            train: true,
            bound: BTreeMap::new(),
        }
    }

    /// Binder for inference: everything binds as a constant.
    pub fn inference(graph: &'g Graph) -> Binder<'g> {
        Binder {
            graph,
            train: false,
            bound: BTreeMap::new(),
        }
    }

    /// Binder whose named parameters resolve to pre-registered vars instead
    /// of the owners' values. This evaluates a model at an external
    /// parameter point, which is what the finite-difference checker needs.
    pub fn with_bindings(graph: &'g Graph, bindings: BTreeMap<String, Var>) -> Binder<'g> {
        Binder {
            graph,
            train: true,
            bound: bindings,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn bind(&mut self, p: &Param) -> Var {
        if let Some(v) = self.bound.get(&p.name) {
            return *v;
        }
        let v = self
            .graph
            .input(p.value.clone(), self.train && !p.frozen);
        self.bound.insert(p.name.clone(), v);
        v
    }

    /// Var previously bound under `name`, if any.
    pub fn bound_var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    /// Names and vars of everything bound so far, in name order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&String, Var)> {
        self.bound.iter().map(|(n, v)| (n, *v))
    }
}

/// Snapshot of parameter payloads for bit-identity checks.
pub fn snapshot_params<'a>(params: impl Iterator<Item = &'a Param>) -> Vec<(String, Array)> {
    params.map(|p| (p.name.clone(), p.value.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binder_reuses_leaves_by_name() {
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let p = Param::trainable("w", Array::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let v1 = b.bind(&p);
        let v2 = b.bind(&p);
        assert_eq!(v1, v2);
        assert_eq!(g.n_nodes(), 1);
    }

    #[test]
    fn frozen_params_bind_as_constants() {
        let g = Graph::new();
        let mut b = Binder::training(&g);
        let p = Param::frozen("w0", Array::from_vec(&[1], vec![3.0]).unwrap());
        let v = b.bind(&p);
        let s = g.sum(v, None).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(v).is_none(), "frozen param received a gradient");
    }
}
