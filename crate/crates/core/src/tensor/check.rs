//! Independent finite-difference gradient checker.

use alloc::vec::Vec;

use super::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::math;

const REL_FLOOR: f64 = 1e-8;

/// Checks reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `f` rebuilds the computation from scratch on the given graph each time
/// it is called; `leaves` are the differentiation points. Returns the
/// maximum over all leaf entries of
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
///
/// Fails if `f` is non-deterministic (two evaluations at the same point
/// disagree bitwise) or does not produce a scalar.
pub fn finite_diff_check<F>(f: F, leaves: &[Array], step: f64) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::invalid("finite_diff_check: step must be > 0"));
    }
    if leaves.is_empty() {
        return Err(Error::EmptyInput {
            what: "finite_diff_check",
        });
    }

    let eval = |point: &[Array]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|a| g.leaf(a.clone())).collect();
        let out = f(&g, &vars)?;
        let v = g.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let base = eval(leaves)?;
    let again = eval(leaves)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::invalid(
            "finite_diff_check: function is non-deterministic (two evaluations differ)",
        ));
    }

    // analytic gradients
    let g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|a| g.leaf(a.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Array> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, a)| grads.get_or_zeros(v, a.shape()))
        .collect();

    let mut worst = 0.0f64;
    let mut point: Vec<Array> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for e in 0..leaf.len() {
            let orig = leaf.data()[e];
            point[li].data_mut()[e] = orig + step;
            let plus = eval(&point)?;
            point[li].data_mut()[e] = orig - step;
            let minus = eval(&point)?;
            point[li].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[li].data()[e];
            let denom = math::abs(a).max(math::abs(numeric)).max(REL_FLOOR);
            worst = worst.max(math::abs(a - numeric) / denom);
        }
    }
    Ok(worst)
}
