//! Two-component PCA via Jacobi eigen-decomposition of the covariance
//! matrix. Deterministic: component sign is fixed by making the
//! largest-magnitude loading positive.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Symmetric eigen-decomposition by cyclic Jacobi sweeps. Returns
/// (eigenvalues, eigenvectors as rows), unsorted.
fn jacobi(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a: Vec<Vec<f64>> = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = sym
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| math::abs(*x))
        .fold(0.0, f64::max)
        .max(1e-300);
    let tol = 1e-14 * scale;
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(math::abs(a[p][q]));
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if math::abs(a[p][q]) < tol * 1e-2 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = {
                    let s = if theta >= 0.0 { 1.0 } else { -1.0 };
                    s / (math::abs(theta) + math::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    // rows of the result are eigenvectors
    let eigenvectors: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (eigenvalues, eigenvectors)
}

fn fix_sign(vector: &mut [f64]) {
    let mut best = 0;
    for (i, x) in vector.iter().enumerate() {
        if math::abs(*x) > math::abs(vector[best]) {
            best = i;
        }
    }
    if vector[best] < 0.0 {
        for x in vector.iter_mut() {
            *x = -*x;
        }
    }
}

/// Top-2 principal components of a point cloud. Returns per-point 2-D
/// coordinates, the two (sign-fixed) component vectors, and their
/// eigenvalues. Requires at least 2 points and dimension >= 1.
pub fn pca2(points: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, [Vec<f64>; 2], [f64; 2])> {
    if points.len() < 2 {
        return Err(Error::invalid("pca2: need at least 2 points"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("pca2: inconsistent point dimensions"));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    // population covariance
    let mut cov = vec![vec![0.0; dim]; dim];
    for p in points {
        for i in 0..dim {
            let di = p[i] - mean[i];
            for j in i..dim {
                cov[i][j] += di * (p[j] - mean[j]) / n;
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    let (eigenvalues, eigenvectors) = jacobi(&cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut comp1 = eigenvectors[order[0]].clone();
    let mut comp2 = if dim >= 2 {
        eigenvectors[order[1]].clone()
    } else {
        vec![0.0; dim]
    };
    fix_sign(&mut comp1);
    if dim >= 2 {
        fix_sign(&mut comp2);
    }
    let val1 = eigenvalues[order[0]];
    let val2 = if dim >= 2 { eigenvalues[order[1]] } else { 0.0 };
    let coords = points
        .iter()
        .map(|p| {
            let mut x = 0.0;
            let mut y = 0.0;
            for i in 0..dim {
                let d = p[i] - mean[i];
                x += d * comp1[i];
                y += d * comp2[i];
            }
            [x, y]
        })
        .collect();
    Ok((coords, [comp1, comp2], [val1, val2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_eigenproblem_on_four_points() {
        // points (±1, ±0.5) with x and y independent:
        // cov = diag(1, 0.25); components are the axes
        let pts = vec![
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
            vec![1.0, -0.5],
            vec![-1.0, 0.5],
        ];
        let (coords, comps, vals) = pca2(&pts).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 0.25).abs() < 1e-12);
        assert!((comps[0][0] - 1.0).abs() < 1e-9 && comps[0][1].abs() < 1e-9);
        assert!((comps[1][1] - 1.0).abs() < 1e-9 && comps[1][0].abs() < 1e-9);
        assert!((coords[0][0] - 1.0).abs() < 1e-9);
        assert!((coords[0][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rank_one_data_has_vanishing_second_coordinate() {
        // points on the line y = 2x
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let (coords, _, vals) = pca2(&pts).unwrap();
        assert!(vals[1].abs() < 1e-9);
        for c in coords {
            assert!(c[1].abs() < 1e-9, "second coordinate {}", c[1]);
        }
    }

    #[test]
    fn correlated_covariance_matches_hand_decomposition() {
        // cov of {(1,1),(-1,-1),(2,2),(-2,-2)} is [[2.5,2.5],[2.5,2.5]]:
        // eigenvalues 5 and 0, first component (1,1)/sqrt(2)
        let pts = vec![
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, 2.0],
            vec![-2.0, -2.0],
        ];
        let (_, comps, vals) = pca2(&pts).unwrap();
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!(vals[1].abs() < 1e-12);
        let inv_sqrt2 = 1.0 / math::sqrt(2.0);
        assert!((comps[0][0] - inv_sqrt2).abs() < 1e-9);
        assert!((comps[0][1] - inv_sqrt2).abs() < 1e-9);
    }

    #[test]
    fn duplicated_points_share_coordinates() {
        let pts = vec![
            vec![0.3, 1.0, -0.2],
            vec![1.1, 0.0, 0.4],
            vec![0.3, 1.0, -0.2],
            vec![-0.5, 0.7, 2.0],
        ];
        let (coords, _, _) = pca2(&pts).unwrap();
        assert_eq!(coords[0], coords[2]);
    }
}
