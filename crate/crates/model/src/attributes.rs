//! Pair attributes attached to each (receiver, sender) node pair per frame.

use std::f64::consts::PI;

use crate::config::Variant;
use crate::error::{ModelError, Result};

/// Attributes for every frame and pair, frame-major. With `M` orientations a
/// directed edge `(r, s)` expands into `M * M` pairs `(r, a) <- (s, b)`,
/// ordered by `a` then `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAttributes {
    pub frames: usize,
    pub pairs_per_frame: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl PairAttributes {
    pub fn get(&self, frame: usize, pair: usize) -> &[f64] {
        let at = (frame * self.pairs_per_frame + pair) * self.dim;
        &self.values[at..at + self.dim]
    }
}

/// `positions` holds `frames * num_nodes` planar points, frame-major;
/// `directed` holds `(receiver, sender)` pairs.
pub fn pair_attributes(
    positions: &[[f64; 2]],
    num_nodes: usize,
    directed: &[(usize, usize)],
    variant: Variant,
    num_orientations: usize,
) -> Result<PairAttributes> {
    if num_nodes == 0 || positions.len() % num_nodes != 0 {
        return Err(ModelError::InvalidInput(format!(
            "{} positions do not split into frames of {num_nodes} nodes",
            positions.len()
        )));
    }
    if let Some(&(r, s)) = directed
        .iter()
        .find(|&&(r, s)| r >= num_nodes || s >= num_nodes)
    {
        return Err(ModelError::InvalidInput(format!(
            "edge ({r}, {s}) outside {num_nodes} nodes"
        )));
    }
    let m = num_orientations.max(1);
    let frames = positions.len() / num_nodes;
    let dim = match (variant, m) {
        (Variant::Baseline, _) => 2,
        (Variant::Invariant, 1) => 1,
        (Variant::Invariant, _) => 3,
    };
    let grid: Vec<f64> = (0..m).map(|a| 2.0 * PI * a as f64 / m as f64).collect();
    let pairs_per_frame = directed.len() * m * m;
    let mut values = Vec::with_capacity(frames * pairs_per_frame * dim);
    for frame in positions.chunks_exact(num_nodes) {
        for &(r, s) in directed {
            let d = [frame[s][0] - frame[r][0], frame[s][1] - frame[r][1]];
            for &ta in &grid {
                for &tb in &grid {
                    match (variant, m) {
                        (Variant::Baseline, _) => values.extend_from_slice(&d),
                        (Variant::Invariant, 1) => values.push(d[0].hypot(d[1])),
                        (Variant::Invariant, _) => {
                            let (sa, ca) = ta.sin_cos();
                            values.push(d[0] * ca + d[1] * sa);
                            values.push(-d[0] * sa + d[1] * ca);
                            values.push(wrap_angle(tb - ta));
                        }
                    }
                }
            }
        }
    }
    Ok(PairAttributes {
        frames,
        pairs_per_frame,
        dim,
        values,
    })
}

/// Maps an angle into `(-pi, pi]`.
fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Exponent tuples of every monomial in `dim` variables with total degree at
/// most `degree`, lowest degree first (the constant comes first).
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    let mut frontier = vec![(vec![0; dim], 0usize)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for (exps, last) in &frontier {
            // Only raise variables at or after the last raised one, so each
            // monomial is produced once.
            for v in *last..dim {
                let mut e = exps.clone();
                e[v] += 1;
                out.push(e.clone());
                next.push((e, v));
            }
        }
        frontier = next;
    }
    out
}

/// Evaluates the monomials of [`monomials`] on each attribute row.
pub fn polynomial_features(attrs: &PairAttributes, degree: usize) -> (usize, Vec<f64>) {
    let terms = monomials(attrs.dim, degree);
    let mut out = Vec::with_capacity(attrs.values.len() / attrs.dim.max(1) * terms.len());
    for row in attrs.values.chunks_exact(attrs.dim) {
        for exps in &terms {
            out.push(
                exps.iter()
                    .zip(row)
                    .map(|(&e, &x)| x.powi(e as i32))
                    .product(),
            );
        }
    }
    (terms.len(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let p = [[0.0, 0.0], [3.0, 4.0]];
        let a = pair_attributes(&p, 2, &[(0, 1), (1, 1)], Variant::Invariant, 1).unwrap();
        assert_eq!(a.values, vec![5.0, 0.0]);
        let b = pair_attributes(&p, 2, &[(0, 1)], Variant::Baseline, 1).unwrap();
        assert_eq!(b.values, vec![3.0, 4.0]);
    }

    #[test]
    fn orientation_grid_components() {
        let p = [[0.0, 0.0], [0.0, 2.0]];
        let a = pair_attributes(&p, 2, &[(0, 1)], Variant::Invariant, 4).unwrap();
        assert_eq!((a.pairs_per_frame, a.dim), (16, 3));
        // Receiver orientation 90 degrees points along +y.
        let row = a.get(0, 5);
        assert!((row[0] - 2.0).abs() < 1e-12 && row[1].abs() < 1e-12 && row[2].abs() < 1e-12);
        let row = a.get(0, 1);
        assert!(row[0].abs() < 1e-12 && (row[1] - 2.0).abs() < 1e-12);
        assert!((row[2] - PI / 2.0).abs() < 1e-12);
        assert!((a.get(0, 3)[2] + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 1), vec![vec![0], vec![1]]);
        assert_eq!(monomials(2, 1).len(), 3);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 3).len(), 20);
        let attrs = PairAttributes {
            frames: 1,
            pairs_per_frame: 1,
            dim: 2,
            values: vec![2.0, 3.0],
        };
        assert_eq!(
            polynomial_features(&attrs, 2).1,
            vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn wrong_node_count_rejected() {
        assert!(pair_attributes(&[[0.0; 2]; 5], 2, &[], Variant::Invariant, 1).is_err());
        assert!(pair_attributes(&[[0.0; 2]; 4], 2, &[(0, 2)], Variant::Invariant, 1).is_err());
    }
}
