use std::cmp::Ordering;

use super::Matrix;
use crate::error::{Error, Result};

const SWEEP_BUDGET: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix: values sorted descending and
/// unit eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V·diag(λ)·Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.vectors.rows();
        let mut out = Matrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            for i in 0..n {
                let vik = self.vectors[(i, k)] * lambda;
                if vik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out
    }

    pub fn top(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Cyclic Jacobi eigensolver for real symmetric matrices.
///
/// Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
/// drops below `1e-12·‖G‖_F`, with a budget of 100 sweeps. Each eigenvector is
/// sign-normalized so its entry of largest magnitude is non-negative; equal
/// eigenvalues are ordered by the lexicographic order of their vectors.
pub fn sym_eig(g: &Matrix) -> Result<SymEigen> {
    if !g.is_square() {
        return Err(Error::NotSquare {
            rows: g.rows(),
            cols: g.cols(),
        });
    }
    crate::error::ensure_finite("sym_eig input", g.as_slice())?;
    let n = g.rows();
    let tolerance = 1e-8 * (1.0 + g.norm_inf());
    let asym = g.asymmetry();
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }

    let mut a = g.symmetrized()?;
    let mut v = Matrix::identity(n);
    let threshold = OFF_DIAG_TOL * a.frobenius();

    let mut converged = false;
    let mut off = off_diagonal_norm(&a);
    for _ in 0..SWEEP_BUDGET {
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        off = off_diagonal_norm(&a);
    }
    if !converged && off > threshold {
        return Err(Error::NoConvergence {
            sweeps: SWEEP_BUDGET,
            off_norm: off,
        });
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut col = v.col(k);
            normalize_sign(&mut col);
            (a[(k, k)], col)
        })
        .collect();
    pairs.sort_by(|x, y| match y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal) {
        Ordering::Equal => lexicographic_desc(&x.1, &y.1),
        other => other,
    });

    let values = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<Vec<f64>> = pairs.into_iter().map(|p| p.1).collect();
    let vectors = Matrix::from_cols(n, &cols)?;
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Flips `col` so that its entry of largest magnitude is non-negative.
pub(crate) fn normalize_sign(col: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|&x| x < 0.0) {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, "sym_eig-test");
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    #[test]
    fn identity_has_unit_values() {
        let e = sym_eig(&Matrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert!(e.vectors.orthonormality_error() < 1e-15);
        // tie broken lexicographically: e1 before e2
        assert_eq!(e.vectors.col(0), vec![1.0, 0.0]);
    }

    #[test]
    fn diagonal_case() {
        let e = sym_eig(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors.col(0), vec![0.0, 1.0]);
        assert_eq!(e.vectors.col(1), vec![1.0, 0.0]);
    }

    #[test]
    fn random_reconstruction() {
        let g = random_symmetric(8, 11);
        let e = sym_eig(&g).unwrap();
        let scale = 1.0 + g.norm_inf();
        assert!(e.reconstruct().sub(&g).unwrap().max_abs() < 1e-8 * scale);
        assert!(e.vectors.orthonormality_error() < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..8 {
            let col = e.vectors.col(k);
            let big = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn zero_matrix_converges_immediately() {
        let e = sym_eig(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e.values, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3)), Err(Error::NotSquare { .. })));
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn psd_gram_has_nonnegative_values() {
        let mut rng = stream(5, "psd");
        let j = Matrix::new(5, 9, (0..45).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let e = sym_eig(&j.gram()).unwrap();
        let floor = -1e-9 * (1.0 + e.top());
        assert!(e.values.iter().all(|&v| v >= floor));
        // rank 5 in 9 dimensions
        assert!(e.values[5..].iter().all(|v| v.abs() < 1e-12));
    }
}
