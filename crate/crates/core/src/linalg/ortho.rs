use super::{dot, norm, sym_eig, Matrix};
use crate::error::{Error, Result};

/// A matrix with orthonormal columns together with its rank.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    pub basis: Matrix,
    pub rank: usize,
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// A column is dropped when its residual after projection onto the accepted
/// columns falls below `rank_tol` times the largest input column norm. An
/// all-zero input yields a rank-0 basis.
pub fn orthonormalize(cols: &Matrix, rank_tol: f64) -> Result<OrthoBasis> {
    if cols.cols() == 0 || cols.rows() == 0 {
        return Err(Error::InvalidArgument("orthonormalize needs a non-empty matrix".into()));
    }
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let n = cols.rows();
    let inputs = cols.columns();
    let scale = inputs.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    if scale > 0.0 {
        for mut c in inputs {
            for _ in 0..2 {
                for q in &accepted {
                    let p = dot(q, &c);
                    c.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
                }
            }
            let r = norm(&c);
            if r > rank_tol * scale {
                c.iter_mut().for_each(|x| *x /= r);
                accepted.push(c);
            }
        }
    }
    let rank = accepted.len();
    Ok(OrthoBasis {
        basis: Matrix::from_cols(n, &accepted)?,
        rank,
    })
}

/// Largest principal angle between `span(a)` and `span(b)`, both orthonormal.
///
/// Computed from the residual of projecting each subspace onto the other, so
/// angles near zero are resolved to roughly machine precision rather than the
/// `√ε` floor of an arccos formulation. Subspaces of different dimension are
/// reported as `π/2`.
pub fn max_principal_angle(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(Error::dims("principal angle ambient dimension", a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    if a.cols() == 0 {
        return Ok(0.0);
    }
    let one_sided = |x: &Matrix, y: &Matrix| -> Result<f64> {
        let proj = x.matmul(&x.tr_matmul(y)?)?;
        let resid = y.sub(&proj)?;
        let sigma2 = sym_eig(&resid.gram())?.top().max(0.0);
        Ok(sigma2.sqrt().min(1.0).asin())
    };
    Ok(one_sided(a, b)?.max(one_sided(b, a)?))
}
