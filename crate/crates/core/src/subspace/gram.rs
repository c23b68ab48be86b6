//! `JᵀJ` of a criterion at one or more latent points.

use rayon::prelude::*;

use crate::autodiff::{jacobian_direct, DiffMap, MapRef};
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{norm, Matrix};

/// Default perturbation size of the one-hot trick.
pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GramMethod {
    Direct,
    Trick(f64),
}

impl GramMethod {
    /// Direct when the criterion has no more outputs than inputs.
    pub fn auto(h: &dyn DiffMap, alpha: f64) -> Self {
        if h.out_dim() <= h.in_dim() {
            GramMethod::Direct
        } else {
            GramMethod::Trick(alpha)
        }
    }

    pub fn name(&self) -> String {
        match self {
            GramMethod::Direct => "direct".into(),
            GramMethod::Trick(a) => format!("trick({a})"),
        }
    }
}

/// How a plan picks the method per criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Auto,
    Direct,
    Trick,
}

impl MethodChoice {
    pub fn resolve(self, h: &dyn DiffMap, alpha: f64) -> GramMethod {
        match self {
            MethodChoice::Auto => GramMethod::auto(h, alpha),
            MethodChoice::Direct => GramMethod::Direct,
            MethodChoice::Trick => GramMethod::Trick(alpha),
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "direct" => Ok(MethodChoice::Direct),
            "trick" => Ok(MethodChoice::Trick),
            other => Err(Error::InvalidArgument(format!("unknown Gram method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: Matrix,
    pub source: String,
    pub codes: Vec<Vec<f64>>,
    pub method: GramMethod,
}

impl Gram {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// `JᵀJ` from the row-by-row Jacobian.
pub fn gram_direct(h: &dyn DiffMap, u: &[f64]) -> Result<Matrix> {
    Ok(jacobian_direct(h, u)?.gram())
}

/// Row `k` is `∂ℓ/∂n` at `n = e_k` over `2α²`, with
/// `ℓ(n) = ‖h(u + αn) − h(u)‖²`; the result is symmetrized.
pub fn gram_trick(h: &dyn DiffMap, u: &[f64], alpha: f64) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    ensure_len("gram input", h.in_dim(), u)?;
    ensure_finite("gram input", u)?;
    let base = h.eval(u)?;
    let n = h.in_dim();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut shifted = u.to_vec();
            shifted[k] += alpha;
            let lin = h.linearize(&shifted)?;
            let diff: Vec<f64> = lin.value().iter().zip(&base).map(|(a, b)| a - b).collect();
            if !norm(&diff).is_finite() {
                return Err(Error::NonFinite(format!("trick loss at direction {k}")));
            }
            // ∂ℓ/∂n = 2α·J(u+αn)ᵀ·diff
            let g = lin.vjp(&diff)?;
            let scale = 1.0 / alpha;
            Ok(g.into_iter().map(|v| v * scale).collect())
        })
        .collect::<Result<_>>()?;
    let mut m = Matrix::zeros(n, n);
    for (k, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(k, j)] = v;
        }
    }
    m.symmetrized()
}

pub fn gram(h: &dyn DiffMap, u: &[f64], method: GramMethod) -> Result<Matrix> {
    match method {
        GramMethod::Direct => gram_direct(h, u),
        GramMethod::Trick(a) => gram_trick(h, u, a),
    }
}

/// Sum of per-code Grams; `builder` makes the criterion for each code (masks
/// and meshes are frozen per code).
pub fn gram_batch<F>(builder: F, codes: &[Vec<f64>], method: MethodChoice, alpha: f64, source: &str) -> Result<Gram>
where
    F: Fn(usize) -> Result<MapRef>,
{
    if codes.is_empty() {
        return Err(Error::InvalidArgument("gram_batch needs at least one code".into()));
    }
    let mut total: Option<Matrix> = None;
    let mut used = None;
    for (i, u) in codes.iter().enumerate() {
        let h = builder(i)?;
        let m = method.resolve(h.as_ref(), alpha);
        used.get_or_insert(m);
        let g = gram(h.as_ref(), u, m)?;
        total = Some(match total {
            None => g,
            Some(t) => t.add(&g)?,
        });
    }
    Ok(Gram {
        matrix: total.expect("non-empty"),
        source: source.to_string(),
        codes: codes.to_vec(),
        method: used.expect("non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Affine, FnMap};
    use crate::rng::{normal_vec, stream};
    use std::sync::Arc;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        Matrix::new(r, c, normal_vec(&mut stream(seed, "m"), r * c, 1.0)).unwrap()
    }

    #[test]
    fn linear_maps_are_exact() {
        let a = random_matrix(5, 4, 1);
        let h = Affine::linear(a.clone());
        let u = vec![0.3, -0.2, 1.0, 0.5];
        let direct = gram_direct(&h, &u).unwrap();
        assert_eq!(direct, a.gram());
        assert_eq!(direct.asymmetry(), 0.0);
        for alpha in [1e-1, 1e-3] {
            let t = gram_trick(&h, &u, alpha).unwrap();
            assert!(t.sub(&direct).unwrap().max_abs() < 1e-9 * (1.0 + direct.max_abs()));
        }
    }

    #[test]
    fn square_map_trick_is_first_order() {
        let sq = FnMap {
            in_dim: 1,
            out_dim: 1,
            eval: |x: &[f64]| vec![x[0] * x[0]],
            vjp: |x: &[f64], c: &[f64]| vec![2.0 * x[0] * c[0]],
        };
        let g = gram_trick(&sq, &[1.0], 1e-3).unwrap();
        assert!((g[(0, 0)] - 4.0).abs() < 1e-2);
        assert_eq!(gram_direct(&sq, &[3.0]).unwrap()[(0, 0)], 36.0);
    }

    #[test]
    fn batch_sums() {
        let a = random_matrix(3, 3, 2);
        let h: MapRef = Arc::new(Affine::linear(a.clone()));
        let u = vec![0.1, 0.2, 0.3];
        let one = gram_batch(|_| Ok(h.clone()), &[u.clone()], MethodChoice::Direct, 1e-3, "a").unwrap();
        let two = gram_batch(|_| Ok(h.clone()), &[u.clone(), u], MethodChoice::Direct, 1e-3, "a").unwrap();
        assert_eq!(two.matrix, one.matrix.scale(2.0));
        assert!(gram_batch(|_| Ok(h.clone()), &[], MethodChoice::Direct, 1e-3, "a").is_err());
    }
}
