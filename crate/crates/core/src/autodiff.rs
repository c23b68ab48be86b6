//! Differentiable maps with reverse-mode vector-Jacobian products.
//!
//! There is no tape: every built-in map writes its own analytic pullback.
//! [`DiffMap::linearize`] evaluates the map once and returns a
//! [`Linearization`] holding whatever forward state the pullback needs, so
//! many cotangents can be pulled back through one forward pass.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::Matrix;

/// The value of a map at a fixed input together with its pullback.
pub trait Linearization: Send + Sync {
    fn value(&self) -> &[f64];
    /// `Jᵀ·cot` at the linearization point.
    fn vjp(&self, cot: &[f64]) -> Result<Vec<f64>>;
}

pub trait DiffMap: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>>;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.linearize(x)?.value().to_vec())
    }

    fn vjp(&self, x: &[f64], cot: &[f64]) -> Result<Vec<f64>> {
        self.linearize(x)?.vjp(cot)
    }
}

pub type MapRef = Arc<dyn DiffMap>;

/// A linearization with a precomputed value and a pullback closure.
pub struct Lin<F> {
    value: Vec<f64>,
    pullback: F,
}

impl<F> Lin<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync,
{
    pub fn new(value: Vec<f64>, pullback: F) -> Self {
        Lin { value, pullback }
    }

    pub fn boxed<'a>(value: Vec<f64>, pullback: F) -> Box<dyn Linearization + 'a>
    where
        F: 'a,
    {
        Box::new(Lin::new(value, pullback))
    }
}

impl<F> Linearization for Lin<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync,
{
    fn value(&self) -> &[f64] {
        &self.value
    }

    fn vjp(&self, cot: &[f64]) -> Result<Vec<f64>> {
        ensure_len("vjp cotangent", self.value.len(), cot)?;
        (self.pullback)(cot)
    }
}

pub struct Identity(pub usize);

impl DiffMap for Identity {
    fn in_dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        self.0
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("identity input", self.0, x)?;
        Ok(Lin::boxed(x.to_vec(), |c: &[f64]| Ok(c.to_vec())))
    }
}

/// `x ↦ A·x + b`.
pub struct Affine {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
}

impl Affine {
    pub fn linear(matrix: Matrix) -> Self {
        let offset = vec![0.0; matrix.rows()];
        Affine { matrix, offset }
    }
}

impl DiffMap for Affine {
    fn in_dim(&self) -> usize {
        self.matrix.cols()
    }
    fn out_dim(&self) -> usize {
        self.matrix.rows()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        let mut y = self.matrix.mat_vec(x)?;
        y.iter_mut().zip(&self.offset).for_each(|(v, b)| *v += b);
        Ok(Lin::boxed(y, move |c: &[f64]| self.matrix.tr_mat_vec(c)))
    }
}

/// A map defined by closures; used for small analytic examples and tests.
pub struct FnMap<E, V> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub eval: E,
    pub vjp: V,
}

impl<E, V> DiffMap for FnMap<E, V>
where
    E: Fn(&[f64]) -> Vec<f64> + Send + Sync,
    V: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("closure map input", self.in_dim, x)?;
        let point = x.to_vec();
        let y = (self.eval)(x);
        ensure_len("closure map output", self.out_dim, &y)?;
        Ok(Lin::boxed(y, move |c: &[f64]| Ok((self.vjp)(&point, c))))
    }
}

/// `outer ∘ inner`.
pub struct Compose {
    outer: MapRef,
    inner: MapRef,
}

impl Compose {
    pub fn new(outer: MapRef, inner: MapRef) -> Result<Self> {
        if outer.in_dim() != inner.out_dim() {
            return Err(Error::dims("compose (outer.in_dim vs inner.out_dim)", outer.in_dim(), inner.out_dim()));
        }
        Ok(Compose { outer, inner })
    }
}

pub fn compose(outer: MapRef, inner: MapRef) -> Result<MapRef> {
    Ok(Arc::new(Compose::new(outer, inner)?))
}

struct ComposeLin<'a> {
    outer: Box<dyn Linearization + 'a>,
    inner: Box<dyn Linearization + 'a>,
}

impl Linearization for ComposeLin<'_> {
    fn value(&self) -> &[f64] {
        self.outer.value()
    }
    fn vjp(&self, cot: &[f64]) -> Result<Vec<f64>> {
        let mid = self.outer.vjp(cot)?;
        self.inner.vjp(&mid)
    }
}

impl DiffMap for Compose {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.outer.out_dim()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        let inner = self.inner.linearize(x)?;
        let outer = self.outer.linearize(inner.value())?;
        Ok(Box::new(ComposeLin { outer, inner }))
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.outer.eval(&self.inner.eval(x)?)
    }
}

/// Keeps the listed output coordinates of `inner`.
pub struct Select {
    inner: MapRef,
    indices: Vec<usize>,
}

impl Select {
    pub fn new(inner: MapRef, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= inner.out_dim()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: inner.out_dim(),
            });
        }
        Ok(Select { inner, indices })
    }
}

impl DiffMap for Select {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.indices.len()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        let lin = self.inner.linearize(x)?;
        let y = self.indices.iter().map(|&i| lin.value()[i]).collect();
        let full = self.inner.out_dim();
        Ok(Lin::boxed(y, move |c: &[f64]| {
            let mut big = vec![0.0; full];
            for (&i, &ci) in self.indices.iter().zip(c) {
                big[i] += ci;
            }
            lin.vjp(&big)
        }))
    }
}

/// Jacobian assembled row by row from one vjp per output coordinate.
///
/// The forward pass is shared; rows are pulled back in parallel and written in
/// index order, so the result does not depend on the thread count.
pub fn jacobian_direct(h: &dyn DiffMap, u: &[f64]) -> Result<Matrix> {
    ensure_len("jacobian input", h.in_dim(), u)?;
    ensure_finite("jacobian input", u)?;
    let lin = h.linearize(u)?;
    let (m, n) = (h.out_dim(), h.in_dim());
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            let row = lin.vjp(&e)?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("jacobian row {k}")));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(m * n);
    for r in rows {
        data.extend(r);
    }
    Ok(Matrix::from_raw(m, n, data))
}

/// Central-difference Jacobian `(h(u+δe_k) − h(u−δe_k)) / 2δ`, column by column.
pub fn finite_diff_jacobian(h: &dyn DiffMap, u: &[f64], step: f64) -> Result<Matrix> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    ensure_len("finite-difference input", h.in_dim(), u)?;
    let cols: Vec<Vec<f64>> = (0..h.in_dim())
        .into_par_iter()
        .map(|k| {
            let mut plus = u.to_vec();
            let mut minus = u.to_vec();
            plus[k] += step;
            minus[k] -= step;
            let fp = h.eval(&plus)?;
            let fm = h.eval(&minus)?;
            Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect())
        })
        .collect::<Result<_>>()?;
    let m = h.out_dim();
    let mut j = Matrix::zeros(m, cols.len());
    for (k, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            j[(i, k)] = v;
        }
    }
    crate::error::ensure_finite("finite-difference jacobian", j.as_slice())?;
    Ok(j)
}

/// Relative disagreement between `vjp(u, c)` and `Jᵀc` with `J` from central
/// differences: `‖vjp − J_fdᵀc‖ / max(‖vjp‖, ‖J_fdᵀc‖, floor)`.
pub fn vjp_check(h: &dyn DiffMap, u: &[f64], cot: &[f64], step: f64) -> Result<f64> {
    let analytic = h.vjp(u, cot)?;
    let fd = finite_diff_jacobian(h, u, step)?.tr_mat_vec(cot)?;
    let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = crate::linalg::norm(&analytic).max(crate::linalg::norm(&fd)).max(1e-12);
    Ok(diff / scale)
}

/// Central-difference check along a few input directions, for maps whose
/// input is too wide for a full finite-difference Jacobian.
///
/// Compares `⟨vjp(u, c), d⟩` with `⟨c, (h(u+δd) − h(u−δd)) / 2δ⟩` for every
/// direction `d` and returns the relative error of the stacked values.
pub fn directional_check(h: &dyn DiffMap, u: &[f64], cot: &[f64], directions: &[Vec<f64>], step: f64) -> Result<f64> {
    let analytic = h.vjp(u, cot)?;
    let mut a = Vec::with_capacity(directions.len());
    let mut b = Vec::with_capacity(directions.len());
    for d in directions {
        ensure_len("check direction", u.len(), d)?;
        let plus: Vec<f64> = u.iter().zip(d).map(|(x, e)| x + step * e).collect();
        let minus: Vec<f64> = u.iter().zip(d).map(|(x, e)| x - step * e).collect();
        let fp = h.eval(&plus)?;
        let fm = h.eval(&minus)?;
        a.push(crate::linalg::dot(&analytic, d));
        b.push(cot.iter().zip(fp.iter().zip(&fm)).map(|(c, (p, m))| c * (p - m) / (2.0 * step)).sum::<f64>());
    }
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = crate::linalg::norm(&a).max(crate::linalg::norm(&b)).max(1e-12);
    Ok(diff / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream};

    fn square() -> MapRef {
        Arc::new(FnMap {
            in_dim: 1,
            out_dim: 1,
            eval: |x: &[f64]| vec![x[0] * x[0]],
            vjp: |x: &[f64], c: &[f64]| vec![2.0 * x[0] * c[0]],
        })
    }

    fn cube() -> MapRef {
        Arc::new(FnMap {
            in_dim: 1,
            out_dim: 1,
            eval: |x: &[f64]| vec![x[0] * x[0] * x[0]],
            vjp: |x: &[f64], c: &[f64]| vec![3.0 * x[0] * x[0] * c[0]],
        })
    }

    fn linear(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, "linear");
        Matrix::new(rows, cols, normal_vec(&mut rng, rows * cols, 1.0)).unwrap()
    }

    #[test]
    fn identity_composition_is_transparent() {
        let a = linear(3, 4, 1);
        let g: MapRef = Arc::new(Affine::linear(a.clone()));
        let c = compose(Arc::new(Identity(3)), g.clone()).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(c.eval(&x).unwrap(), g.eval(&x).unwrap());
        assert_eq!(jacobian_direct(c.as_ref(), &x).unwrap(), a);
    }

    #[test]
    fn linear_chain_rule() {
        let a = linear(2, 3, 2);
        let b = linear(3, 4, 3);
        let c = compose(Arc::new(Affine::linear(a.clone())), Arc::new(Affine::linear(b.clone()))).unwrap();
        let cot = [1.5, -0.5];
        let got = c.vjp(&[0.0; 4], &cot).unwrap();
        let expect = b.tr_mat_vec(&a.tr_mat_vec(&cot).unwrap()).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_rejects_mismatch() {
        let r = Compose::new(Arc::new(Identity(3)), Arc::new(Identity(2)));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn analytic_jacobians() {
        assert_eq!(jacobian_direct(square().as_ref(), &[3.0]).unwrap().as_slice(), &[6.0]);
        let a = linear(4, 3, 4);
        let j = finite_diff_jacobian(&Affine::linear(a.clone()), &[0.1, 0.2, 0.3], 1e-3).unwrap();
        assert!(j.sub(&a).unwrap().max_abs() < 1e-10);
        let d = finite_diff_jacobian(cube().as_ref(), &[2.0], 1e-5).unwrap();
        assert!((d[(0, 0)] - 12.0).abs() < 1e-7);
    }

    #[test]
    fn non_finite_rows_are_named() {
        let bad = FnMap {
            in_dim: 1,
            out_dim: 2,
            eval: |x: &[f64]| vec![x[0], x[0]],
            vjp: |_x: &[f64], c: &[f64]| vec![if c[1] != 0.0 { f64::NAN } else { c[0] }],
        };
        match jacobian_direct(&bad, &[1.0]) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("row 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn select_is_a_projection() {
        let a = linear(5, 3, 5);
        let full: MapRef = Arc::new(Affine::linear(a));
        let sel = Select::new(full.clone(), vec![4, 1]).unwrap();
        let x = [0.2, 0.4, -0.1];
        let y = full.eval(&x).unwrap();
        assert_eq!(sel.eval(&x).unwrap(), vec![y[4], y[1]]);
        assert!(vjp_check(&sel, &x, &[1.0, -2.0], 1e-5).unwrap() < 1e-8);
        assert!(Select::new(full, vec![5]).is_err());
    }

    #[test]
    fn compose_is_associative_in_evaluation() {
        let a: MapRef = Arc::new(Affine::linear(linear(3, 3, 6)));
        let b: MapRef = Arc::new(FnMap {
            in_dim: 3,
            out_dim: 3,
            eval: |x: &[f64]| x.iter().map(|v| v.tanh()).collect(),
            vjp: |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(v, ci)| (1.0 - v.tanh().powi(2)) * ci).collect(),
        });
        let c: MapRef = Arc::new(Affine::linear(linear(3, 3, 7)));
        let left = compose(compose(a.clone(), b.clone()).unwrap(), c.clone()).unwrap();
        let right = compose(a, compose(b, c).unwrap()).unwrap();
        let x = [0.1, -0.7, 1.3];
        assert_eq!(left.eval(&x).unwrap(), right.eval(&x).unwrap());
        assert!(vjp_check(left.as_ref(), &x, &[1.0, 0.5, -0.25], 1e-5).unwrap() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn vjp_is_linear_in_cotangent(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = linear(4, 3, seed);
            let map = Affine::linear(m);
            let mut rng = stream(seed, "cot");
            let x = normal_vec(&mut rng, 3, 1.0);
            let c1 = normal_vec(&mut rng, 4, 1.0);
            let c2 = normal_vec(&mut rng, 4, 1.0);
            let mix: Vec<f64> = c1.iter().zip(&c2).map(|(p, q)| a * p + b * q).collect();
            let lhs = map.vjp(&x, &mix).unwrap();
            let r1 = map.vjp(&x, &c1).unwrap();
            let r2 = map.vjp(&x, &c2).unwrap();
            for i in 0..3 {
                let rhs = a * r1[i] + b * r2[i];
                proptest::prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
