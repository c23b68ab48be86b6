//! Projected gradient ascent on a classifier logit, restricted to a subspace.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::DiffMap;
use crate::error::{ensure_len, Error, Result};
use crate::image::Image;
use crate::linalg::{norm, Matrix};
use crate::subspace::Subspace;

/// Rejected steps are retried at half size this many times before giving up.
pub const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub target_logit: Option<f64>,
    pub plateau_tol: f64,
    /// Upper bound on `‖Δu‖`.
    pub magnitude_cap: Option<f64>,
    /// Minimize the logit instead.
    pub descend: bool,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            step_size: 0.05,
            max_iters: 200,
            target_logit: None,
            plateau_tol: 1e-6,
            magnitude_cap: None,
            descend: false,
        }
    }
}

impl CounterfactualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be >= 0, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(Error::Config(format!("plateau_tol must be >= 0, got {}", self.plateau_tol)));
        }
        if let Some(c) = self.magnitude_cap {
            if !(c > 0.0) {
                return Err(Error::Config(format!("magnitude_cap must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn sign(&self) -> f64 {
        if self.descend {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    TargetReached,
    Plateau,
    IterBudget,
    CapReached,
    NumericFailure(String),
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::TargetReached => f.write_str("target_reached"),
            StopReason::Plateau => f.write_str("plateau"),
            StopReason::IterBudget => f.write_str("iter_budget"),
            StopReason::CapReached => f.write_str("cap_reached"),
            StopReason::NumericFailure(m) => write!(f, "numeric_failure: {m}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CounterfactualResult {
    pub delta_u: Vec<f64>,
    /// Subspace coordinates of `delta_u`.
    pub coords: Vec<f64>,
    /// `(iteration, logit)`, starting with iteration 0 at `Δu = 0`.
    pub trajectory: Vec<(usize, f64)>,
    pub stop_reason: StopReason,
    pub before: Image,
    pub after: Image,
}

impl CounterfactualResult {
    pub fn gain(&self) -> f64 {
        self.trajectory.last().unwrap().1 - self.trajectory[0].1
    }

    /// `‖(I − SSᵀ)·Δu‖`.
    pub fn containment_residual(&self, s: &Subspace) -> Result<f64> {
        let p = s.project(&self.delta_u)?;
        Ok(norm(&crate::linalg::sub(&self.delta_u, &p)))
    }

    pub fn trajectory_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "logit"])?;
        for (i, l) in &self.trajectory {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

fn scalar(h: &dyn DiffMap, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let lin = h.linearize(u)?;
    let v = lin.value()[0];
    let g = lin.vjp(&[1.0])?;
    Ok((v, g))
}

/// Ascends `classifier_on_u` from `u` with `Δu = S·c`. `render` maps a code
/// to its image for the before/after pair.
pub fn cf_optimize(
    classifier_on_u: &dyn DiffMap,
    render: &dyn Fn(&[f64]) -> Result<Image>,
    u: &[f64],
    s: &Subspace,
    cfg: &CounterfactualConfig,
) -> Result<CounterfactualResult> {
    cfg.validate()?;
    if classifier_on_u.out_dim() != 1 {
        return Err(Error::dims("classifier output", 1, classifier_on_u.out_dim()));
    }
    ensure_len("counterfactual code", s.basis.rows(), u)?;
    ensure_len("counterfactual code", classifier_on_u.in_dim(), u)?;
    let basis: &Matrix = &s.basis;
    let sign = cfg.sign();
    let reached = |l: f64| cfg.target_logit.is_some_and(|t| sign * l >= sign * t);
    let at = |c: &[f64]| -> Result<Vec<f64>> {
        let d = basis.mat_vec(c)?;
        Ok(u.iter().zip(&d).map(|(a, b)| a + b).collect())
    };

    let mut coords = vec![0.0; basis.cols()];
    let (mut logit, mut grad) = scalar(classifier_on_u, u)?;
    if !logit.is_finite() {
        return Err(Error::NonFinite("counterfactual starting logit".into()));
    }
    let mut trajectory = vec![(0, logit)];
    let mut stop = StopReason::IterBudget;

    if reached(logit) {
        stop = StopReason::TargetReached;
    } else {
        'outer: for it in 1..=cfg.max_iters {
            if grad.iter().any(|g| !g.is_finite()) {
                stop = StopReason::NumericFailure(format!("non-finite gradient at iteration {it}"));
                break;
            }
            let dir = basis.tr_mat_vec(&grad)?;
            let mut eta = cfg.step_size;
            for _ in 0..=MAX_HALVINGS {
                let mut cand: Vec<f64> = coords.iter().zip(&dir).map(|(c, d)| c + sign * eta * d).collect();
                let mut capped = false;
                if let Some(cap) = cfg.magnitude_cap {
                    let n = norm(&cand);
                    if n > cap {
                        cand.iter_mut().for_each(|c| *c *= cap / n);
                        capped = true;
                    }
                }
                let (l, g) = match scalar(classifier_on_u, &at(&cand)?) {
                    Ok(v) => v,
                    Err(Error::NonFinite(m)) => {
                        stop = StopReason::NumericFailure(m);
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                };
                if !l.is_finite() {
                    stop = StopReason::NumericFailure(format!("non-finite logit at iteration {it}"));
                    break 'outer;
                }
                let gain = sign * (l - logit);
                if gain > 0.0 {
                    coords = cand;
                    logit = l;
                    grad = g;
                    trajectory.push((it, logit));
                    if reached(logit) {
                        stop = StopReason::TargetReached;
                    } else if capped {
                        stop = StopReason::CapReached;
                    } else if gain < cfg.plateau_tol {
                        stop = StopReason::Plateau;
                    } else {
                        continue 'outer;
                    }
                    break 'outer;
                }
                eta *= 0.5;
            }
            stop = StopReason::Plateau;
            break;
        }
    }

    let delta_u = basis.mat_vec(&coords)?;
    let final_u = at(&coords)?;
    Ok(CounterfactualResult {
        before: render(u)?,
        after: render(&final_u)?,
        delta_u,
        coords,
        trajectory,
        stop_reason: stop,
    })
}

/// Per-pixel mean absolute channel difference, scaled so the largest is 1.
pub fn difference_map(before: &Image, after: &Image) -> Result<Image> {
    if before.height != after.height || before.width != after.width {
        return Err(Error::dims("difference map", before.values.len(), after.values.len()));
    }
    let d: Vec<f64> = before
        .values
        .chunks(3)
        .zip(after.values.chunks(3))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0)
        .collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Ok(Image {
        height: before.height,
        width: before.width,
        values: d.iter().flat_map(|v| [v * scale; 3]).collect(),
    })
}

/// Fraction of a difference map's mass inside `mask`.
pub fn mass_inside(diff: &Image, mask: &crate::criteria::PixelMask) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for (p, &b) in mask.bits.iter().enumerate() {
        let v = diff.values[3 * p];
        total += v;
        if b {
            inside += v;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Affine, FnMap};
    use crate::synth::{LatentSpace, LatentSpaceSpec};

    fn subspace(basis: Matrix) -> Subspace {
        let dim = basis.rows();
        let k = basis.cols();
        Subspace {
            basis,
            activations: vec![1.0; k],
            formulation: String::new(),
            space: LatentSpaceSpec {
                space: LatentSpace::Style,
                dim,
            },
            provenance: vec![],
        }
    }

    fn blank(_: &[f64]) -> Result<Image> {
        Ok(Image::filled(1, 1, [0.0; 3]))
    }

    #[test]
    fn linear_logit_moves_along_projection() {
        let h = Affine::linear(Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let s = subspace(Matrix::identity(3).select_cols(&[0, 2]));
        let cfg = CounterfactualConfig {
            max_iters: 10,
            ..Default::default()
        };
        let r = cf_optimize(&h, &blank, &[0.0; 3], &s, &cfg).unwrap();
        assert_eq!(r.stop_reason, StopReason::IterBudget);
        assert_eq!(r.trajectory.len(), 11);
        assert!((r.delta_u[0] - 0.5).abs() < 1e-12 && r.delta_u[1] == 0.0 && (r.delta_u[2] - 1.5).abs() < 1e-12);
        assert!(r.containment_residual(&s).unwrap() < 1e-12);
        assert!((r.gain() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_step_and_orthogonal_subspace_plateau() {
        let h = Affine::linear(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let s = subspace(Matrix::identity(2).select_cols(&[0]));
        let cfg = CounterfactualConfig {
            step_size: 0.0,
            ..Default::default()
        };
        let r = cf_optimize(&h, &blank, &[0.3, 0.0], &s, &cfg).unwrap();
        assert_eq!(r.delta_u, vec![0.0, 0.0]);
        assert_eq!(r.trajectory, vec![(0, 0.3)]);
        assert_eq!(r.stop_reason, StopReason::Plateau);
        let ortho = subspace(Matrix::identity(2).select_cols(&[1]));
        let r = cf_optimize(&h, &blank, &[0.3, 0.0], &ortho, &CounterfactualConfig::default()).unwrap();
        assert_eq!(r.gain(), 0.0);
    }

    #[test]
    fn target_cap_and_descent() {
        let h = Affine::linear(Matrix::from_rows(&[vec![2.0]]).unwrap());
        let s = subspace(Matrix::identity(1));
        let target = CounterfactualConfig {
            target_logit: Some(1.0),
            ..Default::default()
        };
        let r = cf_optimize(&h, &blank, &[1.0], &s, &target).unwrap();
        assert_eq!((r.stop_reason.clone(), r.trajectory.len()), (StopReason::TargetReached, 1));
        let r = cf_optimize(&h, &blank, &[0.0], &s, &target).unwrap();
        assert_eq!(r.stop_reason, StopReason::TargetReached);
        assert!(r.trajectory.last().unwrap().1 >= 1.0);
        let cap = CounterfactualConfig {
            magnitude_cap: Some(0.25),
            ..Default::default()
        };
        let r = cf_optimize(&h, &blank, &[0.0], &s, &cap).unwrap();
        assert_eq!(r.stop_reason, StopReason::CapReached);
        assert!((norm(&r.delta_u) - 0.25).abs() < 1e-15);
        let down = CounterfactualConfig {
            descend: true,
            max_iters: 5,
            ..Default::default()
        };
        let r = cf_optimize(&h, &blank, &[0.0], &s, &down).unwrap();
        assert!(r.trajectory.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn halving_keeps_trajectory_monotone() {
        // steep quadratic: full steps overshoot the maximum at 1
        let h = FnMap {
            in_dim: 1,
            out_dim: 1,
            eval: |x: &[f64]| vec![-50.0 * (x[0] - 1.0).powi(2)],
            vjp: |x: &[f64], c: &[f64]| vec![-100.0 * (x[0] - 1.0) * c[0]],
        };
        let s = subspace(Matrix::identity(1));
        let r = cf_optimize(&h, &blank, &[0.0], &s, &CounterfactualConfig::default()).unwrap();
        assert!(r.trajectory.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!((r.delta_u[0] - 1.0).abs() < 1e-2);
        assert_eq!(r.stop_reason, StopReason::Plateau);
    }

    #[test]
    fn coordinate_and_projected_gradient_views_agree() {
        let a = Matrix::from_rows(&[vec![0.3, -1.0, 2.0, 0.5]]).unwrap();
        let basis = crate::linalg::orthonormalize(
            &Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.5, -1.0]]).unwrap(),
            1e-12,
        )
        .unwrap()
        .basis;
        let s = subspace(basis.clone());
        let cfg = CounterfactualConfig {
            max_iters: 1,
            ..Default::default()
        };
        let r = cf_optimize(&Affine::linear(a.clone()), &blank, &[0.0; 4], &s, &cfg).unwrap();
        let g = a.transpose().col(0);
        let projected: Vec<f64> = s.project(&g).unwrap().iter().map(|v| 0.05 * v).collect();
        for (x, y) in r.delta_u.iter().zip(&projected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_map_examples() {
        let a = Image::filled(3, 3, [0.2, 0.4, 0.6]);
        let d = difference_map(&a, &a).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.set(1, 2, 0, 0.9);
        let d = difference_map(&a, &b).unwrap();
        for p in 0..9 {
            let expect = if p == 7 { 1.0 } else { 0.0 };
            assert_eq!(d.rgb(p), [expect; 3]);
        }
        assert!(difference_map(&a, &Image::filled(2, 3, [0.0; 3])).is_err());
    }
}
