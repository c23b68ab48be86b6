//! Gram matrices, activate/suppress eigen splits, and subspaces built by
//! consecutive intersection.

pub mod gram;
pub mod plan;
pub mod store;

use crate::criteria::CriterionContext;
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, sym_eig, Matrix};
use crate::synth::LatentSpaceSpec;

pub use gram::{gram, gram_batch, gram_direct, gram_trick, Gram, GramMethod, MethodChoice, DEFAULT_ALPHA};
pub use plan::{named_plan, FormulationPlan, Role, Stage, NAMED_PLANS};

/// Default relative eigenvalue threshold.
pub const DEFAULT_EPS: f64 = 3e-3;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EigenSplit {
    pub v: Matrix,
    pub w: Matrix,
    pub values: Vec<f64>,
    pub epsilon: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// Eigenvectors with `λ ≥ ε·λ₀` go to `V`, the rest to `W`; `λ₀ ≤ 0` puts
/// everything in `W`.
pub fn eigen_split(g: &Matrix, eps: f64) -> Result<EigenSplit> {
    check_eps(eps)?;
    let e = sym_eig(g)?;
    let top = e.top();
    let cut = if top > 0.0 {
        e.values.iter().take_while(|&&l| l >= eps * top).count()
    } else {
        0
    };
    let all: Vec<usize> = (0..e.values.len()).collect();
    Ok(EigenSplit {
        v: e.vectors.select_cols(&all[..cut]),
        w: e.vectors.select_cols(&all[cut..]),
        values: e.values,
        epsilon: eps,
    })
}

fn restricted(b: &Matrix, g: &Matrix) -> Result<Matrix> {
    b.tr_matmul(&g.matmul(b)?)?.symmetrized()
}

fn reortho(m: &Matrix) -> Result<Matrix> {
    if m.cols() == 0 {
        return Ok(m.clone());
    }
    Ok(orthonormalize(m, RANK_TOL)?.basis)
}

/// Keeps the directions of `span(b)` along which `g` stays below `ε·λ₀(g)`.
pub fn intersect_suppress(b: &Matrix, g: &Matrix, eps: f64) -> Result<Matrix> {
    check_eps(eps)?;
    if b.rows() != g.rows() {
        return Err(Error::dims("suppress Gram", b.rows(), g.rows()));
    }
    let top = sym_eig(g)?.top();
    if top <= 0.0 {
        return Ok(b.clone());
    }
    let e = sym_eig(&restricted(b, g)?)?;
    let keep: Vec<usize> = (0..e.values.len()).filter(|&k| e.values[k] < eps * top).collect();
    if keep.is_empty() {
        return Err(Error::EmptyIntersection {
            stage: "suppress".into(),
            activate_eps: f64::NAN,
            stage_eps: eps,
        });
    }
    reortho(&b.matmul(&e.vectors.select_cols(&keep))?)
}

/// Rotates `span(b)` onto the eigenvectors of `bᵀ·g₀·b`, keeping those with
/// `λ ≥ ε·λ₀(g₀)` in descending order. Returns the basis and its `λ`s.
pub fn sort_by_activation(b: &Matrix, g0: &Matrix, eps: f64) -> Result<(Matrix, Vec<f64>)> {
    check_eps(eps)?;
    if b.rows() != g0.rows() {
        return Err(Error::dims("activate Gram", b.rows(), g0.rows()));
    }
    let top = sym_eig(g0)?.top();
    let empty = || Error::EmptyIntersection {
        stage: "activate".into(),
        activate_eps: eps,
        stage_eps: eps,
    };
    if top <= 0.0 || b.cols() == 0 {
        return Err(empty());
    }
    let e = sym_eig(&restricted(b, g0)?)?;
    let cut = e.values.iter().take_while(|&&l| l >= eps * top).count();
    if cut == 0 {
        return Err(empty());
    }
    let idx: Vec<usize> = (0..cut).collect();
    let basis = reortho(&b.matmul(&e.vectors.select_cols(&idx))?)?;
    Ok((basis, e.values[..cut].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub criterion: String,
    pub role: Role,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct Subspace {
    /// Orthonormal columns, most activating first.
    pub basis: Matrix,
    /// `vₖᵀ·G₀·vₖ` per column.
    pub activations: Vec<f64>,
    pub formulation: String,
    pub space: LatentSpaceSpec,
    pub provenance: Vec<Provenance>,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn component(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.dim() {
            return Err(Error::IndexOutOfRange { index: k, len: self.dim() });
        }
        Ok(self.basis.col(k))
    }

    /// `S·Sᵀ·v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.basis.mat_vec(&self.basis.tr_mat_vec(v)?)
    }

    pub fn projector(&self) -> Matrix {
        self.basis.matmul(&self.basis.transpose()).expect("square by construction")
    }
}

/// `u + magnitude·S[:, k]`.
pub fn perturb(u: &[f64], s: &Subspace, k: usize, magnitude: f64) -> Result<Vec<f64>> {
    if u.len() != s.basis.rows() {
        return Err(Error::dims("perturbed code", s.basis.rows(), u.len()));
    }
    let c = s.component(k)?;
    Ok(u.iter().zip(&c).map(|(x, d)| x + magnitude * d).collect())
}

/// Codes and frozen criterion contexts a plan is evaluated over.
pub struct BuildContext<'a> {
    pub contexts: &'a [CriterionContext],
    pub method: MethodChoice,
    pub alpha: f64,
    pub default_eps: f64,
}

/// A built subspace plus the Grams that produced it.
pub struct Discovery {
    pub subspace: Subspace,
    pub activate: Gram,
    pub suppress: Vec<Gram>,
}

pub fn discover(plan: &FormulationPlan, ctx: &BuildContext<'_>) -> Result<Discovery> {
    let first = ctx
        .contexts
        .first()
        .ok_or_else(|| Error::InvalidArgument("a plan needs at least one code".into()))?;
    let space = first.gen.space(first.space);
    let codes: Vec<Vec<f64>> = ctx.contexts.iter().map(|c| c.code.clone()).collect();
    let stages = plan.stages(ctx.default_eps);
    let gram_of = |spec: &crate::criteria::CriterionSpec| {
        gram_batch(|i| ctx.contexts[i].build(spec), &codes, ctx.method, ctx.alpha, &spec.to_string())
    };

    let (act_spec, _, act_eps) = &stages[0];
    let activate = gram_of(act_spec)?;
    let mut basis = Matrix::identity(space.dim);
    let mut suppress = Vec::new();
    for (i, (spec, _, eps)) in stages[1..].iter().enumerate() {
        let g = gram_of(spec)?;
        basis = intersect_suppress(&basis, &g.matrix, *eps).map_err(|e| match e {
            Error::EmptyIntersection { .. } => Error::EmptyIntersection {
                stage: format!("suppress #{} {}", i + 1, spec),
                activate_eps: *act_eps,
                stage_eps: *eps,
            },
            other => other,
        })?;
        suppress.push(g);
    }
    let (basis, activations) = sort_by_activation(&basis, &activate.matrix, *act_eps).map_err(|e| match e {
        Error::EmptyIntersection { .. } => Error::EmptyIntersection {
            stage: format!("activate {act_spec}"),
            activate_eps: *act_eps,
            stage_eps: *act_eps,
        },
        other => other,
    })?;
    let provenance = stages
        .iter()
        .map(|(c, r, e)| Provenance {
            criterion: c.to_string(),
            role: *r,
            eps: *e,
        })
        .collect();
    Ok(Discovery {
        subspace: Subspace {
            basis,
            activations,
            formulation: plan.to_string(),
            space,
            provenance,
        },
        activate,
        suppress,
    })
}

pub fn build_subspace(plan: &FormulationPlan, ctx: &BuildContext<'_>) -> Result<Subspace> {
    Ok(discover(plan, ctx)?.subspace)
}
