//! The `latctl` command surface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, Session};
use crate::counterfactual::{cf_optimize, difference_map, mass_inside, StopReason};
use crate::error::{Error, Result};
use crate::eval::{
    attenuation_curve, component_grid, curve_csv, emit_grid, manipulation_metrics, metrics_csv, write_bytes,
};
use crate::image::Image;
use crate::subspace::{discover, store, BuildContext, Subspace};
use crate::synth::LatentSpace;

/// Components shown in the discovery preview grid.
const PREVIEW_COMPONENTS: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "latctl", version, about = "Discover interpretable latent subspaces and run counterfactuals in them")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config; default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `input` or `style`.
    #[arg(long, global = true)]
    pub space: Option<LatentSpace>,
    /// Plan text, a built-in plan name, or `@path` to a plan file.
    #[arg(long, global = true)]
    pub plan: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the plan's subspace and save it.
    Discover,
    /// Render one component at several magnitudes.
    Manipulate {
        /// Saved subspace directory; the plan is solved afresh when omitted.
        #[arg(long)]
        subspace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        component: usize,
        /// Comma-separated list, e.g. `-10,0,10`.
        #[arg(long, allow_hyphen_values = true)]
        magnitude: Option<String>,
    },
    /// Ascend a classifier logit inside a subspace.
    Counterfactual {
        #[arg(long)]
        subspace: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<String>,
    },
    /// Attenuation curves of the plan in the input and style spaces.
    CompareSpaces,
    /// Inside/outside/identity metrics over held-out codes.
    Evaluate {
        /// Saved subspace directories (repeatable); the plan is solved afresh when omitted.
        #[arg(long)]
        subspace: Vec<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        magnitude: Option<String>,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::EmptyIntersection { .. } => 4,
        Error::Parse { .. }
        | Error::Config(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::Format { .. }
        | Error::UnknownClassifier(_)
        | Error::UnknownRegion(_)
        | Error::InvalidArgument(_)
        | Error::IndexOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::EmptySelection => 2,
        Error::NotSquare { .. }
        | Error::NotSymmetric { .. }
        | Error::NonFinite(_)
        | Error::NoConvergence { .. }
        | Error::DegenerateLandmark(_)
        | Error::ZeroNormalization
        | Error::EmptyMask(_)
        | Error::Degenerate(_) => 3,
    }
}

pub fn parse_magnitudes(text: &str) -> Result<Vec<f64>> {
    let mags: Vec<f64> = text
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad magnitude `{t}`")))
        })
        .collect::<Result<_>>()?;
    Ok(mags)
}

/// The config after applying command-line overrides.
pub fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(s) = common.space {
        c.space = s;
    }
    if let Some(p) = &common.plan {
        c.plan = match p.strip_prefix('@') {
            Some(path) => fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            None => p.clone(),
        };
    }
    if let Some(o) = &common.out {
        c.out = Some(o.clone());
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = effective_config(&cli.common)?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    // the copy is location independent so that runs into different directories match
    let saved = RunConfig { out: None, ..config.clone() };
    write_bytes(out.join("config.toml"), saved.to_toml()?.as_bytes())?;
    let session = Session::new(config)?;
    match &cli.command {
        Command::Discover => cmd_discover(&session, &out),
        Command::Manipulate {
            subspace,
            component,
            magnitude,
        } => {
            let mags = match magnitude {
                Some(m) => parse_magnitudes(m)?,
                None => session.config.eval.magnitudes.clone(),
            };
            cmd_manipulate(&session, subspace.as_deref(), *component, &mags, &out)
        }
        Command::Counterfactual { subspace, classifier } => {
            let name = classifier.clone().unwrap_or_else(|| session.config.classifier.clone());
            cmd_counterfactual(&session, subspace.as_deref(), &name, &out)
        }
        Command::CompareSpaces => cmd_compare_spaces(&session, &out),
        Command::Evaluate { subspace, magnitude } => {
            let mags = match magnitude {
                Some(m) => parse_magnitudes(m)?,
                None => session.config.eval.magnitudes.clone(),
            };
            cmd_evaluate(&session, subspace, &mags, &out)
        }
    }
}

fn solve(session: &Session, space: LatentSpace) -> Result<crate::subspace::Discovery> {
    let plan = session.config.formulation()?;
    let codes = session.train_codes(space)?;
    let contexts = session.contexts(space, &codes)?;
    let ctx = BuildContext {
        contexts: &contexts,
        method: session.config.method,
        alpha: session.config.alpha,
        default_eps: session.config.eps,
    };
    discover(&plan, &ctx)
}

fn load_or_solve(session: &Session, dir: Option<&Path>) -> Result<Subspace> {
    match dir {
        Some(d) => {
            let (s, _) = store::load(d)?;
            let expected = session.gen.space(s.space.space).dim;
            if s.space.dim != expected {
                return Err(Error::Config(format!(
                    "subspace in {} is {}-dimensional, the configured {} space has {expected}",
                    d.display(),
                    s.space.dim,
                    s.space.space.name()
                )));
            }
            Ok(s)
        }
        None => Ok(solve(session, session.config.space)?.subspace),
    }
}

fn subject(session: &Session, space: LatentSpace) -> Result<Vec<f64>> {
    Ok(session.eval_codes(space)?.swap_remove(session.config.eval.subject))
}

fn render(session: &Session, space: LatentSpace, u: &[f64]) -> Result<Image> {
    let n = session.gen.size();
    Image::new(n, n, session.gen.map(space).eval(u)?)
}

pub fn cmd_discover(session: &Session, out: &Path) -> Result<()> {
    let space = session.config.space;
    let d = solve(session, space)?;
    let s = &d.subspace;
    let dir = out.join("subspace");
    store::save(&dir, s, session.config.seed, session.train_codes(space)?.len())?;
    let count = s.dim().min(PREVIEW_COMPONENTS);
    let magnitude = session.config.eval.magnitudes.last().copied().unwrap_or(10.0);
    let tiles = component_grid(&session.gen, s, &subject(session, space)?, count, magnitude)?;
    let labels: Vec<String> = [magnitude, -magnitude]
        .iter()
        .flat_map(|m| (0..count).map(move |k| format!("component {k} magnitude {m}")))
        .collect();
    emit_grid(&tiles, 2, count, &labels, dir.join("components.ppm"))?;
    eprintln!("{} components written to {}", s.dim(), dir.display());
    Ok(())
}

pub fn cmd_manipulate(session: &Session, dir: Option<&Path>, k: usize, mags: &[f64], out: &Path) -> Result<()> {
    if mags.is_empty() {
        return Err(Error::InvalidArgument("no magnitudes given".into()));
    }
    let s = load_or_solve(session, dir)?;
    let space = s.space.space;
    let u = subject(session, space)?;
    let tiles = mags
        .iter()
        .map(|&m| render(session, space, &crate::subspace::perturb(&u, &s, k, m)?))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = mags.iter().map(|m| format!("component {k} magnitude {m}")).collect();
    let path = out.join("manipulate").join(format!("component_{k}.ppm"));
    fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(out, e))?;
    emit_grid(&tiles, 1, mags.len(), &labels, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct CounterfactualSummary {
    classifier: String,
    stop_reason: String,
    iterations: usize,
    logit_before: f64,
    logit_after: f64,
    gain: f64,
    delta_norm: f64,
    containment_residual: f64,
    region: String,
    mass_inside: f64,
}

pub fn cmd_counterfactual(session: &Session, dir: Option<&Path>, classifier: &str, out: &Path) -> Result<()> {
    let clf = crate::autodiff::compose(session.models.classifier(classifier)?, session.gen.map(session.config.space))?;
    let s = load_or_solve(session, dir)?;
    if s.space.space != session.config.space {
        return Err(Error::Config(format!(
            "subspace is in the {} space, the run is configured for {}",
            s.space.space.name(),
            session.config.space.name()
        )));
    }
    let space = s.space.space;
    let u = subject(session, space)?;
    let r = cf_optimize(clf.as_ref(), &|v: &[f64]| render(session, space, v), &u, &s, &session.config.counterfactual)?;
    let diff = difference_map(&r.before, &r.after)?;
    let region = session.config.eval.region.clone();
    let mask = session.models.parse(&r.before).mask(&region)?;
    let dir = out.join("counterfactual");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    r.before.write_ppm(dir.join("before.ppm"))?;
    r.after.write_ppm(dir.join("after.ppm"))?;
    diff.write_ppm(dir.join("difference.ppm"))?;
    write_bytes(dir.join("trajectory.csv"), &r.trajectory_csv()?)?;
    let summary = CounterfactualSummary {
        classifier: classifier.into(),
        stop_reason: r.stop_reason.to_string(),
        iterations: r.trajectory.last().map_or(0, |t| t.0),
        logit_before: r.trajectory[0].1,
        logit_after: r.trajectory.last().unwrap().1,
        gain: r.gain(),
        delta_norm: crate::linalg::norm(&r.delta_u),
        containment_residual: r.containment_residual(&s)?,
        region,
        mass_inside: mass_inside(&diff, &mask),
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(dir.join("summary.toml"), text.as_bytes())?;
    eprintln!(
        "{classifier}: logit {:.4} -> {:.4} ({})",
        summary.logit_before, summary.logit_after, summary.stop_reason
    );
    match r.stop_reason {
        StopReason::NumericFailure(m) => Err(Error::NonFinite(m)),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct CompareSummary {
    plan: String,
    input_components: usize,
    style_components: usize,
    style_dominates: bool,
}

pub fn cmd_compare_spaces(session: &Session, out: &Path) -> Result<()> {
    let plan = session.config.formulation()?;
    let dir = out.join("compare");
    let mut curves = Vec::new();
    for space in [LatentSpace::Input, LatentSpace::Style] {
        let codes = session.train_codes(space)?;
        let contexts = session.contexts(space, &codes)?;
        let ctx = BuildContext {
            contexts: &contexts,
            method: session.config.method,
            alpha: session.config.alpha,
            default_eps: session.config.eps,
        };
        let curve = attenuation_curve(&plan, &ctx)?;
        write_bytes(dir.join(format!("attenuation_{}.csv", space.name())), &curve_csv(&curve)?)?;
        curves.push(curve);
    }
    let summary = CompareSummary {
        plan: plan.to_string(),
        input_components: curves[0].ratios.len(),
        style_components: curves[1].ratios.len(),
        style_dominates: curves[1].dominates(&curves[0]),
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(dir.join("summary.toml"), text.as_bytes())?;
    eprintln!("style dominates input: {}", summary.style_dominates);
    Ok(())
}

pub fn cmd_evaluate(session: &Session, dirs: &[PathBuf], mags: &[f64], out: &Path) -> Result<()> {
    let subspaces = if dirs.is_empty() {
        vec![load_or_solve(session, None)?]
    } else {
        dirs.iter().map(|d| load_or_solve(session, Some(d))).collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    for s in &subspaces {
        let codes = session.eval_codes(s.space.space)?;
        let k = session.config.eval.top_k.min(s.dim());
        for &m in mags {
            rows.push(manipulation_metrics(
                s,
                k,
                m,
                &codes,
                &session.config.eval.region,
                &session.gen,
                &session.models,
                &s.formulation,
            )?);
        }
    }
    let path = out.join("evaluate").join("metrics.csv");
    write_bytes(&path, &metrics_csv(&rows)?)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
