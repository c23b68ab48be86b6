//! Attenuation curves, inside/outside/identity metrics, image grids and CSV.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{dot, sym_eig};
use crate::subspace::{discover, perturb, BuildContext, FormulationPlan, Subspace};
use crate::synth::{AnalysisModels, ToyGenerator};

/// Separator and border width of emitted grids, in pixels.
pub const GRID_GAP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationCurve {
    pub space: String,
    pub ratios: Vec<f64>,
    pub log10: Vec<f64>,
}

impl AttenuationCurve {
    pub fn new(space: &str, ratios: Vec<f64>) -> Self {
        let log10 = ratios.iter().map(|r| r.log10()).collect();
        AttenuationCurve {
            space: space.into(),
            ratios,
            log10,
        }
    }

    /// True when `self` is at least `other` at every shared index.
    pub fn dominates(&self, other: &AttenuationCurve) -> bool {
        self.ratios.iter().zip(&other.ratios).all(|(a, b)| a >= b)
    }
}

/// Activations of the plan's subspace over the top eigenvalue of its single
/// suppress Gram.
pub fn attenuation_curve(plan: &FormulationPlan, ctx: &BuildContext<'_>) -> Result<AttenuationCurve> {
    if plan.suppress.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "attenuation needs exactly one suppress criterion, plan has {}",
            plan.suppress.len()
        )));
    }
    let d = discover(plan, ctx)?;
    let top = sym_eig(&d.suppress[0].matrix)?.top();
    if top <= 0.0 {
        return Err(Error::Degenerate("suppress Gram is zero".into()));
    }
    let ratios = d.subspace.activations.iter().map(|l| l / top).collect();
    Ok(AttenuationCurve::new(d.subspace.space.space.name(), ratios))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationMetrics {
    pub plan: String,
    pub magnitude: f64,
    pub top_k: usize,
    pub inside: f64,
    pub outside: f64,
    pub identity: f64,
    pub n: usize,
}

/// Mean absolute per-channel change inside and outside `mask`.
fn region_change(a: &Image, b: &Image, mask: &crate::criteria::PixelMask) -> (f64, f64) {
    let (mut sin, mut sout, mut nin, mut nout) = (0.0, 0.0, 0usize, 0usize);
    for (p, &m) in mask.bits.iter().enumerate() {
        let d: f64 = (0..3).map(|c| (a.values[3 * p + c] - b.values[3 * p + c]).abs()).sum();
        if m {
            sin += d;
            nin += 3;
        } else {
            sout += d;
            nout += 3;
        }
    }
    let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { 0.0 };
    (mean(sin, nin), mean(sout, nout))
}

/// Averages over codes and the first `top_k` components at `magnitude`; the
/// region mask comes from parsing each unmodified image.
#[allow(clippy::too_many_arguments)]
pub fn manipulation_metrics(
    s: &Subspace,
    top_k: usize,
    magnitude: f64,
    codes: &[Vec<f64>],
    region: &str,
    gen: &ToyGenerator,
    models: &AnalysisModels,
    label: &str,
) -> Result<ManipulationMetrics> {
    if top_k == 0 || top_k > s.dim() {
        return Err(Error::IndexOutOfRange {
            index: top_k,
            len: s.dim(),
        });
    }
    if codes.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one code".into()));
    }
    let map = gen.map(s.space.space);
    let size = gen.size();
    let render = |u: &[f64]| -> Result<Image> { Image::new(size, size, map.eval(u)?) };
    let per_code: Vec<[f64; 3]> = codes
        .par_iter()
        .map(|u| {
            let before = render(u)?;
            let mask = models.parse(&before).mask(region)?;
            if mask.is_empty() {
                return Err(Error::EmptyMask(region.into()));
            }
            let e0 = models.embed(&before)?;
            let mut acc = [0.0; 3];
            for k in 0..top_k {
                let after = render(&perturb(u, s, k, magnitude)?)?;
                let (i, o) = region_change(&before, &after, &mask);
                acc[0] += i;
                acc[1] += o;
                acc[2] += dot(&e0, &models.embed(&after)?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let count = (codes.len() * top_k) as f64;
    let mut sum = [0.0; 3];
    for a in &per_code {
        for j in 0..3 {
            sum[j] += a[j];
        }
    }
    Ok(ManipulationMetrics {
        plan: label.into(),
        magnitude,
        top_k,
        inside: sum[0] / count,
        outside: sum[1] / count,
        identity: (sum[2] / count).clamp(-1.0, 1.0),
        n: codes.len(),
    })
}

/// Row-major tiles with `GRID_GAP`-pixel white separators and border.
pub fn grid_canvas(images: &[Image], rows: usize, cols: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("grid needs at least one image".into()))?;
    if images.len() > rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    let (h, w) = (first.height, first.width);
    if images.iter().any(|i| i.height != h || i.width != w) {
        return Err(Error::InvalidArgument("grid tiles must share dimensions".into()));
    }
    let ch = rows * h + (rows + 1) * GRID_GAP;
    let cw = cols * w + (cols + 1) * GRID_GAP;
    let mut canvas = Image::filled(ch, cw, [1.0; 3]);
    for (t, img) in images.iter().enumerate() {
        let (oy, ox) = (GRID_GAP + (t / cols) * (h + GRID_GAP), GRID_GAP + (t % cols) * (w + GRID_GAP));
        for y in 0..h {
            let src = &img.values[3 * y * w..3 * (y + 1) * w];
            let at = 3 * ((oy + y) * cw + ox);
            canvas.values[at..at + 3 * w].copy_from_slice(src);
        }
    }
    Ok(canvas)
}

/// Tile `(r, c)` of a canvas made by `grid_canvas`.
pub fn grid_tile(canvas: &Image, tile_h: usize, tile_w: usize, r: usize, c: usize) -> Image {
    let (oy, ox) = (GRID_GAP + r * (tile_h + GRID_GAP), GRID_GAP + c * (tile_w + GRID_GAP));
    let mut values = Vec::with_capacity(3 * tile_h * tile_w);
    for y in 0..tile_h {
        let at = 3 * ((oy + y) * canvas.width + ox);
        values.extend_from_slice(&canvas.values[at..at + 3 * tile_w]);
    }
    Image {
        height: tile_h,
        width: tile_w,
        values,
    }
}

/// Writes the canvas as PPM; non-empty `labels` go to a sidecar `.txt`, one
/// per tile in row-major order.
pub fn emit_grid(images: &[Image], rows: usize, cols: usize, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    grid_canvas(images, rows, cols)?.write_ppm(path)?;
    if !labels.is_empty() {
        let side = path.with_extension("txt");
        let mut text = labels.join("\n");
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(side, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    component: usize,
    lambda_ratio: f64,
    log10_ratio: f64,
}

pub fn curve_csv(curve: &AttenuationCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if curve.ratios.is_empty() {
        w.write_record(["component", "lambda_ratio", "log10_ratio"])?;
    }
    for (k, (r, l)) in curve.ratios.iter().zip(&curve.log10).enumerate() {
        w.serialize(CurveRow {
            component: k,
            lambda_ratio: *r,
            log10_ratio: *l,
        })?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn parse_curve_csv(space: &str, bytes: &[u8]) -> Result<AttenuationCurve> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut ratios = Vec::new();
    let mut log10 = Vec::new();
    for (k, row) in r.deserialize::<CurveRow>().enumerate() {
        let row = row?;
        if row.component != k {
            return Err(Error::Config(format!("component {} out of order at row {k}", row.component)));
        }
        ratios.push(row.lambda_ratio);
        log10.push(row.log10_ratio);
    }
    Ok(AttenuationCurve {
        space: space.into(),
        ratios,
        log10,
    })
}

pub fn metrics_csv(rows: &[ManipulationMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["plan", "magnitude", "top_k", "inside", "outside", "identity", "n"])?;
    }
    for m in rows {
        w.serialize(m)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn parse_metrics_csv(bytes: &[u8]) -> Result<Vec<ManipulationMetrics>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders `u ± m·S[:, k]` for the first `count` components: top row `+m`,
/// bottom row `−m`.
pub fn component_grid(gen: &ToyGenerator, s: &Subspace, u: &[f64], count: usize, magnitude: f64) -> Result<Vec<Image>> {
    let map = gen.map(s.space.space);
    let size = gen.size();
    let count = count.min(s.dim());
    let mut out = Vec::with_capacity(2 * count);
    for sign in [1.0, -1.0] {
        for k in 0..count {
            out.push(Image::new(size, size, map.eval(&perturb(u, s, k, sign * magnitude)?)?)?);
        }
    }
    Ok(out)
}
