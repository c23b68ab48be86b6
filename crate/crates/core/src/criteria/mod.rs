//! Criteria `h(u) = f(g(u))` over a latent space.
//!
//! A [`CriterionContext`] is built once from a reference code; its parser
//! masks, landmarks, mesh and mesh samples are frozen there and reused for
//! every criterion evaluated at other codes.

pub mod aligned;
pub mod delaunay;
pub mod image_maps;
pub mod mask;

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{compose, MapRef, Select};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::models::{Parsing, LANDMARK_COUNT};
use crate::synth::{AnalysisModels, LandmarkRegion, LatentSpace, ToyGenerator};

pub use aligned::{AlignedPhotometry, SamplePos};
pub use delaunay::{bary_point, triangulate, BarySample, BarySampleSet, DelaunayMesh};
pub use image_maps::{HighPass, LowPass, MaskedAvgColor, MaskedPixels, MaskedResidual};
pub use mask::{LandmarkMask, PixelMask};

/// Default box factor of the frequency split.
pub const FREQUENCY_FACTOR: usize = 4;

/// Blur sigma applied before aligned-photometry sampling, in pixels at 64×64.
pub const AP_SMOOTHING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    /// masked photometry
    Mp,
    /// landmark coordinates
    Fl,
    /// aligned photometry
    Ap,
    /// identity embedding
    Id,
    /// masked average color
    Mac,
    /// masked residual
    Res,
    Low,
    High,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 8] = [
        CriterionKind::Mp,
        CriterionKind::Fl,
        CriterionKind::Ap,
        CriterionKind::Id,
        CriterionKind::Mac,
        CriterionKind::Res,
        CriterionKind::Low,
        CriterionKind::High,
    ];

    pub fn id(self) -> &'static str {
        match self {
            CriterionKind::Mp => "mp",
            CriterionKind::Fl => "fl",
            CriterionKind::Ap => "ap",
            CriterionKind::Id => "id",
            CriterionKind::Mac => "mac",
            CriterionKind::Res => "res",
            CriterionKind::Low => "low",
            CriterionKind::High => "high",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        CriterionKind::ALL.into_iter().find(|k| k.id() == s)
    }

    pub fn takes_region(self) -> bool {
        self != CriterionKind::Id
    }
}

/// A criterion id with an optional region, printed as `mp[mouth]` or `id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    pub region: Option<String>,
}

impl CriterionSpec {
    pub fn new(kind: CriterionKind, region: Option<&str>) -> Self {
        CriterionSpec {
            kind,
            region: region.map(str::to_string),
        }
    }
}

impl std::str::FromStr for CriterionSpec {
    type Err = Error;
    /// `kind` or `kind[region]`, as written in plans.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (k, r) = match s.split_once('[') {
            Some((k, rest)) => match rest.strip_suffix(']') {
                Some(r) if !r.is_empty() && !r.contains(['[', ']']) => (k, Some(r)),
                _ => return Err(Error::InvalidArgument(format!("malformed criterion `{s}`"))),
            },
            None => (s, None),
        };
        let kind = CriterionKind::from_id(k).ok_or_else(|| Error::InvalidArgument(format!("unknown criterion `{k}`")))?;
        Ok(CriterionSpec::new(kind, r))
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.region {
            Some(r) => write!(f, "{}[{}]", self.kind.id(), r),
            None => write!(f, "{}", self.kind.id()),
        }
    }
}

/// Landmark selection by region selector, with `!` for the complement and
/// `all` for everything.
pub fn landmark_mask(selector: &str) -> Result<LandmarkMask> {
    if let Some(rest) = selector.strip_prefix('!') {
        return Ok(landmark_mask(rest)?.complement());
    }
    if selector == "all" {
        return Ok(LandmarkMask::all(LANDMARK_COUNT));
    }
    let mut bits = vec![false; LANDMARK_COUNT];
    for r in LandmarkRegion::parse_selector(selector)? {
        for i in r.landmarks() {
            bits[i] = true;
        }
    }
    Ok(LandmarkMask { bits })
}

fn image_len(gen: &MapRef, mask: &PixelMask) -> Result<()> {
    if gen.out_dim() != 3 * mask.bits.len() {
        return Err(Error::dims("mask vs generator output", gen.out_dim() / 3, mask.bits.len()));
    }
    Ok(())
}

pub fn masked_photometry(gen: MapRef, mask: &PixelMask) -> Result<MapRef> {
    image_len(&gen, mask)?;
    compose(Arc::new(MaskedPixels { mask: mask.clone() }), gen)
}

pub fn landmark_criterion(gen: MapRef, detector: MapRef, lmask: &LandmarkMask) -> Result<MapRef> {
    if lmask.bits.len() != detector.out_dim() / 2 {
        return Err(Error::dims("landmark mask", detector.out_dim() / 2, lmask.bits.len()));
    }
    let idx = lmask.coordinate_indices();
    if idx.is_empty() {
        return Err(Error::EmptySelection);
    }
    compose(Arc::new(Select::new(detector, idx)?), gen)
}

pub fn aligned_photometry(
    gen: MapRef,
    detector: MapRef,
    mesh: DelaunayMesh,
    samples: &BarySampleSet,
    reference: &[f64],
    mask: &PixelMask,
    smoothing: f64,
) -> Result<MapRef> {
    image_len(&gen, mask)?;
    compose(Arc::new(AlignedPhotometry::new(detector, mesh, samples, reference, mask, smoothing)?), gen)
}

pub fn identity_criterion(gen: MapRef, embedder: MapRef) -> Result<MapRef> {
    compose(embedder, gen)
}

pub fn masked_avg_color(gen: MapRef, mask: &PixelMask) -> Result<MapRef> {
    image_len(&gen, mask)?;
    compose(Arc::new(MaskedAvgColor::new(mask)?), gen)
}

pub fn masked_residual(gen: MapRef, mask: &PixelMask) -> Result<MapRef> {
    image_len(&gen, mask)?;
    compose(Arc::new(MaskedResidual::new(mask)?), gen)
}

/// `(h_low, h_high)`; their outputs add up to `g(u)` exactly.
pub fn frequency_split(gen: MapRef, size: usize, factor: usize) -> Result<(MapRef, MapRef)> {
    if gen.out_dim() != 3 * size * size {
        return Err(Error::dims("frequency split image", 3 * size * size, gen.out_dim()));
    }
    let lp = LowPass::new(size, factor)?;
    let low = compose(Arc::new(lp.clone()), gen.clone())?;
    let high = compose(Arc::new(HighPass(lp)), gen)?;
    Ok((low, high))
}

/// Everything a criterion needs that is frozen at the reference code.
pub struct CriterionContext {
    pub gen: Arc<ToyGenerator>,
    pub models: Arc<AnalysisModels>,
    pub space: LatentSpace,
    pub code: Vec<f64>,
    pub image: Image,
    pub parsing: Parsing,
    pub landmarks: Vec<f64>,
    pub mesh: DelaunayMesh,
    pub samples: BarySampleSet,
    pub frequency_factor: usize,
}

impl CriterionContext {
    pub fn new(
        gen: Arc<ToyGenerator>,
        models: Arc<AnalysisModels>,
        space: LatentSpace,
        code: Vec<f64>,
        sample_seed: u64,
    ) -> Result<Self> {
        let image = gen.generate(&crate::synth::LatentCode::new(gen.space(space), code.clone())?)?;
        let parsing = models.parse(&image);
        let landmarks = models.detect(&image)?;
        let points: Vec<[f64; 2]> = landmarks.chunks(2).map(|p| [p[0], p[1]]).collect();
        let mesh = triangulate(&points)?;
        let samples = BarySampleSet::generate(&points, &mesh, sample_seed);
        Ok(CriterionContext {
            gen,
            models,
            space,
            code,
            image,
            parsing,
            landmarks,
            mesh,
            samples,
            frequency_factor: FREQUENCY_FACTOR,
        })
    }

    pub fn generator_map(&self) -> MapRef {
        self.gen.map(self.space)
    }

    /// Parser mask by name; no region means every pixel.
    pub fn pixel_mask(&self, region: Option<&str>) -> Result<PixelMask> {
        match region {
            None | Some("all") => Ok(PixelMask::full(self.parsing.height, self.parsing.width)),
            Some(name) => self.parsing.mask(name),
        }
    }

    /// The criterion as a map on the context's latent space.
    pub fn build(&self, spec: &CriterionSpec) -> Result<MapRef> {
        let region = spec.region.as_deref();
        let gen = self.generator_map();
        match spec.kind {
            CriterionKind::Mp => masked_photometry(gen, &self.pixel_mask(region)?),
            CriterionKind::Fl => landmark_criterion(gen, self.models.detector(), &landmark_mask(region.unwrap_or("all"))?),
            CriterionKind::Ap => aligned_photometry(
                gen,
                self.models.detector(),
                self.mesh.clone(),
                &self.samples,
                &self.landmarks,
                &self.pixel_mask(region)?,
                AP_SMOOTHING * self.gen.size() as f64 / crate::synth::layout::CANVAS,
            ),
            CriterionKind::Id => {
                if region.is_some() {
                    return Err(Error::InvalidArgument("the identity criterion takes no region".into()));
                }
                identity_criterion(gen, self.models.embedder())
            }
            CriterionKind::Mac => masked_avg_color(gen, &self.pixel_mask(region)?),
            CriterionKind::Res => masked_residual(gen, &self.pixel_mask(region)?),
            CriterionKind::Low | CriterionKind::High => {
                let (low, high) = frequency_split(gen, self.gen.size(), self.frequency_factor)?;
                let band = if spec.kind == CriterionKind::Low { low } else { high };
                match region {
                    None => Ok(band),
                    Some(_) => compose(Arc::new(MaskedPixels { mask: self.pixel_mask(region)? }), band),
                }
            }
        }
    }

    /// A classifier composed with the generator on the context's space.
    pub fn classifier(&self, name: &str) -> Result<MapRef> {
        compose(self.models.classifier(name)?, self.generator_map())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::vjp_check;
    use crate::linalg::norm;
    use crate::rng::{normal_vec, stream};
    use crate::synth::{layout, GeneratorParams};

    fn context(code: Vec<f64>) -> CriterionContext {
        let p = GeneratorParams::default();
        let gen = Arc::new(ToyGenerator::new(p, 11).unwrap());
        let models = Arc::new(AnalysisModels::new(&p, 11).unwrap());
        CriterionContext::new(gen, models, LatentSpace::Style, code, 11).unwrap()
    }

    fn spec(s: &str) -> CriterionSpec {
        s.parse().unwrap()
    }

    #[test]
    fn spec_text_round_trips() {
        for s in ["mp[mouth]", "id", "res[!lip]", "high[face]"] {
            assert_eq!(spec(s).to_string(), s);
        }
        for bad in ["xx", "mp[", "mp[]", "mp[a]b", "mp[a[b]]"] {
            assert!(bad.parse::<CriterionSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn photometry_masks() {
        let ctx = context(vec![0.0; 60]);
        let u = &ctx.code;
        let g = ctx.generator_map().eval(u).unwrap();
        assert_eq!(ctx.build(&spec("mp")).unwrap().eval(u).unwrap(), g);
        let zero = masked_photometry(ctx.generator_map(), &PixelMask::empty(64, 64)).unwrap();
        assert!(zero.eval(u).unwrap().iter().all(|&v| v == 0.0));
        let mouth = ctx.pixel_mask(Some("mouth")).unwrap();
        let a = ctx.build(&spec("mp[mouth]")).unwrap().eval(u).unwrap();
        let b = ctx.build(&spec("mp[!mouth]")).unwrap().eval(u).unwrap();
        for i in 0..g.len() {
            assert_eq!(a[i] + b[i], g[i]);
            if !mouth.bits[i / 3] {
                assert_eq!(a[i], 0.0);
            }
        }
    }

    #[test]
    fn landmark_selection_is_projection() {
        let ctx = context(vec![0.0; 60]);
        let full = ctx.build(&spec("fl")).unwrap().eval(&ctx.code).unwrap();
        assert_eq!(full, ctx.landmarks);
        let mouth = ctx.build(&spec("fl[mouth]")).unwrap().eval(&ctx.code).unwrap();
        let r = LandmarkRegion::Mouth.landmarks();
        assert_eq!(mouth, full[2 * r.start..2 * r.end].to_vec());
        assert_eq!(landmark_mask("!mouth").unwrap().selected().len(), 20);
        let none = LandmarkMask { bits: vec![false; 25] };
        assert!(matches!(
            landmark_criterion(ctx.generator_map(), ctx.models.detector(), &none),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn canonical_mesh_is_delaunay() {
        let ctx = context(vec![0.0; 60]);
        let pts: Vec<[f64; 2]> = ctx.landmarks.chunks(2).map(|p| [p[0], p[1]]).collect();
        assert!(ctx.mesh.facets.len() >= 20);
        for f in &ctx.mesh.facets {
            let (a, b, c) = (pts[f[0]], pts[f[1]], pts[f[2]]);
            assert!(delaunay::facet_area(&pts, *f) > 1e-6);
            for (j, &d) in pts.iter().enumerate() {
                if !f.contains(&j) {
                    assert!(delaunay::in_circle(a, b, c, d) <= 1e-9, "point {j} inside facet {f:?}");
                }
            }
        }
    }

    #[test]
    fn aligned_photometry_at_reference_samples_reference_points() {
        let ctx = context(vec![0.0; 60]);
        let ap = ctx.build(&spec("ap")).unwrap();
        let y = ap.eval(&ctx.code).unwrap();
        let smoothed = crate::synth::GaussianBlur::new(64, AP_SMOOTHING).apply(&ctx.image.values, false);
        let mut expect = Vec::new();
        for s in &ctx.samples.samples {
            let p = bary_point(&ctx.landmarks, &ctx.mesh, s.facet, s.coords).unwrap();
            expect.extend(aligned::bicubic(&smoothed, 64, &SamplePos::clamped(p, 64)));
        }
        assert_eq!(y, expect);
    }

    #[test]
    fn translation_is_absorbed_by_aligned_photometry() {
        let ctx = context(vec![0.0; 60]);
        let ap = ctx.build(&spec("ap[face]")).unwrap();
        let mp = ctx.build(&spec("mp[face]")).unwrap();
        let (a0, m0) = (ap.eval(&ctx.code).unwrap(), mp.eval(&ctx.code).unwrap());
        for (tx, ty) in [(1.0, 0.0), (0.0, -1.0), (0.3, 0.0), (0.0, 0.7), (-1.0, 1.5)] {
            let mut u = ctx.code.clone();
            u[layout::TRANSLATE_X] += tx;
            u[layout::TRANSLATE_Y] += ty;
            let da = norm(&crate::linalg::sub(&ap.eval(&u).unwrap(), &a0));
            let dm = norm(&crate::linalg::sub(&mp.eval(&u).unwrap(), &m0));
            assert!(da <= 0.05 * dm, "shift ({tx}, {ty}): {da} vs {dm}");
        }
    }

    #[test]
    fn criterion_vjps_match_finite_differences() {
        let u = normal_vec(&mut stream(4, "code"), 60, 0.5);
        let ctx = context(u);
        for s in ["mp[mouth]", "fl[mouth]", "ap[face]", "id", "mac[lip]", "res[!lip]", "low", "high[face]"] {
            let h = ctx.build(&spec(s)).unwrap();
            let cot = normal_vec(&mut stream(5, s), h.out_dim(), 1.0);
            let err = vjp_check(h.as_ref(), &ctx.code, &cot, 1e-5).unwrap();
            assert!(err < 1e-4, "{s}: {err}");
        }
    }
}
