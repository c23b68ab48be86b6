//! Run configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::counterfactual::CounterfactualConfig;
use crate::criteria::CriterionContext;
use crate::error::{ensure_finite, Error, Result};
use crate::subspace::{named_plan, FormulationPlan, MethodChoice, DEFAULT_ALPHA, DEFAULT_EPS};
use crate::synth::{AnalysisModels, GeneratorParams, LatentSpace, ToyGenerator};

/// Training codes for discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeConfig {
    /// Number of codes sampled when `explicit` is empty.
    pub count: usize,
    pub std: f64,
    /// Codes given directly, in the configured space.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub explicit: Vec<Vec<f64>>,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            count: 2,
            std: 1.0,
            explicit: Vec::new(),
        }
    }
}

/// Held-out codes for manipulation, counterfactuals and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub count: usize,
    pub top_k: usize,
    pub magnitudes: Vec<f64>,
    /// Parser region for inside/outside metrics and counterfactual mass.
    pub region: String,
    /// Index of the held-out code rendered by `manipulate` and `counterfactual`.
    pub subject: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            count: 64,
            top_k: 4,
            magnitudes: vec![10.0],
            region: "mouth".into(),
            subject: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub space: LatentSpace,
    /// Plan text, or the name of a built-in plan.
    pub plan: String,
    pub eps: f64,
    pub alpha: f64,
    pub method: MethodChoice,
    pub classifier: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub generator: GeneratorParams,
    pub codes: CodeConfig,
    pub eval: EvalConfig,
    pub counterfactual: CounterfactualConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            space: LatentSpace::Style,
            plan: "mouth_photometry".into(),
            eps: DEFAULT_EPS,
            alpha: DEFAULT_ALPHA,
            method: MethodChoice::Auto,
            classifier: "lip_redness".into(),
            out: None,
            generator: GeneratorParams::default(),
            codes: CodeConfig::default(),
            eval: EvalConfig::default(),
            counterfactual: CounterfactualConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.counterfactual.validate()?;
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!("eps must be in (0, 1), got {}", self.eps)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.codes.explicit.is_empty() && self.codes.count == 0 {
            return Err(Error::Config("codes.count must be at least 1".into()));
        }
        if !(self.codes.std > 0.0 && self.codes.std.is_finite()) {
            return Err(Error::Config(format!("codes.std must be positive, got {}", self.codes.std)));
        }
        let dim = self.space_dim(self.space);
        for (i, c) in self.codes.explicit.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::Config(format!(
                    "codes.explicit[{i}] has {} entries, the {} space has {dim}",
                    c.len(),
                    self.space.name()
                )));
            }
            ensure_finite("explicit code", c)?;
        }
        if self.eval.count == 0 || self.eval.top_k == 0 {
            return Err(Error::Config("eval.count and eval.top_k must be at least 1".into()));
        }
        if self.eval.subject >= self.eval.count {
            return Err(Error::Config(format!(
                "eval.subject {} is not below eval.count {}",
                self.eval.subject, self.eval.count
            )));
        }
        if self.eval.magnitudes.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("eval.magnitudes must be finite".into()));
        }
        Ok(())
    }

    fn space_dim(&self, space: LatentSpace) -> usize {
        match space {
            LatentSpace::Input => self.generator.input_dim,
            LatentSpace::Style => self.generator.style_dim,
        }
    }

    /// The plan, resolving built-in names.
    pub fn formulation(&self) -> Result<FormulationPlan> {
        FormulationPlan::parse(named_plan(self.plan.trim()).unwrap_or(&self.plan))
    }
}

/// Generator, analysis models and codes instantiated from a config.
pub struct Session {
    pub config: RunConfig,
    pub gen: Arc<ToyGenerator>,
    pub models: Arc<AnalysisModels>,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let gen = Arc::new(ToyGenerator::new(config.generator, config.seed)?);
        let models = Arc::new(AnalysisModels::new(&config.generator, config.seed)?);
        Ok(Session { config, gen, models })
    }

    /// Input-space draws moved to `space`.
    fn sampled(&self, space: LatentSpace, count: usize, stream_name: &str) -> Result<Vec<Vec<f64>>> {
        let z = self
            .gen
            .sample_codes(LatentSpace::Input, count, self.config.codes.std, self.config.seed, stream_name);
        match space {
            LatentSpace::Input => Ok(z),
            LatentSpace::Style => {
                let m = self.gen.mapper();
                z.iter().map(|z| m.eval(z)).collect()
            }
        }
    }

    /// Training codes in `space`. Explicit codes only apply to the configured space.
    pub fn train_codes(&self, space: LatentSpace) -> Result<Vec<Vec<f64>>> {
        if !self.config.codes.explicit.is_empty() {
            if space != self.config.space {
                return Err(Error::Config(format!(
                    "explicit codes are in the {} space, {} codes were requested",
                    self.config.space.name(),
                    space.name()
                )));
            }
            return Ok(self.config.codes.explicit.clone());
        }
        self.sampled(space, self.config.codes.count, "train")
    }

    pub fn eval_codes(&self, space: LatentSpace) -> Result<Vec<Vec<f64>>> {
        self.sampled(space, self.config.eval.count, "eval")
    }

    pub fn contexts(&self, space: LatentSpace, codes: &[Vec<f64>]) -> Result<Vec<CriterionContext>> {
        codes
            .iter()
            .map(|c| CriterionContext::new(self.gen.clone(), self.models.clone(), space, c.clone(), self.config.seed))
            .collect()
    }
}
