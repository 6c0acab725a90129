//! Flat dotted-key experiment configuration.
//!
//! The format is `key = value` lines with `#` comments. Every key is
//! validated against a registry: unknown keys are rejected, and keys that
//! do not apply to the chosen model, smoothing kernel, or inference method
//! are rejected too, so a config never silently carries dead settings.
//! `snapshot()` emits every applicable key with its resolved value;
//! parsing a snapshot reproduces the config exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use bpode_core::benchmarks::ModelId;
use bpode_core::gpr::KernelSpec;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_points: usize,
    pub t_span: (f64, f64),
    pub noise_sd: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Periodic,
    Rbf,
    RationalQuadratic,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Periodic => "periodic",
            KernelKind::Rbf => "rbf",
            KernelKind::RationalQuadratic => "rational_quadratic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub enabled: bool,
    pub kernel: KernelKind,
    pub amplitude2: f64,
    pub length: f64,
    /// Periodic kernel only.
    pub period: f64,
    /// Rational-quadratic kernel only.
    pub alpha: f64,
    pub noise2: f64,
}

impl SmoothingConfig {
    pub fn kernel_spec(&self) -> KernelSpec {
        match self.kernel {
            KernelKind::Periodic => {
                KernelSpec::scaled_periodic(self.amplitude2, self.length, self.period)
            }
            KernelKind::Rbf => KernelSpec::scaled_rbf(self.amplitude2, self.length),
            KernelKind::RationalQuadratic => KernelSpec::scaled_rational_quadratic(
                self.amplitude2,
                self.length,
                self.alpha,
            ),
        }
        .with_noise(self.noise2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    pub prior_sd: f64,
    /// Integrator substeps per observation interval (ODE models).
    pub substeps: usize,
    /// 0 disables periodic noise re-estimation.
    pub reestimate_every: usize,
    pub beta2_init: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Laplace,
    Hmc,
    Nuts,
    Vi,
    Blr,
    Abc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Laplace => "laplace",
            Method::Hmc => "hmc",
            Method::Nuts => "nuts",
            Method::Vi => "vi",
            Method::Blr => "blr",
            Method::Abc => "abc",
        }
    }

    pub fn parse(s: &str) -> Result<Method, CliError> {
        match s {
            "laplace" => Ok(Method::Laplace),
            "hmc" => Ok(Method::Hmc),
            "nuts" => Ok(Method::Nuts),
            "vi" => Ok(Method::Vi),
            "blr" => Ok(Method::Blr),
            "abc" => Ok(Method::Abc),
            other => Err(CliError::validation(format!(
                "inference.method: unknown method '{other}' \
                 (expected laplace|hmc|nuts|vi|blr|abc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub method: Method,
    // laplace
    pub fisher: FisherKind,
    pub invert: InvertKind,
    // hmc
    pub epsilon: f64,
    pub l_steps: usize,
    // hmc + nuts
    pub warmup: usize,
    pub samples: usize,
    // nuts
    pub max_depth: usize,
    pub target_accept: f64,
    // vi
    pub iters: usize,
    pub vi_lr: f64,
    pub n_mc: usize,
    pub init_scale: f64,
    // abc
    pub particles: usize,
    pub rounds: usize,
    pub quantile: f64,
    pub box_halfwidth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherKind {
    Gradient,
    Hessian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvertKind {
    Pinv,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelId,
    pub dataset: DatasetConfig,
    pub width: usize,
    pub degree: usize,
    pub smoothing: SmoothingConfig,
    pub window_len: usize,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub expansion_n_mc: usize,
    pub n_pred: usize,
    pub horizon_multiplier: f64,
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn is_static(&self) -> bool {
        self.model == ModelId::CubicStatic
    }
}

fn model_defaults(model: ModelId) -> (usize, usize) {
    // (width, degree) used in the reference experiments
    match model {
        ModelId::CubicStatic => (10, 3),
        ModelId::LotkaVolterra => (9, 2),
        ModelId::DampedOscillator => (16, 3),
        ModelId::Lorenz => (11, 2),
    }
}

/// Raw parsed key-value lines with consumption tracking, so leftover keys
/// can be named in errors.
struct KeyBag {
    entries: BTreeMap<String, (String, usize)>,
    used: std::collections::BTreeSet<String>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<KeyBag, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::validation(format!(
                    "line {}: expected 'key = value', got '{}'",
                    lineno + 1,
                    line
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(CliError::validation(format!(
                    "line {}: empty key or value",
                    lineno + 1
                )));
            }
            if entries.insert(key.clone(), (value, lineno + 1)).is_some() {
                return Err(CliError::validation(format!("duplicate key '{key}'")));
            }
        }
        Ok(KeyBag { entries, used: Default::default() })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).map(|(v, _)| v.clone())
    }

    /// Keys present in the file but never consumed by the active schema.
    fn leftovers(&self) -> Vec<String> {
        self.entries.keys().filter(|k| !self.used.contains(*k)).cloned().collect()
    }

    /// Keys consumed by an inactive branch must not appear in the file.
    fn forbid(&mut self, key: &str, why: &str) -> Result<(), CliError> {
        self.used.insert(key.to_string());
        if self.entries.contains_key(key) {
            return Err(CliError::validation(format!("{key}: not applicable {why}")));
        }
        Ok(())
    }
}

fn parse_f64(key: &str, raw: &str) -> Result<f64, CliError> {
    raw.parse::<f64>()
        .map_err(|_| CliError::validation(format!("{key}: '{raw}' is not a number")))
}

fn parse_usize(key: &str, raw: &str) -> Result<usize, CliError> {
    raw.parse::<usize>()
        .map_err(|_| CliError::validation(format!("{key}: '{raw}' is not a non-negative integer")))
}

fn parse_u64(key: &str, raw: &str) -> Result<u64, CliError> {
    raw.parse::<u64>()
        .map_err(|_| CliError::validation(format!("{key}: '{raw}' is not a non-negative integer")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, CliError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::validation(format!("{key}: '{raw}' is not true/false"))),
    }
}

macro_rules! field {
    ($bag:expr, $key:expr, $default:expr, $parse:ident) => {
        match $bag.take($key) {
            Some(raw) => $parse($key, &raw)?,
            None => $default,
        }
    };
}

fn require_positive(key: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::validation(format!("{key}: must be positive and finite, got {v}")))
    }
}

fn require_at_least(key: &str, v: usize, min: usize) -> Result<usize, CliError> {
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::validation(format!("{key}: must be at least {min}, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let mut bag = KeyBag::parse(text)?;

        let model_raw = bag
            .take("model")
            .ok_or_else(|| CliError::validation("model: required key is missing"))?;
        let model: ModelId = model_raw.parse().map_err(|_| {
            CliError::validation(format!(
                "model: unknown model '{model_raw}' (expected \
                 cubic_static|lotka_volterra|damped_oscillator|lorenz)"
            ))
        })?;
        let out_dir = bag
            .take("output.dir")
            .ok_or_else(|| CliError::validation("output.dir: required key is missing"))?;

        let canonical = bpode_core::benchmarks::BenchmarkModel::new(model).canonical_spec();
        let is_static = model == ModelId::CubicStatic;

        let dataset = DatasetConfig {
            n_points: require_at_least(
                "dataset.n_points",
                field!(bag, "dataset.n_points", canonical.n_points, parse_usize),
                2,
            )?,
            t_span: {
                let lo = field!(bag, "dataset.t_start", canonical.t_span.0, parse_f64);
                let hi = field!(bag, "dataset.t_end", canonical.t_span.1, parse_f64);
                if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                    return Err(CliError::validation(format!(
                        "dataset.t_start/dataset.t_end: need a finite increasing span, \
                         got [{lo}, {hi}]"
                    )));
                }
                (lo, hi)
            },
            noise_sd: {
                let v = field!(bag, "dataset.noise_sd", canonical.noise_sd, parse_f64);
                if !v.is_finite() || v < 0.0 {
                    return Err(CliError::validation(format!(
                        "dataset.noise_sd: must be finite and non-negative, got {v}"
                    )));
                }
                v
            },
            replicates: require_at_least(
                "dataset.replicates",
                field!(bag, "dataset.replicates", canonical.n_replicates, parse_usize),
                1,
            )?,
            seed: field!(bag, "dataset.seed", 0, parse_u64),
        };

        let (def_width, def_degree) = model_defaults(model);
        let width = require_at_least(
            "architecture.width",
            field!(bag, "architecture.width", def_width, parse_usize),
            1,
        )?;
        let degree = require_at_least(
            "architecture.degree",
            field!(bag, "architecture.degree", def_degree, parse_usize),
            1,
        )?;

        let smoothing = if is_static {
            for key in [
                "smoothing.enabled",
                "smoothing.kernel",
                "smoothing.amplitude2",
                "smoothing.length",
                "smoothing.period",
                "smoothing.alpha",
                "smoothing.noise2",
            ] {
                bag.forbid(key, "to a static model")?;
            }
            SmoothingConfig {
                enabled: false,
                kernel: KernelKind::Periodic,
                amplitude2: 1.0,
                length: 1.0,
                period: 3.0,
                alpha: 1.0,
                noise2: 1.0,
            }
        } else {
            let enabled = field!(bag, "smoothing.enabled", false, parse_bool);
            if enabled {
                let kernel = match bag.take("smoothing.kernel").as_deref() {
                    None | Some("periodic") => KernelKind::Periodic,
                    Some("rbf") => KernelKind::Rbf,
                    Some("rational_quadratic") => KernelKind::RationalQuadratic,
                    Some(other) => {
                        return Err(CliError::validation(format!(
                            "smoothing.kernel: unknown kernel '{other}' \
                             (expected periodic|rbf|rational_quadratic)"
                        )))
                    }
                };
                let amplitude2 = require_positive(
                    "smoothing.amplitude2",
                    field!(bag, "smoothing.amplitude2", 1.0, parse_f64),
                )?;
                let length = require_positive(
                    "smoothing.length",
                    field!(bag, "smoothing.length", 1.0, parse_f64),
                )?;
                let period = if kernel == KernelKind::Periodic {
                    require_positive(
                        "smoothing.period",
                        field!(bag, "smoothing.period", 3.0, parse_f64),
                    )?
                } else {
                    bag.forbid("smoothing.period", "to this kernel")?;
                    3.0
                };
                let alpha = if kernel == KernelKind::RationalQuadratic {
                    require_positive(
                        "smoothing.alpha",
                        field!(bag, "smoothing.alpha", 1.0, parse_f64),
                    )?
                } else {
                    bag.forbid("smoothing.alpha", "to this kernel")?;
                    1.0
                };
                let noise2 = require_positive(
                    "smoothing.noise2",
                    field!(bag, "smoothing.noise2", 1.0, parse_f64),
                )?;
                SmoothingConfig { enabled, kernel, amplitude2, length, period, alpha, noise2 }
            } else {
                for key in [
                    "smoothing.kernel",
                    "smoothing.amplitude2",
                    "smoothing.length",
                    "smoothing.period",
                    "smoothing.alpha",
                    "smoothing.noise2",
                ] {
                    bag.forbid(key, "while smoothing is disabled")?;
                }
                SmoothingConfig {
                    enabled: false,
                    kernel: KernelKind::Periodic,
                    amplitude2: 1.0,
                    length: 1.0,
                    period: 3.0,
                    alpha: 1.0,
                    noise2: 1.0,
                }
            }
        };

        let window_len = if is_static {
            bag.forbid("batching.window_len", "to a static model")?;
            0
        } else {
            let def = canonical.window_len;
            let v = field!(bag, "batching.window_len", def, parse_usize);
            if v < 2 || v > dataset.n_points {
                return Err(CliError::validation(format!(
                    "batching.window_len: must lie in [2, {}], got {v}",
                    dataset.n_points
                )));
            }
            v
        };

        let training = TrainingConfig {
            lr: require_positive("training.lr", field!(bag, "training.lr", 1e-3, parse_f64))?,
            epochs: require_at_least(
                "training.epochs",
                field!(bag, "training.epochs", 3000, parse_usize),
                1,
            )?,
            prior_sd: require_positive(
                "training.prior_sd",
                field!(bag, "training.prior_sd", 100.0, parse_f64),
            )?,
            substeps: if is_static {
                bag.forbid("training.substeps", "to a static model")?;
                0
            } else {
                require_at_least(
                    "training.substeps",
                    field!(bag, "training.substeps", 2, parse_usize),
                    1,
                )?
            },
            reestimate_every: field!(bag, "training.reestimate_every", 0, parse_usize),
            beta2_init: require_positive(
                "training.beta2_init",
                field!(bag, "training.beta2_init", 1.0, parse_f64),
            )?,
        };

        let method = match bag.take("inference.method") {
            Some(raw) => Method::parse(&raw)?,
            None => Method::Laplace,
        };
        if method == Method::Blr && !is_static {
            return Err(CliError::validation(
                "inference.method: blr applies only to model cubic_static",
            ));
        }

        let mut inference = InferenceConfig {
            method,
            fisher: FisherKind::Gradient,
            invert: InvertKind::Pinv,
            epsilon: 0.1,
            l_steps: 10,
            warmup: 500,
            samples: 5000,
            max_depth: 10,
            target_accept: 0.8,
            iters: 2000,
            vi_lr: 1e-2,
            n_mc: 8,
            init_scale: 0.05,
            particles: 500,
            rounds: 5,
            quantile: 0.5,
            box_halfwidth: 5.0,
        };
        let not_this_method = format!("to method '{}'", method.as_str());
        if method == Method::Laplace {
            inference.fisher = match bag.take("inference.fisher").as_deref() {
                None | Some("gradient") => FisherKind::Gradient,
                Some("hessian") => FisherKind::Hessian,
                Some(other) => {
                    return Err(CliError::validation(format!(
                        "inference.fisher: unknown value '{other}' (expected gradient|hessian)"
                    )))
                }
            };
            inference.invert = match bag.take("inference.invert").as_deref() {
                None | Some("pinv") => InvertKind::Pinv,
                Some("diagonal") => InvertKind::Diagonal,
                Some(other) => {
                    return Err(CliError::validation(format!(
                        "inference.invert: unknown value '{other}' (expected pinv|diagonal)"
                    )))
                }
            };
        } else {
            bag.forbid("inference.fisher", &not_this_method)?;
            bag.forbid("inference.invert", &not_this_method)?;
        }
        if method == Method::Hmc {
            inference.epsilon = require_positive(
                "inference.epsilon",
                field!(bag, "inference.epsilon", 0.1, parse_f64),
            )?;
            inference.l_steps = require_at_least(
                "inference.l_steps",
                field!(bag, "inference.l_steps", 10, parse_usize),
                1,
            )?;
        } else {
            bag.forbid("inference.epsilon", &not_this_method)?;
            bag.forbid("inference.l_steps", &not_this_method)?;
        }
        if matches!(method, Method::Hmc | Method::Nuts) {
            inference.warmup =
                field!(bag, "inference.warmup", inference.warmup, parse_usize);
            inference.samples = require_at_least(
                "inference.samples",
                field!(bag, "inference.samples", inference.samples, parse_usize),
                2,
            )?;
        } else {
            bag.forbid("inference.warmup", &not_this_method)?;
            bag.forbid("inference.samples", &not_this_method)?;
        }
        if method == Method::Nuts {
            inference.max_depth = require_at_least(
                "inference.max_depth",
                field!(bag, "inference.max_depth", 10, parse_usize),
                1,
            )?;
            inference.target_accept =
                field!(bag, "inference.target_accept", 0.8, parse_f64);
            if !(inference.target_accept > 0.0 && inference.target_accept < 1.0) {
                return Err(CliError::validation(format!(
                    "inference.target_accept: must lie strictly in (0, 1), got {}",
                    inference.target_accept
                )));
            }
        } else {
            bag.forbid("inference.max_depth", &not_this_method)?;
            bag.forbid("inference.target_accept", &not_this_method)?;
        }
        if method == Method::Vi {
            inference.iters = require_at_least(
                "inference.iters",
                field!(bag, "inference.iters", 2000, parse_usize),
                1,
            )?;
            inference.vi_lr = require_positive(
                "inference.vi_lr",
                field!(bag, "inference.vi_lr", 1e-2, parse_f64),
            )?;
            inference.n_mc = require_at_least(
                "inference.n_mc",
                field!(bag, "inference.n_mc", 8, parse_usize),
                1,
            )?;
            inference.init_scale = require_positive(
                "inference.init_scale",
                field!(bag, "inference.init_scale", 0.05, parse_f64),
            )?;
        } else {
            bag.forbid("inference.iters", &not_this_method)?;
            bag.forbid("inference.vi_lr", &not_this_method)?;
            bag.forbid("inference.n_mc", &not_this_method)?;
            bag.forbid("inference.init_scale", &not_this_method)?;
        }
        if method == Method::Abc {
            inference.particles = require_at_least(
                "inference.particles",
                field!(bag, "inference.particles", 500, parse_usize),
                2,
            )?;
            inference.rounds = require_at_least(
                "inference.rounds",
                field!(bag, "inference.rounds", 5, parse_usize),
                1,
            )?;
            inference.quantile = field!(bag, "inference.quantile", 0.5, parse_f64);
            if !(inference.quantile > 0.0 && inference.quantile < 1.0) {
                return Err(CliError::validation(format!(
                    "inference.quantile: must lie strictly in (0, 1), got {}",
                    inference.quantile
                )));
            }
            inference.box_halfwidth = require_positive(
                "inference.box_halfwidth",
                field!(bag, "inference.box_halfwidth", 5.0, parse_f64),
            )?;
        } else {
            bag.forbid("inference.particles", &not_this_method)?;
            bag.forbid("inference.rounds", &not_this_method)?;
            bag.forbid("inference.quantile", &not_this_method)?;
            bag.forbid("inference.box_halfwidth", &not_this_method)?;
        }

        let expansion_n_mc = require_at_least(
            "expansion.n_mc",
            field!(bag, "expansion.n_mc", 4000, parse_usize),
            1,
        )?;
        let n_pred = require_at_least(
            "prediction.n_pred",
            field!(bag, "prediction.n_pred", 500, parse_usize),
            2,
        )?;
        let horizon_multiplier = {
            let v = field!(bag, "prediction.horizon_multiplier", 5.0, parse_f64);
            if !v.is_finite() || v < 1.0 {
                return Err(CliError::validation(format!(
                    "prediction.horizon_multiplier: must be at least 1, got {v}"
                )));
            }
            v
        };

        let leftovers = bag.leftovers();
        if !leftovers.is_empty() {
            return Err(CliError::validation(format!(
                "unknown keys: {}",
                leftovers.join(", ")
            )));
        }

        Ok(ExperimentConfig {
            model,
            dataset,
            width,
            degree,
            smoothing,
            window_len,
            training,
            inference,
            expansion_n_mc,
            n_pred,
            horizon_multiplier,
            out_dir,
        })
    }

    /// Every applicable key with its resolved value, in registry order.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let is_static = self.is_static();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", self.model.as_str().to_string());
        kv("dataset.n_points", self.dataset.n_points.to_string());
        kv("dataset.t_start", format!("{:e}", self.dataset.t_span.0));
        kv("dataset.t_end", format!("{:e}", self.dataset.t_span.1));
        kv("dataset.noise_sd", format!("{:e}", self.dataset.noise_sd));
        kv("dataset.replicates", self.dataset.replicates.to_string());
        kv("dataset.seed", self.dataset.seed.to_string());
        kv("architecture.width", self.width.to_string());
        kv("architecture.degree", self.degree.to_string());
        if !is_static {
            kv("smoothing.enabled", self.smoothing.enabled.to_string());
            if self.smoothing.enabled {
                kv("smoothing.kernel", self.smoothing.kernel.as_str().to_string());
                kv("smoothing.amplitude2", format!("{:e}", self.smoothing.amplitude2));
                kv("smoothing.length", format!("{:e}", self.smoothing.length));
                if self.smoothing.kernel == KernelKind::Periodic {
                    kv("smoothing.period", format!("{:e}", self.smoothing.period));
                }
                if self.smoothing.kernel == KernelKind::RationalQuadratic {
                    kv("smoothing.alpha", format!("{:e}", self.smoothing.alpha));
                }
                kv("smoothing.noise2", format!("{:e}", self.smoothing.noise2));
            }
            kv("batching.window_len", self.window_len.to_string());
        }
        kv("training.lr", format!("{:e}", self.training.lr));
        kv("training.epochs", self.training.epochs.to_string());
        kv("training.prior_sd", format!("{:e}", self.training.prior_sd));
        if !is_static {
            kv("training.substeps", self.training.substeps.to_string());
        }
        kv("training.reestimate_every", self.training.reestimate_every.to_string());
        kv("training.beta2_init", format!("{:e}", self.training.beta2_init));
        let inf = &self.inference;
        kv("inference.method", inf.method.as_str().to_string());
        match inf.method {
            Method::Laplace => {
                kv(
                    "inference.fisher",
                    match inf.fisher {
                        FisherKind::Gradient => "gradient",
                        FisherKind::Hessian => "hessian",
                    }
                    .to_string(),
                );
                kv(
                    "inference.invert",
                    match inf.invert {
                        InvertKind::Pinv => "pinv",
                        InvertKind::Diagonal => "diagonal",
                    }
                    .to_string(),
                );
            }
            Method::Hmc => {
                kv("inference.epsilon", format!("{:e}", inf.epsilon));
                kv("inference.l_steps", inf.l_steps.to_string());
                kv("inference.warmup", inf.warmup.to_string());
                kv("inference.samples", inf.samples.to_string());
            }
            Method::Nuts => {
                kv("inference.warmup", inf.warmup.to_string());
                kv("inference.samples", inf.samples.to_string());
                kv("inference.max_depth", inf.max_depth.to_string());
                kv("inference.target_accept", format!("{:e}", inf.target_accept));
            }
            Method::Vi => {
                kv("inference.iters", inf.iters.to_string());
                kv("inference.vi_lr", format!("{:e}", inf.vi_lr));
                kv("inference.n_mc", inf.n_mc.to_string());
                kv("inference.init_scale", format!("{:e}", inf.init_scale));
            }
            Method::Blr => {}
            Method::Abc => {
                kv("inference.particles", inf.particles.to_string());
                kv("inference.rounds", inf.rounds.to_string());
                kv("inference.quantile", format!("{:e}", inf.quantile));
                kv("inference.box_halfwidth", format!("{:e}", inf.box_halfwidth));
            }
        }
        kv("expansion.n_mc", self.expansion_n_mc.to_string());
        kv("prediction.n_pred", self.n_pred.to_string());
        kv("prediction.horizon_multiplier", format!("{:e}", self.horizon_multiplier));
        kv("output.dir", self.out_dir.clone());
        s
    }
}
