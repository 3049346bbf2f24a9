//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers, `#` comments. Defaults depend on the experiment kind.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::conformal::SearchSpec;
use crate::error::{McvError, Result};
use crate::evaluation::CiMethod;
use crate::imputation::ImputeMode;
use crate::missingness::Mechanism;
use crate::models::TreeParams;
use crate::ratio::MaskSampler;
use crate::tabular::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    SynthMcar,
    SynthMar,
    SynthMnar,
    RealCsv,
    AblationNocorrect,
    RatioQuality,
    BoundCheck,
    ImputeAblation,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::SynthMcar,
        Kind::SynthMar,
        Kind::SynthMnar,
        Kind::RealCsv,
        Kind::AblationNocorrect,
        Kind::RatioQuality,
        Kind::BoundCheck,
        Kind::ImputeAblation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::SynthMcar => "synth-mcar",
            Kind::SynthMar => "synth-mar",
            Kind::SynthMnar => "synth-mnar",
            Kind::RealCsv => "real-csv",
            Kind::AblationNocorrect => "ablation-nocorrect",
            Kind::RatioQuality => "ratio-quality",
            Kind::BoundCheck => "bound-check",
            Kind::ImputeAblation => "impute-ablation",
        }
    }

    pub fn is_synthetic(self) -> bool {
        self != Kind::RealCsv
    }
}

impl FromStr for Kind {
    type Err = McvError;
    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Kind::ALL.iter().map(|k| k.as_str()).collect();
            McvError::Config(format!("unknown experiment kind '{s}'; valid kinds: {}", names.join(", ")))
        })
    }
}

/// Prediction-set methods. `Uncorrected` is split CP on the imputed,
/// test-masked calibration set with unit weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Split,
    MdaExact,
    MdaNested,
    MdaNestedStar,
    Weighted,
    Arc,
    Uncorrected,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Split,
        Method::MdaExact,
        Method::MdaNested,
        Method::MdaNestedStar,
        Method::Weighted,
        Method::Arc,
        Method::Uncorrected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::MdaExact => "mda-exact",
            Method::MdaNested => "mda-nested",
            Method::MdaNestedStar => "mda-nested-star",
            Method::Weighted => "weighted",
            Method::Arc => "arc",
            Method::Uncorrected => "uncorrected",
        }
    }
}

impl FromStr for Method {
    type Err = McvError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
            McvError::Config(format!("unknown method '{s}'; valid methods: {}", names.join(", ")))
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputerKind {
    /// Chained Bayesian ridge fitted on the training split.
    Mice,
    /// Perturbed draw from the true Gaussian conditional.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioSource {
    Estimated,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dim: usize,
    pub rho: f64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test_per_mask: usize,
    pub csv: Option<PathBuf>,
    pub na_token: String,
    pub has_header: bool,
    /// Restrict evaluation to these masks; `None` means every reachable mask.
    pub test_masks: Option<Vec<Mask>>,
    pub n_extra: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessConfig {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub maskable: Vec<usize>,
    pub driver: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputerSection {
    pub kind: ImputerKind,
    pub mode: ImputeMode,
    pub use_response: bool,
    pub n_rounds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioSection {
    pub source: RatioSource,
    pub q: usize,
    pub sampler: MaskSampler,
    pub sigmas: Vec<f64>,
    pub omega_inflation: f64,
    pub nested_star_extra: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbSection {
    pub scale: f64,
    pub bias: f64,
    pub inflation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub smooth: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub n_reps: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub ci: CiMethod,
    pub data: DataConfig,
    pub missingness: MissingnessConfig,
    pub imputer: ImputerSection,
    pub model: TreeParams,
    /// Classifier behind the estimated ratio and the bound check.
    pub ratio_model: TreeParams,
    pub ratio: RatioSection,
    pub perturb: PerturbSection,
    pub search: SearchSpec,
    pub output: OutputSection,
}

const TREE_KEYS: &[&str] = &["n_trees", "max_depth", "learning_rate", "max_bins", "min_samples_leaf", "lambda", "subsample", "validation_fraction", "patience"];

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["kind", "seed", "n_reps", "alpha", "methods", "jobs", "ci"]),
    (
        "data",
        &["dim", "rho", "n_train", "n_cal", "n_test_per_mask", "csv", "na_token", "has_header", "test_masks", "n_extra"],
    ),
    ("missingness", &["mechanism", "rate", "maskable", "driver"]),
    ("imputer", &["kind", "mode", "use_response", "n_rounds"]),
    ("model", TREE_KEYS),
    ("ratio_model", TREE_KEYS),
    ("ratio", &["source", "q", "sampler", "sampler_p", "sigmas", "omega_inflation", "nested_star_extra"]),
    ("perturb", &["scale", "bias", "inflation"]),
    ("search", &["grid_points"]),
    ("output", &["dir", "smooth"]),
];

fn write_tree(f: &mut fmt::Formatter<'_>, section: &str, p: &TreeParams) -> fmt::Result {
    writeln!(f, "\n[{section}]")?;
    writeln!(f, "n_trees = {}", p.n_trees)?;
    writeln!(f, "max_depth = {}", p.max_depth)?;
    writeln!(f, "learning_rate = {}", p.learning_rate)?;
    writeln!(f, "max_bins = {}", p.max_bins)?;
    writeln!(f, "min_samples_leaf = {}", p.min_samples_leaf)?;
    writeln!(f, "lambda = {}", p.lambda)?;
    writeln!(f, "subsample = {}", p.subsample)?;
    writeln!(f, "validation_fraction = {}", p.validation_fraction)?;
    writeln!(f, "patience = {}", p.patience)
}

/// Raw `section.key -> value` map after syntax checks.
fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section: Option<&str> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| McvError::Config(format!("line {}: {msg}", ln + 1));
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            let (s, _) = KEYS.iter().find(|(s, _)| *s == name).ok_or_else(|| err(format!("unknown section [{name}]")))?;
            section = Some(s);
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
        let sec = section.ok_or_else(|| err("key outside of any [section]".into()))?;
        let k = k.trim();
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, ks)| ks.contains(&k)).unwrap_or(false);
        if !known {
            return Err(err(format!("unknown key '{k}' in [{sec}]")));
        }
        let full = format!("{sec}.{k}");
        if out.insert(full.clone(), v.trim().to_string()).is_some() {
            return Err(err(format!("duplicate key {full}")));
        }
    }
    Ok(out)
}

struct Entries(BTreeMap<String, String>);

fn tree_params(e: &Entries, section: &str, d: TreeParams) -> Result<TreeParams> {
    let k = |name: &str| format!("{section}.{name}");
    Ok(TreeParams {
        n_trees: e.or(&k("n_trees"), d.n_trees)?,
        max_depth: e.or(&k("max_depth"), d.max_depth)?,
        learning_rate: e.or(&k("learning_rate"), d.learning_rate)?,
        max_bins: e.or(&k("max_bins"), d.max_bins)?,
        min_samples_leaf: e.or(&k("min_samples_leaf"), d.min_samples_leaf)?,
        lambda: e.or(&k("lambda"), d.lambda)?,
        subsample: e.or(&k("subsample"), d.subsample)?,
        validation_fraction: e.or(&k("validation_fraction"), d.validation_fraction)?,
        patience: e.or(&k("patience"), d.patience)?,
    })
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| McvError::Config(format!("{key} = '{v}': {e}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) if v.trim().is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<T>().map_err(|e| McvError::Config(format!("{key}: '{}': {e}", s.trim()))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        self.0.get(key).cloned()
    }
}

fn parse_bool(key: &str, v: Option<String>, default: bool) -> Result<bool> {
    match v.as_deref() {
        None => Ok(default),
        Some("true" | "yes" | "1") => Ok(true),
        Some("false" | "no" | "0") => Ok(false),
        Some(o) => Err(McvError::Config(format!("{key} = '{o}': expected true or false"))),
    }
}

fn default_methods(kind: Kind) -> Vec<Method> {
    use Method::*;
    match kind {
        Kind::AblationNocorrect => vec![Uncorrected, Weighted],
        Kind::RatioQuality | Kind::BoundCheck => vec![Weighted],
        Kind::ImputeAblation => vec![Weighted, Arc],
        _ => vec![Split, MdaExact, MdaNested, Weighted, Arc],
    }
}

fn oracle_study(kind: Kind) -> bool {
    matches!(kind, Kind::RatioQuality | Kind::BoundCheck)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries(parse_entries(text)?);
        let kind: Kind = e.get("experiment.kind")?.ok_or_else(|| McvError::Config("missing experiment.kind".into()))?;
        let oracle = oracle_study(kind);

        let methods = match e.list::<Method>("experiment.methods")? {
            Some(m) => m,
            None => default_methods(kind),
        };
        let dim = e.or("data.dim", 5usize)?;
        let test_masks = match e.string("data.test_masks") {
            None if oracle => Some(vec![oracle_mask(dim)]),
            None => None,
            Some(v) => Some(
                v.split(',')
                    .map(|s| Mask::from_bitstring(s.trim()).map_err(|err| McvError::Config(format!("data.test_masks: {err}"))))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let data = DataConfig {
            dim,
            rho: e.or("data.rho", 0.8)?,
            n_train: e.or("data.n_train", 500usize)?,
            n_cal: e.or("data.n_cal", if oracle { 200 } else { 100usize })?,
            n_test_per_mask: e.or("data.n_test_per_mask", if oracle { 100 } else { 50usize })?,
            csv: e.string("data.csv").map(PathBuf::from),
            na_token: e.string("data.na_token").unwrap_or_else(|| "NA".into()),
            has_header: parse_bool("data.has_header", e.string("data.has_header"), true)?,
            test_masks,
            n_extra: e.or("data.n_extra", 5000usize)?,
        };

        let default_mech = match kind {
            Kind::SynthMar => Mechanism::Mar,
            Kind::SynthMnar => Mechanism::Mnar,
            _ => Mechanism::Mcar,
        };
        let mechanism = match e.string("missingness.mechanism") {
            None => default_mech,
            Some(s) => parse_mechanism(&s)?,
        };
        let (def_rate, def_maskable, def_driver) = match mechanism {
            Mechanism::Mcar => (0.5, (0..dim).collect(), vec![]),
            Mechanism::Mar => (0.2, (0..dim.min(3)).collect(), (dim.min(3)..dim).collect()),
            Mechanism::Mnar => (0.2, (0..dim.min(3)).collect(), vec![]),
        };
        let missingness = MissingnessConfig {
            mechanism,
            rate: e.or("missingness.rate", def_rate)?,
            maskable: e.list("missingness.maskable")?.unwrap_or(def_maskable),
            driver: e.list("missingness.driver")?.unwrap_or(def_driver),
        };

        let imputer = ImputerSection {
            kind: match e.string("imputer.kind").as_deref() {
                None => {
                    if oracle {
                        ImputerKind::Oracle
                    } else {
                        ImputerKind::Mice
                    }
                }
                Some("mice") => ImputerKind::Mice,
                Some("oracle") => ImputerKind::Oracle,
                Some(o) => return Err(McvError::Config(format!("imputer.kind = '{o}': expected mice or oracle"))),
            },
            mode: match e.string("imputer.mode") {
                None if kind == Kind::ImputeAblation => ImputeMode::Deterministic,
                None => ImputeMode::Distributional,
                Some(s) => ImputeMode::parse(&s).map_err(|err| McvError::Config(err.to_string()))?,
            },
            use_response: parse_bool("imputer.use_response", e.string("imputer.use_response"), true)?,
            n_rounds: e.or("imputer.n_rounds", 5usize)?,
        };

        let model = tree_params(&e, "model", TreeParams::default())?;
        // The perturbed-imputer worlds carry ratios spanning many orders of
        // magnitude, which the shallow default cannot reach.
        let ratio_default = if oracle { TreeParams::default() } else { TreeParams::ratio_default() };
        let ratio_model = tree_params(&e, "ratio_model", ratio_default)?;

        let sampler = match e.string("ratio.sampler").as_deref() {
            None | Some("empirical") => MaskSampler::Empirical,
            Some("bernoulli") => MaskSampler::Bernoulli(e.or("ratio.sampler_p", 0.5)?),
            Some(o) => return Err(McvError::Config(format!("ratio.sampler = '{o}': expected empirical or bernoulli"))),
        };
        let ratio = RatioSection {
            source: match e.string("ratio.source").as_deref() {
                None | Some("estimated") => RatioSource::Estimated,
                Some("exact") => RatioSource::Exact,
                Some(o) => return Err(McvError::Config(format!("ratio.source = '{o}': expected estimated or exact"))),
            },
            q: e.or("ratio.q", 5usize)?,
            sampler,
            sigmas: e.list("ratio.sigmas")?.unwrap_or_else(|| match kind {
                Kind::RatioQuality => vec![0.0, 0.5, 1.0, 2.0],
                _ => vec![0.0],
            }),
            omega_inflation: e.or("ratio.omega_inflation", 1.5)?,
            nested_star_extra: e.or("ratio.nested_star_extra", 1usize)?,
        };
        let perturb = if oracle || imputer.kind == ImputerKind::Oracle {
            PerturbSection { scale: 1.5, bias: 0.5, inflation: 0.2 }
        } else {
            PerturbSection { scale: 1.0, bias: 0.0, inflation: 0.0 }
        };
        let perturb = PerturbSection {
            scale: e.or("perturb.scale", perturb.scale)?,
            bias: e.or("perturb.bias", perturb.bias)?,
            inflation: e.or("perturb.inflation", perturb.inflation)?,
        };

        let cfg = ExperimentConfig {
            kind,
            seed: e.or("experiment.seed", 0u64)?,
            n_reps: e.or("experiment.n_reps", 100usize)?,
            alpha: e.or("experiment.alpha", 0.1)?,
            methods,
            jobs: e.or("experiment.jobs", 0usize)?,
            ci: match e.string("experiment.ci") {
                None => CiMethod::Normal,
                Some(s) => CiMethod::parse(&s)?,
            },
            data,
            missingness,
            imputer,
            model,
            ratio_model,
            ratio,
            perturb,
            search: SearchSpec { grid_points: e.or("search.grid_points", 1000usize)? },
            output: OutputSection {
                dir: e.string("output.dir").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
                smooth: parse_bool("output.smooth", e.string("output.smooth"), false)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| McvError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(csv) = &cfg.data.csv {
            if csv.is_relative() {
                if let Some(parent) = path.parent() {
                    cfg.data.csv = Some(parent.join(csv));
                }
            }
        }
        Ok(cfg)
    }

    /// Full-scale sizes: ten covariates, 500 repetitions, 100 test points
    /// per mask.
    pub fn full_scale(&mut self) {
        log::warn!("full-scale run: d=10, 500 repetitions; expect hours of compute");
        self.data.dim = 10;
        self.n_reps = 500;
        self.data.n_test_per_mask = 100;
        if self.missingness.mechanism == Mechanism::Mcar {
            self.missingness.maskable = (0..10).collect();
        }
        if self.data.test_masks.as_ref().is_some_and(|ms| ms.iter().any(|m| m.len() != 10)) {
            self.data.test_masks = if oracle_study(self.kind) { Some(vec![oracle_mask(10)]) } else { None };
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(McvError::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if self.data.n_cal == 0 {
            return bad("n_cal must be at least 1".into());
        }
        if self.data.n_train == 0 || self.data.n_test_per_mask == 0 {
            return bad("n_train and n_test_per_mask must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        self.model.validate()?;
        self.ratio_model.validate()?;
        if self.search.grid_points == 0 {
            return bad("search.grid_points must be positive".into());
        }
        if self.ratio.q == 0 {
            return bad("ratio.q must be at least 1".into());
        }
        if let MaskSampler::Bernoulli(p) = self.ratio.sampler {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("ratio.sampler_p must lie in [0, 1), got {p}"));
            }
        }
        if self.ratio.sigmas.is_empty() || self.ratio.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("ratio.sigmas must be a nonempty list of finite values >= 0".into());
        }
        if !(self.ratio.omega_inflation >= 1.0) {
            return bad("ratio.omega_inflation must be at least 1".into());
        }
        if self.imputer.n_rounds == 0 {
            return bad("imputer.n_rounds must be at least 1".into());
        }
        if !(self.perturb.scale > 0.0) || !(self.perturb.inflation >= 0.0) || !self.perturb.bias.is_finite() {
            return bad("perturb needs scale > 0, inflation >= 0 and a finite bias".into());
        }
        if self.kind == Kind::RealCsv {
            if self.data.csv.is_none() {
                return bad("real-csv needs data.csv".into());
            }
            if self.imputer.kind == ImputerKind::Oracle || self.ratio.source == RatioSource::Exact {
                return bad("the oracle imputer and exact ratio need a synthetic experiment".into());
            }
            return Ok(());
        }
        let d = self.data.dim;
        if d == 0 || d > 10 {
            return bad(format!("data.dim must lie in 1..=10, got {d}"));
        }
        if !(self.data.rho > -1.0 / (d as f64 - 1.0).max(1.0) && self.data.rho < 1.0) && d > 1 {
            return bad(format!("data.rho = {} does not give a positive definite covariance", self.data.rho));
        }
        let spec = self.missingness_spec();
        spec.validate(d).map_err(|e| McvError::Config(e.to_string()))?;
        if let Some(ms) = &self.data.test_masks {
            if ms.is_empty() {
                return bad("data.test_masks is empty".into());
            }
            if let Some(m) = ms.iter().find(|m| m.len() != d) {
                return bad(format!("test mask {m} has length {}, expected {d}", m.len()));
            }
        }
        let needs_oracle = self.imputer.kind == ImputerKind::Oracle || self.ratio.source == RatioSource::Exact || oracle_study(self.kind);
        if needs_oracle && self.missingness.mechanism != Mechanism::Mcar {
            return bad("the oracle imputer and exact ratio are only available under MCAR".into());
        }
        if self.ratio.source == RatioSource::Exact && self.imputer.kind != ImputerKind::Oracle {
            return bad("ratio.source = exact needs imputer.kind = oracle".into());
        }
        if self.kind == Kind::BoundCheck && self.data.n_extra < 40 {
            return bad("bound-check needs data.n_extra >= 40".into());
        }
        Ok(())
    }

    pub fn missingness_spec(&self) -> crate::missingness::MissingnessSpec {
        crate::missingness::MissingnessSpec {
            mechanism: self.missingness.mechanism,
            rate: self.missingness.rate,
            maskable: self.missingness.maskable.clone(),
            driver: self.missingness.driver.clone(),
            exclude_full: true,
        }
    }

    pub fn perturb_spec(&self) -> crate::gaussian::PerturbSpec {
        crate::gaussian::PerturbSpec::uniform(self.perturb.scale, self.perturb.bias, self.perturb.inflation, self.data.dim)
    }

    pub fn imputer_config(&self) -> crate::imputation::ImputerConfig {
        crate::imputation::ImputerConfig {
            mode: self.imputer.mode,
            use_response: self.imputer.use_response,
            n_rounds: self.imputer.n_rounds,
            ..Default::default()
        }
    }
}

/// First three covariates missing, the rest observed.
fn oracle_mask(d: usize) -> Mask {
    Mask::new((0..d).map(|j| j < 3.min(d.saturating_sub(1))).collect())
}

fn parse_mechanism(s: &str) -> Result<Mechanism> {
    match s {
        "mcar" => Ok(Mechanism::Mcar),
        "mar" => Ok(Mechanism::Mar),
        "mnar" => Ok(Mechanism::Mnar),
        o => Err(McvError::Config(format!("missingness.mechanism = '{o}': expected mcar, mar or mnar"))),
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Resolved configuration in the input format, every key present.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[experiment]")?;
        writeln!(f, "kind = {}", self.kind.as_str())?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "n_reps = {}", self.n_reps)?;
        writeln!(f, "alpha = {}", self.alpha)?;
        writeln!(f, "methods = {}", join(&self.methods))?;
        writeln!(f, "jobs = {}", self.jobs)?;
        writeln!(f, "ci = {}", self.ci.as_str())?;
        writeln!(f, "\n[data]")?;
        writeln!(f, "dim = {}", self.data.dim)?;
        writeln!(f, "rho = {}", self.data.rho)?;
        writeln!(f, "n_train = {}", self.data.n_train)?;
        writeln!(f, "n_cal = {}", self.data.n_cal)?;
        writeln!(f, "n_test_per_mask = {}", self.data.n_test_per_mask)?;
        if let Some(csv) = &self.data.csv {
            writeln!(f, "csv = {}", csv.display())?;
        }
        writeln!(f, "na_token = {}", self.data.na_token)?;
        writeln!(f, "has_header = {}", self.data.has_header)?;
        if let Some(ms) = &self.data.test_masks {
            writeln!(f, "test_masks = {}", join(ms))?;
        }
        writeln!(f, "n_extra = {}", self.data.n_extra)?;
        writeln!(f, "\n[missingness]")?;
        writeln!(f, "mechanism = {}", self.missingness.mechanism.as_str())?;
        writeln!(f, "rate = {}", self.missingness.rate)?;
        writeln!(f, "maskable = {}", join(&self.missingness.maskable))?;
        writeln!(f, "driver = {}", join(&self.missingness.driver))?;
        writeln!(f, "\n[imputer]")?;
        writeln!(f, "kind = {}", if self.imputer.kind == ImputerKind::Mice { "mice" } else { "oracle" })?;
        writeln!(f, "mode = {}", self.imputer.mode.as_str())?;
        writeln!(f, "use_response = {}", self.imputer.use_response)?;
        writeln!(f, "n_rounds = {}", self.imputer.n_rounds)?;
        write_tree(f, "model", &self.model)?;
        write_tree(f, "ratio_model", &self.ratio_model)?;
        writeln!(f, "\n[ratio]")?;
        writeln!(f, "source = {}", if self.ratio.source == RatioSource::Exact { "exact" } else { "estimated" })?;
        writeln!(f, "q = {}", self.ratio.q)?;
        match self.ratio.sampler {
            MaskSampler::Empirical => writeln!(f, "sampler = empirical")?,
            MaskSampler::Bernoulli(p) => writeln!(f, "sampler = bernoulli\nsampler_p = {p}")?,
        }
        writeln!(f, "sigmas = {}", join(&self.ratio.sigmas))?;
        writeln!(f, "omega_inflation = {}", self.ratio.omega_inflation)?;
        writeln!(f, "nested_star_extra = {}", self.ratio.nested_star_extra)?;
        writeln!(f, "\n[perturb]")?;
        writeln!(f, "scale = {}", self.perturb.scale)?;
        writeln!(f, "bias = {}", self.perturb.bias)?;
        writeln!(f, "inflation = {}", self.perturb.inflation)?;
        writeln!(f, "\n[search]")?;
        writeln!(f, "grid_points = {}", self.search.grid_points)?;
        writeln!(f, "\n[output]")?;
        writeln!(f, "dir = {}", self.output.dir.display())?;
        writeln!(f, "smooth = {}", self.output.smooth)
    }
}
