//! Repetition loop for every experiment kind. Each repetition draws its own
//! data from counter-keyed streams, so results are identical for any worker
//! count and the same seed reproduces the same data across kinds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ImputerKind, Kind, Method, RatioSource};
use crate::conformal::BandModel;
use crate::error::{McvError, Result};
use crate::evaluation::{
    aggregate, build_pm_ptilde, miscoverage_bound, summary_csv, worst_case, write_reports, BoundReport, CellSummary,
    LabeledPoint, TrialReport,
};
use crate::gaussian::{GaussianModel, PerturbedWorld};
use crate::imputation::{fit_imputer, Impute};
use crate::missingness::{Mechanism, MissingnessModel};
use crate::pipeline::{fit_ratio_on, Calibration, ImputeThenRegress, MaskEngine, MethodSettings};
use crate::ratio::{ConstantRatio, ExactRatio, PerturbedRatio, RatioModel, RatioPoint, RatioTrainSpec};
use crate::rng::{mix, stream, tag, McvRng};
use crate::stats;
use crate::tabular::{load_csv, mask_apply, na_pattern, CsvOptions, Dataset, Mask, MaskedSample, PredictionInterval};

/// One run of the ratio-quality sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityRow {
    pub rep: usize,
    pub sigma: f64,
    pub mask: Mask,
    /// Pearson correlation between perturbed and exact ratios on the
    /// calibration points; NaN when undefined.
    pub correlation: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub rep: usize,
    pub sigma: f64,
    pub report: BoundReport,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub reports: Vec<TrialReport>,
    pub table: Vec<CellSummary>,
    pub oracle_widths: Vec<(Mask, f64)>,
    pub quality: Vec<QualityRow>,
    pub bounds: Vec<BoundRow>,
}

impl RunOutput {
    /// Rows of the summary table for one method.
    pub fn rows(&self, method: &str) -> Vec<&CellSummary> {
        self.table.iter().filter(|c| c.method == method).collect()
    }
}

struct Synth {
    model: GaussianModel,
    mech: MissingnessModel,
    world: Option<Arc<PerturbedWorld>>,
    exact: Option<Arc<ExactRatio>>,
}

fn synth_setup(cfg: &ExperimentConfig) -> Result<Synth> {
    let d = cfg.data.dim;
    let model = GaussianModel::reference(d, cfg.data.rho)?;
    let spec = cfg.missingness_spec();
    let mech = match spec.mechanism {
        Mechanism::Mcar => MissingnessModel::mcar(spec, d)?,
        _ => {
            let mut rng = stream(cfg.seed, &[tag::MECHANISM]);
            let reference: Vec<Vec<f64>> = model.gen_joint(5000, &mut rng).into_iter().map(|(x, _)| x).collect();
            MissingnessModel::fit(spec, &reference, &mut rng)?
        }
    };
    let oracle = cfg.imputer.kind == ImputerKind::Oracle
        || cfg.ratio.source == RatioSource::Exact
        || matches!(cfg.kind, Kind::RatioQuality | Kind::BoundCheck);
    let (world, exact) = if oracle {
        let w = Arc::new(PerturbedWorld::new(model.clone(), cfg.perturb_spec(), &mech)?);
        (Some(w.clone()), Some(Arc::new(ExactRatio::new(w))))
    } else {
        (None, None)
    };
    Ok(Synth { model, mech, world, exact })
}

/// Masks with positive probability under the mechanism, lexicographic.
fn reachable_masks(cfg: &ExperimentConfig) -> Vec<Mask> {
    let d = cfg.data.dim;
    let maskable = &cfg.missingness.maskable;
    let mut out: Vec<Mask> = Mask::enumerate(d, true)
        .into_iter()
        .filter(|m| m.missing().iter().all(|j| maskable.contains(j)))
        .collect();
    if cfg.missingness.rate == 0.0 {
        out.retain(|m| m.n_missing() == 0);
    }
    out.sort_by_key(Mask::index);
    out
}

fn test_masks(cfg: &ExperimentConfig) -> Vec<Mask> {
    match &cfg.data.test_masks {
        Some(ms) => ms.clone(),
        None => reachable_masks(cfg),
    }
}

fn gen_masked(s: &Synth, n: usize, rng: &mut McvRng) -> (Vec<MaskedSample>, Vec<LabeledPoint>) {
    let mut samples = Vec::with_capacity(n);
    let mut full = Vec::with_capacity(n);
    for (x, y) in s.model.gen_joint(n, rng) {
        let m = s.mech.sample(&x, rng);
        samples.push(MaskedSample::from_complete(&x, &m, y).expect("mask has the data dimension"));
        full.push(LabeledPoint { x, mask: m, y });
    }
    (samples, full)
}

const MAX_TEST_DRAWS: usize = 20_000_000;

/// Draws from `(X, Y) | M = m` by rejection on `P(M = m | x)`.
fn draw_tests(s: &Synth, m: &Mask, n: usize, rng: &mut McvRng) -> Result<Vec<(Vec<f64>, f64)>> {
    if s.mech.spec().mechanism == Mechanism::Mcar {
        return Ok(s.model.gen_joint(n, rng));
    }
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        let (x, y) = s.model.sample_one(rng);
        if rng.random::<f64>() < s.mech.mask_probability(&x, m) {
            out.push((x, y));
        }
        tries += 1;
        if tries > MAX_TEST_DRAWS {
            return Err(McvError::InsufficientData(format!("mask {m} is too rare to sample test points")));
        }
    }
    Ok(out)
}

fn settings(cfg: &ExperimentConfig) -> MethodSettings {
    MethodSettings {
        alpha: cfg.alpha,
        search: cfg.search,
        omega_inflation: cfg.ratio.omega_inflation,
        nested_star_extra: cfg.ratio.nested_star_extra,
    }
}

fn ratio_spec(cfg: &ExperimentConfig) -> RatioTrainSpec {
    RatioTrainSpec { q: cfg.ratio.q, sampler: cfg.ratio.sampler.clone() }
}

fn needs_ratio(methods: &[Method]) -> bool {
    methods.iter().any(|m| matches!(m, Method::Weighted | Method::Arc))
}

/// Fitted state of one repetition.
struct RepModels {
    band: Arc<ImputeThenRegress>,
    imputer: Arc<dyn Impute>,
    ratio: Arc<dyn RatioModel>,
    calibration: Calibration,
}

fn fit_rep(
    cfg: &ExperimentConfig,
    train: &Dataset,
    cal: Vec<MaskedSample>,
    world: Option<&Arc<PerturbedWorld>>,
    exact: Option<&Arc<ExactRatio>>,
    rep: u64,
    with_ratio: bool,
) -> Result<RepModels> {
    let seed = cfg.seed;
    let band = Arc::new(ImputeThenRegress::fit(
        train,
        cfg.imputer.n_rounds,
        cfg.alpha,
        &cfg.model,
        &mut stream(seed, &[rep, tag::MODEL]),
    )?);
    let imputer: Arc<dyn Impute> = match (cfg.imputer.kind, world) {
        (ImputerKind::Oracle, Some(w)) => w.clone(),
        (ImputerKind::Oracle, None) => return Err(McvError::Config("oracle imputer needs a synthetic world".into())),
        (ImputerKind::Mice, _) => Arc::new(fit_imputer(train, &cfg.imputer_config(), &mut stream(seed, &[rep, tag::IMPUTER]))?),
    };
    let ratio: Arc<dyn RatioModel> = if !with_ratio {
        Arc::new(ConstantRatio(1.0))
    } else {
        match (cfg.ratio.source, exact) {
            (RatioSource::Exact, Some(e)) => e.clone(),
            (RatioSource::Exact, None) => return Err(McvError::Config("exact ratio needs a synthetic world".into())),
            (RatioSource::Estimated, _) => {
                fit_ratio_on(train, imputer.as_ref(), &ratio_spec(cfg), &cfg.ratio_model, &mut stream(seed, &[rep, tag::RATIO]))?
            }
        }
    };
    let calibration =
        Calibration::new(band.as_ref(), cal, imputer.as_ref(), &mut stream(seed, &[rep, tag::CAL, 1]))?;
    Ok(RepModels { band, imputer, ratio, calibration })
}

fn report(method: Method, mask: &Mask, rep: usize, iv: &PredictionInterval, y: f64) -> TrialReport {
    TrialReport { method: method.as_str().to_string(), mask: mask.clone(), rep, covered: iv.contains(y), width: iv.width() }
}

fn engine(cfg: &ExperimentConfig, methods: &[Method], m: &Mask, models: &RepModels, ratio: Arc<dyn RatioModel>, rep: u64) -> Result<MaskEngine> {
    let band: Arc<dyn BandModel> = models.band.clone();
    let mut arc_rng = stream(cfg.seed, &[rep, tag::ARC, m.index() as u64]);
    MaskEngine::new(methods, m, band, ratio, &models.calibration, &settings(cfg), &mut arc_rng)
}

fn synth_data(cfg: &ExperimentConfig, s: &Synth, rep: u64) -> Result<(Dataset, Vec<MaskedSample>)> {
    let (train, _) = gen_masked(s, cfg.data.n_train, &mut stream(cfg.seed, &[rep, tag::TRAIN]));
    let (cal, _) = gen_masked(s, cfg.data.n_cal, &mut stream(cfg.seed, &[rep, tag::CAL]));
    Ok((Dataset::new(train, cfg.data.dim)?, cal))
}

fn coverage_rep(cfg: &ExperimentConfig, s: &Synth, masks: &[Mask], rep: usize) -> Result<Vec<TrialReport>> {
    let r = rep as u64;
    let (train, cal) = synth_data(cfg, s, r)?;
    let models = fit_rep(cfg, &train, cal, s.world.as_ref(), s.exact.as_ref(), r, needs_ratio(&cfg.methods))?;
    let mut out = Vec::new();
    for m in masks {
        let eng = engine(cfg, &cfg.methods, m, &models, models.ratio.clone(), r)?;
        let tests = draw_tests(s, m, cfg.data.n_test_per_mask, &mut stream(cfg.seed, &[r, tag::TEST, m.index() as u64]))?;
        for (x, y) in &tests {
            let xm = mask_apply(x, m)?;
            for &method in &cfg.methods {
                out.push(report(method, m, rep, &eng.interval(method, &xm)?, *y));
            }
        }
    }
    Ok(out)
}

fn real_rep(cfg: &ExperimentConfig, data: &Dataset, rep: usize) -> Result<Vec<TrialReport>> {
    let r = rep as u64;
    let (n_train, n_cal) = (cfg.data.n_train, cfg.data.n_cal);
    if data.len() <= n_train + n_cal {
        return Err(McvError::InsufficientData(format!(
            "{} rows cannot hold {n_train} train + {n_cal} calibration rows and a test set",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut stream(cfg.seed, &[r, tag::SPLIT]));
    let train = data.subset(&idx[..n_train]);
    let cal = data.subset(&idx[n_train..n_train + n_cal]).samples().to_vec();
    let test = data.subset(&idx[n_train + n_cal..]);
    let models = fit_rep(cfg, &train, cal, None, None, r, needs_ratio(&cfg.methods))?;
    let mut groups: BTreeMap<usize, (Mask, Vec<&MaskedSample>)> = BTreeMap::new();
    for s in test.samples() {
        let m = na_pattern(s.x());
        if cfg.data.test_masks.as_ref().is_some_and(|ms| !ms.contains(&m)) {
            continue;
        }
        groups.entry(m.index()).or_insert_with(|| (m, Vec::new())).1.push(s);
    }
    let mut out = Vec::new();
    for (m, samples) in groups.values() {
        let eng = engine(cfg, &cfg.methods, m, &models, models.ratio.clone(), r)?;
        for s in samples {
            for &method in &cfg.methods {
                out.push(report(method, m, rep, &eng.interval(method, s.x())?, s.y()));
            }
        }
    }
    Ok(out)
}

/// `P(Y in iv | X_obs(m) = x_obs)` under the Gaussian model.
pub fn conditional_coverage(model: &GaussianModel, m: &Mask, x: &[f64], iv: &PredictionInterval) -> Result<f64> {
    if iv.is_empty() {
        return Ok(0.0);
    }
    let x_obs: Vec<f64> = m.observed().into_iter().map(|j| x[j]).collect();
    let (mu, var) = model.response_conditional(m, &x_obs)?;
    let sd = var.sqrt();
    Ok(stats::normal_cdf((iv.upper() - mu) / sd) - stats::normal_cdf((iv.lower() - mu) / sd))
}

fn sigma_method(sigma: f64) -> String {
    format!("weighted[sigma={sigma}]")
}

/// Shared set-up of the two oracle studies: models fitted with the perturbed
/// imputer and an estimated ratio.
fn oracle_rep(cfg: &ExperimentConfig, s: &Synth, r: u64) -> Result<RepModels> {
    let (train, cal) = synth_data(cfg, s, r)?;
    let mut cfg = cfg.clone();
    cfg.imputer.kind = ImputerKind::Oracle;
    cfg.ratio.source = RatioSource::Estimated;
    fit_rep(&cfg, &train, cal, s.world.as_ref(), s.exact.as_ref(), r, true)
}

fn ratio_points(models: &RepModels, m: &Mask) -> Result<Vec<RatioPoint>> {
    models.calibration.imputed.iter().map(|(x, y)| Ok((m.clone(), mask_apply(x, m)?, *y))).collect()
}

fn quality_rep(cfg: &ExperimentConfig, s: &Synth, masks: &[Mask], rep: usize) -> Result<(Vec<QualityRow>, Vec<TrialReport>)> {
    let r = rep as u64;
    let models = oracle_rep(cfg, s, r)?;
    let exact = s.exact.as_ref().expect("oracle studies build the exact ratio");
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for m in masks {
        let tests = draw_tests(s, m, cfg.data.n_test_per_mask, &mut stream(cfg.seed, &[r, tag::TEST, m.index() as u64]))?;
        let points = ratio_points(&models, m)?;
        for (k, &sigma) in cfg.ratio.sigmas.iter().enumerate() {
            let tilde: Arc<dyn RatioModel> =
                Arc::new(PerturbedRatio::new(models.ratio.clone(), sigma, mix(cfg.seed, &[r, tag::PERTURB, k as u64]))?);
            let correlation = crate::ratio::ratio_quality(tilde.as_ref(), exact.as_ref(), &points).unwrap_or(f64::NAN);
            let eng = engine(cfg, &[Method::Weighted], m, &models, tilde, r)?;
            let name = sigma_method(sigma);
            let (mut hits, mut widths) = (0usize, Vec::new());
            for (x, y) in &tests {
                let iv = eng.interval(Method::Weighted, &mask_apply(x, m)?)?;
                hits += iv.contains(*y) as usize;
                widths.push(iv.width());
                reports.push(TrialReport { method: name.clone(), mask: m.clone(), rep, covered: iv.contains(*y), width: iv.width() });
            }
            rows.push(QualityRow {
                rep,
                sigma,
                mask: m.clone(),
                correlation,
                coverage: hits as f64 / tests.len() as f64,
                width: stats::mean(&widths),
            });
        }
    }
    Ok((rows, reports))
}

fn bound_rep(cfg: &ExperimentConfig, s: &Synth, masks: &[Mask], rep: usize) -> Result<(Vec<BoundRow>, Vec<TrialReport>)> {
    let r = rep as u64;
    let models = oracle_rep(cfg, s, r)?;
    let sigma = cfg.ratio.sigmas[rep % cfg.ratio.sigmas.len()];
    let tilde: Arc<dyn RatioModel> =
        Arc::new(PerturbedRatio::new(models.ratio.clone(), sigma, mix(cfg.seed, &[r, tag::PERTURB]))?);
    let (_, extra) = gen_masked(s, cfg.data.n_extra, &mut stream(cfg.seed, &[r, tag::EXTRA]));
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for m in masks {
        let eng = engine(cfg, &[Method::Weighted], m, &models, tilde.clone(), r)?;
        let tests = draw_tests(s, m, cfg.data.n_test_per_mask, &mut stream(cfg.seed, &[r, tag::TEST, m.index() as u64]))?;
        let mut cov = Vec::with_capacity(tests.len());
        for (x, y) in &tests {
            let iv = eng.interval(Method::Weighted, &mask_apply(x, m)?)?;
            cov.push(conditional_coverage(&s.model, m, x, &iv)?);
            reports.push(TrialReport {
                method: Method::Weighted.as_str().into(),
                mask: m.clone(),
                rep,
                covered: iv.contains(*y),
                width: iv.width(),
            });
        }
        let mut brng = stream(cfg.seed, &[r, tag::BOUND, m.index() as u64]);
        let samples = build_pm_ptilde(&extra, models.imputer.as_ref(), tilde.as_ref(), m, None, &mut brng)?;
        let (risk, bound) = miscoverage_bound(&samples.pm, &samples.ptilde, &cfg.ratio_model, &mut brng)?;
        rows.push(BoundRow {
            rep,
            sigma,
            report: BoundReport { mask: m.clone(), miscoverage: (1.0 - cfg.alpha) - stats::mean(&cov), bound, risk },
        });
    }
    Ok((rows, reports))
}

fn par_reps<T: Send>(cfg: &ExperimentConfig, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| McvError::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    pool.install(|| (0..cfg.n_reps).into_par_iter().map(f).collect())
}

/// Runs every repetition and aggregates.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    match cfg.kind {
        Kind::RealCsv => {
            let path = cfg.data.csv.as_ref().ok_or_else(|| McvError::Config("real-csv needs data.csv".into()))?;
            let opts = CsvOptions { na_token: cfg.data.na_token.clone(), has_header: cfg.data.has_header };
            let data = load_csv(path, &opts)?;
            out.reports = par_reps(cfg, |rep| real_rep(cfg, &data, rep))?.into_iter().flatten().collect();
        }
        Kind::RatioQuality | Kind::BoundCheck => {
            let s = synth_setup(cfg)?;
            let masks = test_masks(cfg);
            out.oracle_widths = oracle_widths(&s, &masks, cfg.alpha)?;
            if cfg.kind == Kind::RatioQuality {
                for (rows, reps) in par_reps(cfg, |rep| quality_rep(cfg, &s, &masks, rep))? {
                    out.quality.extend(rows);
                    out.reports.extend(reps);
                }
            } else {
                for (rows, reps) in par_reps(cfg, |rep| bound_rep(cfg, &s, &masks, rep))? {
                    out.bounds.extend(rows);
                    out.reports.extend(reps);
                }
            }
        }
        _ => {
            let s = synth_setup(cfg)?;
            let masks = test_masks(cfg);
            out.oracle_widths = oracle_widths(&s, &masks, cfg.alpha)?;
            out.reports = par_reps(cfg, |rep| coverage_rep(cfg, &s, &masks, rep))?.into_iter().flatten().collect();
        }
    }
    if out.reports.is_empty() {
        return Err(McvError::InsufficientData("the run produced no test points".into()));
    }
    out.table = aggregate(&out.reports, cfg.ci)?;
    Ok(out)
}

fn oracle_widths(s: &Synth, masks: &[Mask], alpha: f64) -> Result<Vec<(Mask, f64)>> {
    masks.iter().map(|m| Ok((m.clone(), s.model.oracle_width(m, alpha)?))).collect()
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| McvError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes the summary table, charts and kind-specific tables into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    write_reports(&out.table, dir, "summary", cfg.output.smooth, 1.0 - cfg.alpha)?;
    write(dir, "config.resolved", &cfg.to_string())?;

    let mut methods: Vec<&str> = out.table.iter().map(|c| c.method.as_str()).collect();
    methods.dedup();
    let mut worst = String::from("method,mask,coverage,cov_lo,cov_hi\n");
    for name in methods {
        let rows: Vec<CellSummary> = out.table.iter().filter(|c| c.method == name).cloned().collect();
        let w = worst_case(&rows)?;
        let _ = writeln!(worst, "{},{},{:.6},{:.6},{:.6}", w.method, w.mask, w.coverage, w.cov_lo, w.cov_hi);
    }
    write(dir, "worst_case.csv", &worst)?;

    if !out.oracle_widths.is_empty() {
        let mut s = String::from("mask,oracle_width\n");
        for (m, w) in &out.oracle_widths {
            let _ = writeln!(s, "{m},{w:.6}");
        }
        write(dir, "oracle_width.csv", &s)?;
    }
    if !out.quality.is_empty() {
        let mut s = String::from("rep,sigma,mask,correlation,coverage,width\n");
        for q in &out.quality {
            let _ = writeln!(s, "{},{},{},{:.6},{:.6},{:.6}", q.rep, q.sigma, q.mask, q.correlation, q.coverage, q.width);
        }
        write(dir, "ratio_quality.csv", &s)?;
    }
    if !out.bounds.is_empty() {
        let mut s = String::from("rep,sigma,mask,miscoverage,bound,risk,holds\n");
        for b in &out.bounds {
            let r = &b.report;
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{}",
                b.rep,
                b.sigma,
                r.mask,
                r.miscoverage,
                r.bound,
                r.risk,
                r.holds() as u8
            );
        }
        write(dir, "bound.csv", &s)?;
    }
    Ok(())
}

/// Short human-readable digest of a finished run.
pub fn digest(out: &RunOutput) -> String {
    let mut s = summary_csv(&out.table);
    if !out.bounds.is_empty() {
        let held = out.bounds.iter().filter(|b| b.report.holds()).count();
        let _ = writeln!(s, "bound holds in {held}/{} runs", out.bounds.len());
    }
    s
}
