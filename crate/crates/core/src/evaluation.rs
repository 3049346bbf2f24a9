//! Mask-conditional coverage and width summaries, report files, and the
//! classifier-risk miscoverage bound.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{McvError, Result};
use crate::imputation::Impute;
use crate::models::{fit_classifier, TreeParams};
use crate::ratio::RatioModel;
use crate::rng::McvRng;
use crate::stats;
use crate::tabular::{mask_apply, Mask, MaskedSample};

/// Outcome of one interval on one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialReport {
    pub method: String,
    pub mask: Mask,
    pub rep: usize,
    pub covered: bool,
    /// `+inf` for unbounded intervals, 0 for empty ones.
    pub width: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CiMethod {
    /// Normal approximation over per-repetition coverage.
    #[default]
    Normal,
    /// Clopper-Pearson on the pooled test points.
    Exact,
}

impl CiMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "exact" | "clopper-pearson" => Ok(Self::Exact),
            _ => Err(McvError::Config(format!("unknown CI method '{s}' (expected normal or exact)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Exact => "exact",
        }
    }
}

const Z95: f64 = 1.959963984540054;

/// Per-(method, mask) summary row.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub method: String,
    pub mask: Mask,
    pub n_reps: usize,
    pub coverage: f64,
    pub cov_lo: f64,
    pub cov_hi: f64,
    /// Mean over finite widths; NaN if every width was infinite.
    pub width_mean: f64,
    pub width_ci: f64,
    pub inf_frac: f64,
}

impl CellSummary {
    pub fn cov_ci(&self) -> f64 {
        0.5 * (self.cov_hi - self.cov_lo)
    }
}

fn half_width(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    Z95 * stats::std_dev(v) / (v.len() as f64).sqrt()
}

/// Clopper-Pearson 95% interval for `k` successes out of `n`.
pub fn clopper_pearson(k: usize, n: usize) -> (f64, f64) {
    let a = 0.05;
    let lo = if k == 0 { 0.0 } else { Beta::new(k as f64, (n - k + 1) as f64).map(|b| b.inverse_cdf(a / 2.0)).unwrap_or(0.0) };
    let hi = if k == n { 1.0 } else { Beta::new((k + 1) as f64, (n - k) as f64).map(|b| b.inverse_cdf(1.0 - a / 2.0)).unwrap_or(1.0) };
    (lo, hi)
}

fn summarize(method: &str, mask: &Mask, reports: &[&TrialReport], ci: CiMethod) -> CellSummary {
    let mut by_rep: BTreeMap<usize, (usize, usize, Vec<f64>)> = BTreeMap::new();
    let mut n_inf = 0usize;
    for r in reports {
        let e = by_rep.entry(r.rep).or_default();
        e.0 += 1;
        e.1 += r.covered as usize;
        if r.width.is_finite() {
            e.2.push(r.width);
        } else {
            n_inf += 1;
        }
    }
    let cov: Vec<f64> = by_rep.values().map(|(n, k, _)| *k as f64 / *n as f64).collect();
    let widths: Vec<f64> = by_rep.values().filter(|(_, _, w)| !w.is_empty()).map(|(_, _, w)| stats::mean(w)).collect();
    let coverage = stats::mean(&cov);
    let (cov_lo, cov_hi) = match ci {
        CiMethod::Normal => {
            let h = half_width(&cov);
            (coverage - h, coverage + h)
        }
        CiMethod::Exact => {
            let k = reports.iter().filter(|r| r.covered).count();
            clopper_pearson(k, reports.len())
        }
    };
    CellSummary {
        method: method.to_string(),
        mask: mask.clone(),
        n_reps: by_rep.len(),
        coverage,
        cov_lo,
        cov_hi,
        width_mean: if widths.is_empty() { f64::NAN } else { stats::mean(&widths) },
        width_ci: half_width(&widths),
        inf_frac: n_inf as f64 / reports.len() as f64,
    }
}

/// Groups reports by (method, mask). Rows come out sorted by method name, then
/// lexicographically by mask.
pub fn aggregate(reports: &[TrialReport], ci: CiMethod) -> Result<Vec<CellSummary>> {
    if reports.is_empty() {
        return Err(McvError::InsufficientData("no trial reports to aggregate".into()));
    }
    let mut cells: BTreeMap<(&str, usize, &Mask), Vec<&TrialReport>> = BTreeMap::new();
    for r in reports {
        if r.width.is_nan() || r.width < 0.0 {
            return Err(McvError::invalid(format!("invalid width {} in report", r.width)));
        }
        cells.entry((r.method.as_str(), r.mask.index(), &r.mask)).or_default().push(r);
    }
    Ok(cells.into_iter().map(|((method, _, mask), rs)| summarize(method, mask, &rs, ci)).collect())
}

/// The lowest-coverage row.
pub fn worst_case(table: &[CellSummary]) -> Result<&CellSummary> {
    table
        .iter()
        .min_by(|a, b| a.coverage.total_cmp(&b.coverage))
        .ok_or_else(|| McvError::InsufficientData("empty coverage table".into()))
}

/// Rows of one method.
pub fn method_rows<'a>(table: &'a [CellSummary], method: &str) -> Vec<&'a CellSummary> {
    table.iter().filter(|c| c.method == method).collect()
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub const SUMMARY_HEADER: &str = "method,mask,n_reps,coverage,cov_ci,width_mean,width_ci,inf_frac";

pub fn summary_csv(table: &[CellSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for c in table {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.method,
            c.mask,
            c.n_reps,
            fmt_num(c.coverage),
            fmt_num(c.cov_ci()),
            fmt_num(c.width_mean),
            fmt_num(c.width_ci),
            fmt_num(c.inf_frac)
        );
    }
    out
}

/// Centered moving average; the window shrinks at the edges. Non-finite
/// entries are skipped.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            let vals: Vec<f64> = series[lo..hi].iter().copied().filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                stats::mean(&vals)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Coverage,
    Width,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Self::Coverage => "coverage",
            Self::Width => "width",
        }
    }

    fn of(self, c: &CellSummary) -> f64 {
        match self {
            Self::Coverage => c.coverage,
            Self::Width => c.width_mean,
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart with one polyline per method over lexicographically sorted masks.
pub fn render_svg(table: &[CellSummary], metric: Metric, smoothing: bool, reference: Option<f64>) -> String {
    let mut masks: Vec<&Mask> = table.iter().map(|c| &c.mask).collect();
    masks.sort_by_key(|m| m.index());
    masks.dedup();
    let mut methods: Vec<&str> = table.iter().map(|c| c.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let series: Vec<(&str, Vec<f64>)> = methods
        .iter()
        .map(|&name| {
            let raw: Vec<f64> = masks
                .iter()
                .map(|m| table.iter().find(|c| c.method == name && &c.mask == *m).map_or(f64::NAN, |c| metric.of(c)))
                .collect();
            (name, if smoothing { smooth(&raw, 5) } else { raw })
        })
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in series.iter().flat_map(|(_, s)| s).chain(reference.iter()).filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo, hi) = (lo - pad, hi + pad);
    let (w, h, left, right, top, bottom) = (900.0, 420.0, 70.0, 170.0, 20.0, 70.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = masks.len().max(1);
    let px = |i: usize| left + if n == 1 { pw / 2.0 } else { pw * i as f64 / (n - 1) as f64 };
    let py = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, left - 5.0, y + 4.0);
    }
    if n <= 64 {
        for (i, m) in masks.iter().enumerate() {
            let (x, y) = (px(i), top + ph + 8.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" transform="rotate(60 {x:.2} {y:.2})" font-size="8">{m}</text>"#);
        }
    }
    if let Some(r) = reference {
        let y = py(r);
        let _ = writeln!(s, r#"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="4 3"/>"#, left + pw);
    }
    for (k, (name, vals)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> =
            vals.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| format!("{:.2},{:.2}", px(i), py(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 15.0 + 18.0 * k as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 25.0, ly + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">mask</text>"#, left + pw / 2.0, h - 5.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    );
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| McvError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes `<stem>.csv`, `<stem>_coverage.svg` and `<stem>_width.svg` into `dir`.
pub fn write_reports(table: &[CellSummary], dir: &Path, stem: &str, smoothing: bool, nominal: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| McvError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    write_file(&dir.join(format!("{stem}.csv")), &summary_csv(table))?;
    write_file(&dir.join(format!("{stem}_coverage.svg")), &render_svg(table, Metric::Coverage, smoothing, Some(nominal)))?;
    write_file(&dir.join(format!("{stem}_width.svg")), &render_svg(table, Metric::Width, smoothing, None))?;
    Ok(())
}

/// One point of the miscoverage-versus-bound scatter.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub mask: Mask,
    /// `(1 - alpha) - coverage`.
    pub miscoverage: f64,
    pub bound: f64,
    pub risk: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.miscoverage <= self.bound
    }
}

/// A complete point with its sampled mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub mask: Mask,
    pub y: f64,
}

/// Rows `(x_obs(m), y)` drawn from `P_m` and from `~P_m = ~omega_m dQ_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PmSamples {
    pub pm: Vec<Vec<f64>>,
    pub ptilde: Vec<Vec<f64>>,
    pub acceptance: f64,
}

fn observed_row(x: &[f64], m: &Mask, y: f64) -> Vec<f64> {
    let mut row: Vec<f64> = m.observed().into_iter().map(|j| x[j]).collect();
    row.push(y);
    row
}

/// Splits an auxiliary sample into a `P_m` sample (rows whose mask is `m`)
/// and an accept-reject sample from `~P_m` built from the imputed rows.
/// `k_tilde = None` uses the largest ratio in the batch.
pub fn build_pm_ptilde(
    extra: &[LabeledPoint],
    imputer: &dyn Impute,
    ratio: &dyn RatioModel,
    m: &Mask,
    k_tilde: Option<f64>,
    rng: &mut McvRng,
) -> Result<PmSamples> {
    let mut pm = Vec::new();
    let mut cands = Vec::with_capacity(extra.len());
    for p in extra {
        McvError::check_dim(m.len(), p.x.len())?;
        if p.mask == *m {
            pm.push(observed_row(&p.x, m, p.y));
        }
        let xhat = imputer.impute(&MaskedSample::from_complete(&p.x, &p.mask, p.y)?, rng)?;
        let w = ratio.ratio(m, &mask_apply(&xhat, m)?, p.y)?;
        cands.push((observed_row(&xhat, m, p.y), w));
    }
    let k = k_tilde.unwrap_or_else(|| cands.iter().map(|c| c.1).fold(0.0, f64::max));
    if k.is_nan() || k <= 0.0 {
        return Err(McvError::invalid("K must be positive"));
    }
    let clipped = cands.iter().filter(|c| c.1 > k).count();
    if clipped > 0 {
        log::warn!("{clipped} ratios exceeded K and were accepted with probability one");
    }
    let ptilde: Vec<Vec<f64>> = cands.into_iter().filter(|(_, w)| rng.random::<f64>() * k <= *w).map(|(r, _)| r).collect();
    if pm.is_empty() || ptilde.is_empty() {
        return Err(McvError::InsufficientData(format!("no P_m or ~P_m rows for mask {m}")));
    }
    let acceptance = ptilde.len() as f64 / extra.len() as f64;
    Ok(PmSamples { pm, ptilde, acceptance })
}

/// Held-out 0-1 risk of a classifier separating the two samples (balanced to
/// equal size, split 50/50) and the bound `1 - 2 R`, clamped to `[0, 1]`.
pub fn miscoverage_bound(pm: &[Vec<f64>], ptilde: &[Vec<f64>], params: &TreeParams, rng: &mut McvRng) -> Result<(f64, f64)> {
    let l = pm.len().min(ptilde.len());
    if l < 20 {
        return Err(McvError::InsufficientData(format!("bound needs at least 20 rows per sample, got {l}")));
    }
    let mut a: Vec<&Vec<f64>> = pm.iter().collect();
    let mut b: Vec<&Vec<f64>> = ptilde.iter().collect();
    a.shuffle(rng);
    b.shuffle(rng);
    let half = l / 2;
    let to_row = |r: &Vec<f64>| r.iter().map(|v| Some(*v)).collect::<Vec<_>>();
    let mut train_x = Vec::with_capacity(2 * half);
    let mut train_y = Vec::with_capacity(2 * half);
    for i in 0..half {
        train_x.push(to_row(a[i]));
        train_y.push(true);
        train_x.push(to_row(b[i]));
        train_y.push(false);
    }
    let clf = fit_classifier(&train_x, &train_y, params, rng)?;
    let mut errors = 0usize;
    let mut total = 0usize;
    for i in half..l {
        for (row, label) in [(a[i], true), (b[i], false)] {
            let p = clf.predict_proba(&to_row(row))?;
            if (p > 0.5) != label {
                errors += 1;
            }
            total += 1;
        }
    }
    let risk = errors as f64 / total as f64;
    Ok((risk, (1.0 - 2.0 * risk).clamp(0.0, 1.0)))
}
