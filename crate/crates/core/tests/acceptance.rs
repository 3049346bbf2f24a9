//! End-to-end acceptance checks at desk scale. Each test prints a single
//! `criterion N ... PASS|FAIL` line before asserting.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mcv_core::config::ExperimentConfig;
use mcv_core::conformal::{
    arc_select, cp_mda_exact_idcal, cp_mda_nested_star, split_threshold, weighted_cp, weighted_quantile, IdRule,
    MdaCalibration, SearchSpec, WeightedScores,
};
use mcv_core::evaluation::{CellSummary, TrialReport};
use mcv_core::experiment::{run, RunOutput};
use mcv_core::gaussian::{GaussianModel, PerturbSpec, PerturbedWorld};
use mcv_core::missingness::{MissingnessModel, MissingnessSpec};
use mcv_core::ratio::{ExactRatio, RatioModel};
use mcv_core::rng::stream;
use mcv_core::stats;
use mcv_core::tabular::{mask_apply, Mask, MaskedSample};
use rand::Rng;
use rand_distr::StandardNormal;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).expect("acceptance config parses")
}

fn timed(c: &ExperimentConfig) -> (RunOutput, Duration) {
    let t = Instant::now();
    let out = run(c).expect("run succeeds");
    (out, t.elapsed())
}

fn rows<'a>(out: &'a RunOutput, method: &str) -> Vec<&'a CellSummary> {
    let r = out.rows(method);
    assert!(!r.is_empty(), "no rows for {method}");
    r
}

fn worst<'a>(rows: &[&'a CellSummary]) -> &'a CellSummary {
    rows.iter().min_by(|a, b| a.coverage.total_cmp(&b.coverage)).unwrap()
}

/// `(rep, mask) -> any infinite interval` for one method.
fn infinite_cells(reports: &[TrialReport], method: &str) -> BTreeMap<(usize, usize), bool> {
    let mut out = BTreeMap::new();
    for r in reports.iter().filter(|r| r.method == method) {
        *out.entry((r.rep, r.mask.index())).or_insert(false) |= !r.width.is_finite();
    }
    out
}

/// Fraction of repetitions in which `pred` holds for the per-mask flags.
fn rep_fraction(cells: &BTreeMap<(usize, usize), bool>, pred: impl Fn(&[bool]) -> bool) -> f64 {
    let mut by_rep: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for (&(rep, _), &inf) in cells {
        by_rep.entry(rep).or_default().push(inf);
    }
    by_rep.values().filter(|v| pred(v)).count() as f64 / by_rep.len() as f64
}

#[test]
fn criterion_01_oracle_weights() {
    let c = cfg(
        "[experiment]\nkind = synth-mcar\nseed = 1\nn_reps = 100\nmethods = uncorrected, weighted\n\
         [data]\ndim = 5\nn_train = 200\nn_cal = 100\nn_test_per_mask = 100\ntest_masks = 11100\n\
         [imputer]\nkind = oracle\n[ratio]\nsource = exact\n[perturb]\nscale = 1.5\nbias = 0.5\ninflation = 0.2\n",
    );
    let (out, dt) = timed(&c);
    let unc = rows(&out, "uncorrected")[0].coverage;
    let w = rows(&out, "weighted")[0].coverage;
    let pass = unc <= 0.88 && (0.875..=0.925).contains(&w) && dt < Duration::from_secs(600);
    report(
        1,
        "oracle-weight validity",
        pass,
        format!("uncorrected {unc:.4} (need <= 0.88), weighted {w:.4} (need [0.875, 0.925]), {:.0}s", dt.as_secs_f64()),
    );
    assert!(pass);
}

fn criterion_two_run() -> &'static (RunOutput, Duration) {
    static RUN: OnceLock<(RunOutput, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        timed(&cfg(
            "[experiment]\nkind = synth-mcar\nseed = 2\nn_reps = 100\n\
             methods = split, mda-exact, mda-nested, weighted, arc, uncorrected\n\
             [data]\ndim = 5\nn_test_per_mask = 50\n[missingness]\nrate = 0.5\n",
        ))
    })
}

#[test]
fn criterion_02_estimated_ratio_validity() {
    let (out, dt) = criterion_two_run();
    let mut detail = Vec::new();
    let mut pass = dt < &Duration::from_secs(3600);
    for m in ["weighted", "arc"] {
        let r = rows(out, m);
        let n_masks = r.len();
        let min_hi = r.iter().map(|c| c.cov_hi).fold(f64::INFINITY, f64::min);
        pass &= n_masks == 31 && min_hi >= 0.88;
        detail.push(format!("{m}: {n_masks} masks, lowest upper CI {min_hi:.4}"));
    }
    report(2, "estimated-ratio validity", pass, format!("{}, {:.0}s", detail.join("; "), dt.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_03_width_dominance() {
    let (out, _) = criterion_two_run();
    let avg = |m: &str| stats::mean(&rows(out, m).iter().map(|c| c.width_mean).collect::<Vec<_>>());
    let (arc, nested) = (avg("arc"), avg("mda-nested"));
    let reduction = 1.0 - arc / nested;
    let pass = arc.is_finite() && arc <= nested && reduction >= 0.10;
    report(3, "width dominance", pass, format!("arc {arc:.3} vs mda-nested {nested:.3}, reduction {:.1}%", 100.0 * reduction));
    assert!(pass);
}

#[test]
fn criterion_04_no_correction_ablation() {
    let (out, _) = criterion_two_run();
    let w = worst(&rows(out, "uncorrected"));
    let pass = w.coverage < 0.90 && w.cov_hi < 0.90;
    report(
        4,
        "no-correction ablation",
        pass,
        format!("worst mask {} coverage {:.4}, CI [{:.4}, {:.4}] (need below 0.90)", w.mask, w.coverage, w.cov_lo, w.cov_hi),
    );
    assert!(pass);
}

#[test]
fn criterion_05_mda_exact_pathology() {
    let c = cfg(
        "[experiment]\nkind = synth-mcar\nseed = 5\nn_reps = 100\nmethods = mda-exact, weighted, arc\n\
         [data]\ndim = 5\nn_cal = 30\nn_test_per_mask = 50\n[missingness]\nrate = 0.5\n",
    );
    let (out, _) = timed(&c);
    let exact = rep_fraction(&infinite_cells(&out.reports, "mda-exact"), |v| v.iter().any(|&i| i));
    let finite = |m: &str| rep_fraction(&infinite_cells(&out.reports, m), |v| v.iter().all(|&i| !i));
    let (w, a) = (finite("weighted"), finite("arc"));
    let pass = exact >= 0.5 && w >= 0.95 && a >= 0.95;
    report(
        5,
        "MDA-Exact pathology",
        pass,
        format!(
            "reps with an infinite MDA-Exact mask {:.0}% (need >= 50%); reps with all masks finite: weighted {:.0}%, arc {:.0}% (need >= 95%)",
            100.0 * exact,
            100.0 * w,
            100.0 * a
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_mar_mnar_validity() {
    let mut pass = true;
    let mut detail = Vec::new();
    for kind in ["synth-mar", "synth-mnar"] {
        let c = cfg(&format!(
            "[experiment]\nkind = {kind}\nseed = 6\nn_reps = 100\nmethods = weighted, arc\n\
             [data]\ndim = 5\n[missingness]\nrate = 0.2\nmaskable = 0,1,2\ndriver = 3,4\n"
        ));
        let (out, _) = timed(&c);
        for m in ["weighted", "arc"] {
            let w = worst(&rows(&out, m));
            let ok = w.cov_lo <= 0.93 && w.cov_hi >= 0.88;
            pass &= ok;
            detail.push(format!("{kind} {m} worst {} [{:.4}, {:.4}]", w.mask, w.cov_lo, w.cov_hi));
        }
    }
    report(6, "MAR/MNAR validity", pass, format!("{} (need overlap with [0.88, 0.93])", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_07_ratio_quality_curve() {
    let c = cfg("[experiment]\nkind = ratio-quality\nseed = 7\nn_reps = 100\n[ratio]\nsigmas = 0, 0.5, 1, 2\n");
    let (out, _) = timed(&c);
    let good: Vec<f64> = out.quality.iter().filter(|q| q.correlation > 0.3).map(|q| q.coverage).collect();
    let cov = stats::mean(&good);
    let sigmas: BTreeSet<u64> = out.quality.iter().map(|q| q.sigma.to_bits()).collect();
    let corr: Vec<String> = sigmas
        .iter()
        .map(|&s| {
            let c: Vec<f64> =
                out.quality.iter().filter(|q| q.sigma.to_bits() == s && q.correlation.is_finite()).map(|q| q.correlation).collect();
            format!("{}:{:.3}", f64::from_bits(s), stats::mean(&c))
        })
        .collect();
    let pass = !good.is_empty() && (0.87..=0.93).contains(&cov);
    report(
        7,
        "ratio-quality curve",
        pass,
        format!("{} runs with correlation > 0.3, mean coverage {cov:.4} (need [0.87, 0.93]); mean correlation by sigma {}", good.len(), corr.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_bound_check() {
    let c = cfg("[experiment]\nkind = bound-check\nseed = 8\nn_reps = 100\n");
    let (out, _) = timed(&c);
    let held = out.bounds.iter().filter(|b| b.report.holds()).count();
    let frac = held as f64 / out.bounds.len() as f64;
    let pass = out.bounds.len() == 100 && frac >= 0.90;
    report(8, "bound check", pass, format!("bound holds in {held}/{} runs (need >= 90%)", out.bounds.len()));
    assert!(pass);
}

fn brute_quantile(vals: &[f64], ws: &[f64], inf_w: f64, beta: f64) -> f64 {
    let total: f64 = ws.iter().sum::<f64>() + inf_w;
    let mut cands: Vec<f64> = vals.to_vec();
    cands.sort_by(f64::total_cmp);
    for c in cands {
        let mass: f64 = vals.iter().zip(ws).filter(|(v, _)| **v <= c).map(|(_, w)| w).sum();
        if mass >= beta * total {
            return c;
        }
    }
    f64::INFINITY
}

fn property_weighted_quantile() -> bool {
    let mut rng = stream(9, &[1]);
    (0..10_000).all(|_| {
        let n = rng.random_range(1..30);
        // Coarse values force ties.
        let vals: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).round() / 2.0).collect();
        let ws: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random::<f64>() }).collect();
        let inf_w = rng.random::<f64>();
        let beta = rng.random_range(0.01..0.99);
        weighted_quantile(&vals, &ws, inf_w, beta).unwrap() == brute_quantile(&vals, &ws, inf_w, beta)
    })
}

fn property_arc() -> bool {
    // Acceptance rate: each index kept with probability w / omega_max.
    let weights = [0.2, 0.5, 1.0, 1.6];
    let mut rng = stream(9, &[2]);
    let trials = 20_000;
    let mut counts = [0usize; 4];
    for _ in 0..trials {
        for i in arc_select(&weights, 2.0, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let rate_ok = counts.iter().zip(weights).all(|(&c, w)| {
        let p = w / 2.0;
        (c as f64 / trials as f64 - p).abs() < 4.0 * (p * (1.0 - p) / trials as f64).sqrt()
    });

    // Accepted imputed-and-masked points follow the true mask-conditional law.
    let model = GaussianModel::reference(3, 0.5).unwrap();
    let mech = MissingnessModel::mcar(MissingnessSpec::mcar(3, 0.5), 3).unwrap();
    let world = std::sync::Arc::new(PerturbedWorld::new(model.clone(), PerturbSpec::uniform(1.5, 0.5, 0.2, 3), &mech).unwrap());
    let exact = ExactRatio::new(world.clone());
    let m = Mask::from_bitstring("100").unwrap();
    let mut rng = stream(9, &[3]);
    let (mut ys, mut ws) = (Vec::new(), Vec::new());
    for (x, y) in model.gen_joint(20_000, &mut rng) {
        let s = MaskedSample::from_complete(&x, &mech.sample(&x, &mut rng), y).unwrap();
        let xi = world.impute(&s, &mut rng).unwrap();
        ws.push(exact.ratio(&m, &mask_apply(&xi, &m).unwrap(), y).unwrap());
        ys.push(xi[2]);
    }
    let kept = arc_select(&ws, exact.upper_bound(&m).unwrap(), &mut rng).unwrap();
    let accepted: Vec<f64> = kept.iter().map(|&i| ys[i]).collect();
    let reference: Vec<f64> = model.gen_joint(accepted.len(), &mut rng).into_iter().map(|(x, _)| x[2]).collect();
    let ks = stats::ks_two_sample(&accepted, &reference);
    let raw = stats::ks_two_sample(&ys, &reference);
    rate_ok && accepted.len() > 500 && ks.p_value > 0.01 && raw.p_value < 1e-6
}

fn property_mask_algebra() -> bool {
    let d = 6;
    let all = Mask::enumerate(d, false);
    let mut ok = all.windows(2).all(|w| w[0].index() < w[1].index());
    let mut rng = stream(9, &[4]);
    for _ in 0..2000 {
        let pick = |r: &mut mcv_core::rng::McvRng| all[r.random_range(0..all.len())].clone();
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        ok &= a.union(&b).unwrap() == b.union(&a).unwrap();
        ok &= a.union(&b).unwrap().union(&c).unwrap() == a.union(&b.union(&c).unwrap()).unwrap();
        ok &= a.union(&a).unwrap() == a;
        ok &= a.missing_subset_of(&a.union(&b).unwrap());
        ok &= Mask::from_index(a.index(), d) == a;
        let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let once = mask_apply(&x, &a).unwrap();
        ok &= mcv_core::tabular::mask_apply_partial(&once, &a).unwrap() == once;
        ok &= mcv_core::tabular::na_pattern(&once) == a;
    }
    ok
}

fn property_gaussian_two_path() -> bool {
    let model = GaussianModel::reference(5, 0.8).unwrap();
    let mut rng = stream(9, &[5]);
    Mask::enumerate(5, true).into_iter().filter(|m| m.n_missing() > 0).all(|m| {
        let obs = m.observed();
        let x: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal) + 1.0).collect();
        let x_obs: Vec<f64> = obs.iter().map(|&j| x[j]).collect();
        // Path 1: conditional of Y given x_obs in one step.
        let (mu, var) = model.response_conditional(&m, &x_obs).unwrap();
        // Path 2: condition X_mis on x_obs, then push through the linear model.
        let c = model.conditional(&obs, &x_obs, None).unwrap();
        let beta = model.beta();
        let mis = m.missing();
        let mut mu2: f64 = obs.iter().zip(&x_obs).map(|(&j, v)| beta[j] * v).sum();
        let mut var2 = model.noise_var();
        for (a, &i) in mis.iter().enumerate() {
            mu2 += beta[i] * c.mean[a];
            for (b, &k) in mis.iter().enumerate() {
                var2 += beta[i] * c.cov[(a, b)] * beta[k];
            }
        }
        (mu - mu2).abs() < 1e-8 && (var - var2).abs() < 1e-8
    })
}

fn property_split_coverage() -> bool {
    let (n, alpha, trials) = (19usize, 0.1, 10_000usize);
    let mut rng = stream(9, &[6]);
    let mut hits = 0usize;
    for _ in 0..trials {
        let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t = split_threshold(&scores, alpha);
        let s: f64 = rng.sample(StandardNormal);
        hits += (s <= t) as usize;
    }
    let cov = hits as f64 / trials as f64;
    let se = (cov * (1.0 - cov) / trials as f64).sqrt();
    let (lo, hi) = (1.0 - alpha, 1.0 - alpha + 1.0 / (n + 1) as f64);
    cov >= lo - 3.0 * se && cov <= hi + 3.0 * se
}

fn property_weighted_scale_invariance() -> bool {
    let mut rng = stream(9, &[7]);
    (0..200).all(|_| {
        let n = rng.random_range(5..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 + 0.01).collect();
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let tw = rng.random::<f64>() + 0.05;
        let scaled: Vec<f64> = ws.iter().map(|w| w * c).collect();
        let a = weighted_cp(&WeightedScores::new(&scores, &ws).unwrap(), (0.0, 1.0), &|_| tw, 0.1, &SearchSpec::default());
        let b = weighted_cp(&WeightedScores::new(&scores, &scaled).unwrap(), (0.0, 1.0), &|_| tw * c, 0.1, &SearchSpec::default());
        a == b
    })
}

struct LinearBand;

impl mcv_core::conformal::BandModel for LinearBand {
    fn band(&self, x: &[Option<f64>]) -> mcv_core::Result<(f64, f64)> {
        let s: f64 = x.iter().map(|v| v.unwrap_or(0.0)).sum();
        let k = x.iter().filter(|v| v.is_none()).count() as f64;
        Ok((s - 1.0 - 0.3 * k, s + 1.0 + 0.3 * k))
    }
}

fn property_nested_star() -> bool {
    let mut rng = stream(9, &[8]);
    let mech = MissingnessModel::mcar(MissingnessSpec::mcar(4, 0.4), 4).unwrap();
    (0..100).all(|_| {
        let cal: Vec<MaskedSample> = (0..40)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
                let y = x.iter().sum::<f64>() + rng.sample::<f64, _>(StandardNormal);
                MaskedSample::from_complete(&x, &mech.sample(&x, &mut rng), y).unwrap()
            })
            .collect();
        let masks: Vec<Mask> = cal.iter().map(|s| s.mask().clone()).collect();
        let tm = mech.sample(&[0.0; 4], &mut rng);
        let test = MaskedSample::from_complete(&[0.3, -0.2, 0.5, 1.0], &tm, 0.0).unwrap();
        let iv = |rule| MdaCalibration::from_rule(&LinearBand, &cal, &tm, rule).unwrap().interval(&LinearBand, test.x(), 0.1).unwrap();
        let exact_ids = cp_mda_exact_idcal(&masks, &tm);
        let all: Vec<usize> = (0..cal.len()).collect();
        iv(IdRule::NestedStar { extra: 0 }) == iv(IdRule::Exact)
            && iv(IdRule::NestedStar { extra: 4 }) == iv(IdRule::Nested)
            && cp_mda_nested_star(&LinearBand, &cal, &test, 0.1, &exact_ids).unwrap() == iv(IdRule::Exact)
            && cp_mda_nested_star(&LinearBand, &cal, &test, 0.1, &all).unwrap() == iv(IdRule::Nested)
    })
}

#[test]
fn criterion_09_property_suites() {
    let t = Instant::now();
    type Check = (&'static str, fn() -> bool);
    let checks: [Check; 7] = [
        ("weighted quantile vs brute force", property_weighted_quantile),
        ("ARC acceptance rate and KS", property_arc),
        ("mask algebra", property_mask_algebra),
        ("Gaussian two-path conditioning", property_gaussian_two_path),
        ("split CP exchangeable coverage", property_split_coverage),
        ("weighted CP scale invariance", property_weighted_scale_invariance),
        ("CP-MDA-Nested* specialisations", property_nested_star),
    ];
    let results: Vec<(&str, bool)> = checks.iter().map(|(n, f)| (*n, f())).collect();
    let dt = t.elapsed();
    let failed: Vec<&str> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty() && dt < Duration::from_secs(120);
    let detail = if failed.is_empty() { "all suites hold".to_string() } else { format!("failed: {}", failed.join(", ")) };
    report(9, "property suites", pass, format!("{detail}, {:.1}s", dt.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_10_deterministic_imputation() {
    let c = cfg(
        "[experiment]\nkind = impute-ablation\nseed = 2\nn_reps = 100\nmethods = weighted, arc\n\
         [data]\ndim = 5\nn_test_per_mask = 50\n[missingness]\nrate = 0.5\n[imputer]\nmode = deterministic\n",
    );
    let (out, _) = timed(&c);
    let w = worst(&rows(&out, "weighted"));
    let max_inf = rows(&out, "arc").iter().map(|c| c.inf_frac).fold(0.0, f64::max);
    let pass = w.cov_hi < 0.88 || max_inf >= 0.20;
    report(
        10,
        "deterministic-imputation ablation",
        pass,
        format!(
            "weighted worst {} upper CI {:.4} (need < 0.88) or arc max infinite rate {:.1}% (need >= 20%)",
            w.mask,
            w.cov_hi,
            100.0 * max_inf
        ),
    );
    assert!(pass);
}
