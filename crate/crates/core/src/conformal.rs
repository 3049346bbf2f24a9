//! Prediction-set engines: split CP, CP-MDA (exact / nested / nested-star),
//! mask-conditional weighted CP and acceptance-rejection (ARC) CP, all on the
//! CQR score `s(x, y) = max(f_low(x) - y, y - f_high(x))`.

use std::collections::HashMap;

use log::warn;
use rand::Rng;

use crate::error::{McvError, Result};
use crate::models::QuantilePair;
use crate::tabular::{mask_apply, mask_apply_partial, Mask, MaskedSample, PredictionInterval};

/// A quantile band `(f_low(x), f_high(x))` for NA-bearing inputs.
pub trait BandModel: Send + Sync {
    fn band(&self, x: &[Option<f64>]) -> Result<(f64, f64)>;
}

impl BandModel for QuantilePair {
    fn band(&self, x: &[Option<f64>]) -> Result<(f64, f64)> {
        self.predict(x)
    }
}

/// CQR conformity score.
pub fn cqr_score(low: f64, high: f64, y: f64) -> f64 {
    (low - y).max(y - high)
}

pub fn score(model: &dyn BandModel, x: &[Option<f64>], y: f64) -> Result<f64> {
    let (l, h) = model.band(x)?;
    Ok(cqr_score(l, h, y))
}

/// `inf { z : sum_{v_i <= z} w_i + w_inf [z = inf] >= beta * total }`.
///
/// `inf_weight` is the mass of the `+inf` atom.
pub fn weighted_quantile(values: &[f64], weights: &[f64], inf_weight: f64, beta: f64) -> Result<f64> {
    McvError::check_dim(values.len(), weights.len())?;
    if weights.iter().chain(std::iter::once(&inf_weight)).any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(McvError::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum::<f64>() + inf_weight;
    if total <= 0.0 {
        return Err(McvError::Calibration("all weights are zero".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let target = beta * total;
    let mut acc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let v = values[order[k]];
        while k < order.len() && values[order[k]] == v {
            acc += weights[order[k]];
            k += 1;
        }
        if acc >= target {
            return Ok(v);
        }
    }
    Ok(f64::INFINITY)
}

/// `ceil((1 - alpha)(n + 1))`-th smallest score, `+inf` past `n`.
pub fn split_threshold(scores: &[f64], alpha: f64) -> f64 {
    let n = scores.len();
    let k = ((1.0 - alpha) * (n as f64 + 1.0) - 1e-12).ceil() as usize;
    if k == 0 {
        return f64::NEG_INFINITY;
    }
    if k > n {
        return f64::INFINITY;
    }
    let mut s = scores.to_vec();
    s.select_nth_unstable_by(k - 1, f64::total_cmp);
    s[k - 1]
}

/// `[f_low - t, f_high + t]`, empty once the band inverts.
pub fn interval_from_threshold(low: f64, high: f64, t: f64) -> PredictionInterval {
    if t == f64::INFINITY {
        return PredictionInterval::full();
    }
    PredictionInterval::new(low - t, high + t)
}

/// Plain split CP with the score of each calibration row as observed.
pub fn split_cp(model: &dyn BandModel, cal: &[MaskedSample], test: &[Option<f64>], alpha: f64) -> Result<PredictionInterval> {
    let scores = cal.iter().map(|s| score(model, s.x(), s.y())).collect::<Result<Vec<_>>>()?;
    let (l, h) = model.band(test)?;
    Ok(interval_from_threshold(l, h, split_threshold(&scores, alpha)))
}

/// Calibration subset selection for CP-MDA.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdRule {
    /// Missing set contained in the test's.
    Exact,
    /// Every calibration point.
    Nested,
    /// Points adding at most `extra` missing coordinates to the test mask.
    NestedStar { extra: usize },
}

/// Indices whose missing coordinates are a subset of the test's.
pub fn cp_mda_exact_idcal(cal_masks: &[Mask], test_mask: &Mask) -> Vec<usize> {
    cal_masks.iter().enumerate().filter(|(_, m)| m.missing_subset_of(test_mask)).map(|(i, _)| i).collect()
}

pub fn select_idcal(cal_masks: &[Mask], test_mask: &Mask, rule: IdRule) -> Result<Vec<usize>> {
    match rule {
        IdRule::Exact => Ok(cp_mda_exact_idcal(cal_masks, test_mask)),
        IdRule::Nested => Ok((0..cal_masks.len()).collect()),
        IdRule::NestedStar { extra } => {
            let limit = test_mask.n_missing() + extra;
            let mut out = Vec::new();
            for (i, m) in cal_masks.iter().enumerate() {
                if m.union(test_mask)?.n_missing() <= limit {
                    out.push(i);
                }
            }
            Ok(out)
        }
    }
}

/// Hull of `{y : #{k : y not in [a_k, b_k]} < (1 - alpha)(1 + n)}` with `n`
/// the number of intervals. Exact breakpoint scan.
pub fn counting_rule_hull(intervals: &[(f64, f64)], alpha: f64) -> PredictionInterval {
    let n = intervals.len() as f64;
    // y is kept iff #inside > r.
    let r = n - (1.0 - alpha) * (1.0 + n);
    if r < 0.0 {
        return PredictionInterval::full();
    }
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * intervals.len());
    for &(a, b) in intervals {
        if a <= b {
            events.push((a, 1));
            events.push((b, -1));
        }
    }
    // starts before ends at the same coordinate: intervals are closed
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)));
    let mut count = 0i64;
    let mut lower = None;
    let mut upper = None;
    for (x, kind) in events {
        if kind == 1 {
            count += 1;
            if lower.is_none() && count as f64 > r {
                lower = Some(x);
            }
        } else {
            if count as f64 > r {
                upper = Some(x);
            }
            count -= 1;
        }
    }
    match (lower, upper) {
        (Some(l), Some(u)) => PredictionInterval::new(l, u),
        _ => PredictionInterval::empty(),
    }
}

/// CP-MDA calibration for one test mask: `S_k = s(x^k(M_k u m), y^k)` over
/// the selected indices, reusable across test points sharing the mask.
#[derive(Clone, Debug)]
pub struct MdaCalibration {
    test_mask: Mask,
    scores: Vec<f64>,
    /// Augmented mask of each selected point, as an index into `masks`.
    mask_of: Vec<usize>,
    masks: Vec<Mask>,
}

impl MdaCalibration {
    pub fn new(model: &dyn BandModel, cal: &[MaskedSample], test_mask: &Mask, id_cal: &[usize]) -> Result<Self> {
        let mut masks: Vec<Mask> = Vec::new();
        let mut lookup: HashMap<Mask, usize> = HashMap::new();
        let mut scores = Vec::with_capacity(id_cal.len());
        let mut mask_of = Vec::with_capacity(id_cal.len());
        for &k in id_cal {
            let s = cal.get(k).ok_or_else(|| McvError::invalid(format!("calibration index {k} out of range")))?;
            let bar = s.mask().union(test_mask)?;
            scores.push(score(model, &mask_apply_partial(s.x(), &bar)?, s.y())?);
            let next = masks.len();
            let id = *lookup.entry(bar.clone()).or_insert(next);
            if id == next {
                masks.push(bar);
            }
            mask_of.push(id);
        }
        Ok(Self { test_mask: test_mask.clone(), scores, mask_of, masks })
    }

    pub fn from_rule(model: &dyn BandModel, cal: &[MaskedSample], test_mask: &Mask, rule: IdRule) -> Result<Self> {
        let masks: Vec<Mask> = cal.iter().map(|s| s.mask().clone()).collect();
        Self::new(model, cal, test_mask, &select_idcal(&masks, test_mask, rule)?)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn interval(&self, model: &dyn BandModel, test: &[Option<f64>], alpha: f64) -> Result<PredictionInterval> {
        McvError::check_dim(self.test_mask.len(), test.len())?;
        let bands = self
            .masks
            .iter()
            .map(|m| model.band(&mask_apply_partial(test, m)?))
            .collect::<Result<Vec<_>>>()?;
        let intervals: Vec<(f64, f64)> = self
            .scores
            .iter()
            .zip(&self.mask_of)
            .map(|(s, &j)| (bands[j].0 - s, bands[j].1 + s))
            .collect();
        Ok(counting_rule_hull(&intervals, alpha))
    }
}

/// One-shot CP-MDA with an explicit calibration subset.
pub fn cp_mda_nested_star(
    model: &dyn BandModel,
    cal: &[MaskedSample],
    test: &MaskedSample,
    alpha: f64,
    id_cal: &[usize],
) -> Result<PredictionInterval> {
    MdaCalibration::new(model, cal, test.mask(), id_cal)?.interval(model, test.x(), alpha)
}

/// Grid resolution for the weighted-CP bound search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchSpec {
    pub grid_points: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self { grid_points: 1000 }
    }
}

/// Calibration scores and weights sorted by score, with prefix sums so a
/// membership query costs one binary search.
#[derive(Clone, Debug)]
pub struct WeightedScores {
    scores: Vec<f64>,
    prefix: Vec<f64>,
}

impl WeightedScores {
    pub fn new(scores: &[f64], weights: &[f64]) -> Result<Self> {
        McvError::check_dim(scores.len(), weights.len())?;
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(McvError::invalid("calibration weights must be finite and nonnegative"));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut prefix = Vec::with_capacity(scores.len() + 1);
        prefix.push(0.0);
        for &i in &order {
            prefix.push(prefix.last().unwrap() + weights[i]);
        }
        Ok(Self { scores: order.iter().map(|&i| scores[i]).collect(), prefix })
    }

    pub fn max_score(&self) -> f64 {
        self.scores.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    /// `s <= Q_{1-alpha}` of the weighted score law with `test_weight` on
    /// the `+inf` atom. Zero total weight is non-membership.
    pub fn admits(&self, s: f64, test_weight: f64, alpha: f64) -> bool {
        let total = self.total() + test_weight;
        if total <= 0.0 {
            return false;
        }
        let below = self.prefix[self.scores.partition_point(|v| *v < s)];
        below < (1.0 - alpha) * total
    }
}

/// Weighted CP by grid search between `f_low - max S` and `f_high + max S`.
///
/// Returns the hull of the admitted grid points, widened by one step on each
/// side; a range endpoint inside the set opens that side to infinity.
pub fn weighted_cp(
    cal: &WeightedScores,
    band: (f64, f64),
    test_weight: &dyn Fn(f64) -> f64,
    alpha: f64,
    search: &SearchSpec,
) -> PredictionInterval {
    let (low, high) = band;
    let member = |y: f64| cal.admits(cqr_score(low, high, y), test_weight(y).max(0.0), alpha);
    let max_s = cal.max_score();
    if !max_s.is_finite() {
        return if member(0.5 * (low + high)) { PredictionInterval::full() } else { PredictionInterval::empty() };
    }
    let (y_min, y_max) = (low - max_s, high + max_s);
    if y_min > y_max {
        let mid = 0.5 * (y_min + y_max);
        return if member(mid) { PredictionInterval::full() } else { PredictionInterval::empty() };
    }
    let g = search.grid_points.max(1);
    let h = (y_max - y_min) / g as f64;
    let mut first = None;
    let mut last = None;
    for j in 0..=g {
        let y = if j == g { y_max } else { y_min + j as f64 * h };
        if member(y) {
            first.get_or_insert(j);
            last = Some(j);
        }
    }
    match (first, last) {
        (Some(a), Some(b)) => {
            let lower = if a == 0 { f64::NEG_INFINITY } else { y_min + a as f64 * h - h };
            let upper = if b == g { f64::INFINITY } else { y_min + b as f64 * h + h };
            PredictionInterval::new(lower, upper)
        }
        _ => {
            warn!("weighted CP admitted no grid point");
            PredictionInterval::empty()
        }
    }
}

/// Masked calibration scores `s(mask(x_hat^i, m), y^i)`.
pub fn masked_scores(model: &dyn BandModel, cal_imputed: &[(Vec<f64>, f64)], m: &Mask) -> Result<Vec<f64>> {
    cal_imputed.iter().map(|(x, y)| score(model, &mask_apply(x, m)?, *y)).collect()
}

/// Independent acceptance with probability `weight / omega_max`.
pub fn arc_select<R: Rng + ?Sized>(weights: &[f64], omega_max: f64, rng: &mut R) -> Result<Vec<usize>> {
    if omega_max.is_nan() || omega_max <= 0.0 {
        return Err(McvError::invalid("omega_max must be positive"));
    }
    let mut clipped = 0usize;
    let mut out = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        let mut q = w / omega_max;
        if q > 1.0 {
            clipped += 1;
            q = 1.0;
        }
        if rng.random::<f64>() < q {
            out.push(i);
        }
    }
    if clipped > 0 {
        warn!("{clipped} calibration ratios exceeded omega_max and were clipped");
    }
    Ok(out)
}

/// Bound used by ARC when the true supremum is unknown.
pub fn default_omega_max(weights: &[f64], inflation: f64) -> f64 {
    inflation * weights.iter().copied().fold(0.0, f64::max)
}

/// Split CP on the accepted scores; no acceptance yields the whole line.
pub fn arc_cp<R: Rng + ?Sized>(
    scores: &[f64],
    weights: &[f64],
    omega_max: f64,
    band: (f64, f64),
    alpha: f64,
    rng: &mut R,
) -> Result<PredictionInterval> {
    McvError::check_dim(scores.len(), weights.len())?;
    let kept = arc_select(weights, omega_max, rng)?;
    if kept.is_empty() {
        return Ok(PredictionInterval::full());
    }
    let accepted: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
    Ok(interval_from_threshold(band.0, band.1, split_threshold(&accepted, alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Band that depends only on which coordinates are observed.
    struct ToyBand;

    impl BandModel for ToyBand {
        fn band(&self, x: &[Option<f64>]) -> Result<(f64, f64)> {
            let s: f64 = x.iter().map(|v| v.unwrap_or(0.0)).sum();
            let n_na = x.iter().filter(|v| v.is_none()).count() as f64;
            Ok((s - 1.0 - 0.5 * n_na, s + 1.0 + 0.5 * n_na))
        }
    }

    fn brute_quantile(values: &[f64], weights: &[f64], inf_w: f64, beta: f64) -> f64 {
        let total: f64 = weights.iter().sum::<f64>() + inf_w;
        let mut cands = values.to_vec();
        cands.sort_by(f64::total_cmp);
        for z in cands {
            let c: f64 = values.iter().zip(weights).filter(|(v, _)| **v <= z).map(|(_, w)| w).sum();
            if c >= beta * total {
                return z;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn weighted_quantile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(weighted_quantile(&v, &[0.2; 4], 0.2, 0.5).unwrap(), 3.0);
        assert_eq!(weighted_quantile(&[7.0, 1.0], &[1.0, 0.0], 0.0, 0.3).unwrap(), 7.0);
        assert_eq!(weighted_quantile(&v, &[0.2; 4], 0.2, 0.95).unwrap(), f64::INFINITY);
        assert!(weighted_quantile(&v, &[0.0; 4], 0.0, 0.5).is_err());
    }

    #[test]
    fn split_threshold_examples() {
        let s: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(split_threshold(&s, 0.1), 9.0);
        assert_eq!(split_threshold(&[5.0], 0.5), 5.0);
        assert_eq!(split_threshold(&s, 1e-9), f64::INFINITY);
    }

    #[test]
    fn interval_from_threshold_examples() {
        let i = interval_from_threshold(2.0, 5.0, 1.0);
        assert_eq!((i.lower(), i.upper()), (1.0, 6.0));
        assert_eq!(interval_from_threshold(2.0, 5.0, f64::INFINITY), PredictionInterval::full());
        assert!(interval_from_threshold(2.0, 5.0, -2.0).is_empty());
    }

    #[test]
    fn exact_idcal_examples() {
        let masks: Vec<Mask> = ["00", "01", "11"].iter().map(|s| Mask::from_bitstring(s).unwrap()).collect();
        assert_eq!(cp_mda_exact_idcal(&masks, &Mask::from_bitstring("01").unwrap()), vec![0, 1]);
        assert_eq!(cp_mda_exact_idcal(&masks, &Mask::ones(2)), vec![0, 1, 2]);
        assert_eq!(cp_mda_exact_idcal(&masks, &Mask::zeros(2)), vec![0]);
    }

    #[test]
    fn empty_idcal_is_full_line() {
        let test = MaskedSample::new(vec![Some(1.0), None], 0.0).unwrap();
        assert_eq!(cp_mda_nested_star(&ToyBand, &[], &test, 0.1, &[]).unwrap(), PredictionInterval::full());
    }

    fn random_cal(seed: u64, n: usize, d: usize, p: f64) -> Vec<MaskedSample> {
        let mut rng = stream(seed, &[]);
        (0..n)
            .map(|_| {
                let x: Vec<Option<f64>> =
                    (0..d).map(|_| if rng.random::<f64>() < p { None } else { Some(rng.random::<f64>() * 2.0) }).collect();
                let y = x.iter().map(|v| v.unwrap_or(1.0)).sum::<f64>() + rng.random::<f64>() * 4.0 - 2.0;
                MaskedSample::new(x, y).unwrap()
            })
            .collect()
    }

    #[test]
    fn mda_on_complete_rows_matches_split_cp() {
        for seed in 0..50 {
            let cal = random_cal(seed, 30, 3, 0.0);
            let test = MaskedSample::new(vec![Some(0.3), Some(1.0), Some(0.2)], 0.0).unwrap();
            let ids: Vec<usize> = (0..cal.len()).collect();
            let mda = cp_mda_nested_star(&ToyBand, &cal, &test, 0.1, &ids).unwrap();
            let split = split_cp(&ToyBand, &cal, test.x(), 0.1).unwrap();
            assert!((mda.lower() - split.lower()).abs() < 1e-12 && (mda.upper() - split.upper()).abs() < 1e-12);
        }
    }

    #[test]
    fn breakpoint_scan_matches_grid() {
        for seed in 0..20 {
            let cal = random_cal(100 + seed, 8, 3, 0.4);
            let test = MaskedSample::new(vec![Some(0.5), None, Some(1.5)], 0.0).unwrap();
            let ids: Vec<usize> = (0..8).collect();
            let alpha = 0.3;
            let set = cp_mda_nested_star(&ToyBand, &cal, &test, alpha, &ids).unwrap();
            // direct counting rule on a grid
            let mut members = Vec::new();
            for j in -20_000..=20_000 {
                let y = j as f64 * 1e-3;
                let mut count = 0;
                for s in &cal {
                    let bar = s.mask().union(test.mask()).unwrap();
                    let sk = score(&ToyBand, &mask_apply_partial(s.x(), &bar).unwrap(), s.y()).unwrap();
                    let st = score(&ToyBand, &mask_apply_partial(test.x(), &bar).unwrap(), y).unwrap();
                    if sk < st {
                        count += 1;
                    }
                }
                if (count as f64) < (1.0 - alpha) * 9.0 {
                    members.push(y);
                }
            }
            if members.is_empty() {
                assert!(set.is_empty());
                continue;
            }
            assert!((set.lower() - members[0]).abs() <= 1.1e-3, "seed {seed}: {} vs {}", set.lower(), members[0]);
            assert!((set.upper() - members.last().unwrap()).abs() <= 1.1e-3);
        }
    }

    #[test]
    fn nested_star_reproduces_exact_and_nested() {
        for seed in 0..30 {
            let cal = random_cal(200 + seed, 25, 3, 0.3);
            let test = MaskedSample::new(vec![None, Some(1.0), Some(0.4)], 0.0).unwrap();
            let masks: Vec<Mask> = cal.iter().map(|s| s.mask().clone()).collect();
            for (rule, ids) in [
                (IdRule::Exact, cp_mda_exact_idcal(&masks, test.mask())),
                (IdRule::Nested, (0..cal.len()).collect::<Vec<_>>()),
            ] {
                let via_rule = MdaCalibration::from_rule(&ToyBand, &cal, test.mask(), rule).unwrap().interval(&ToyBand, test.x(), 0.1).unwrap();
                let via_ids = cp_mda_nested_star(&ToyBand, &cal, &test, 0.1, &ids).unwrap();
                assert_eq!(via_rule, via_ids);
            }
        }
    }

    #[test]
    fn weighted_cp_with_unit_ratio_matches_split() {
        for seed in 0..30 {
            let mut rng = stream(300 + seed, &[]);
            let scores: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
            let cal = WeightedScores::new(&scores, &vec![1.0; 50]).unwrap();
            let band = (1.0, 4.0);
            let spec = SearchSpec::default();
            let w = weighted_cp(&cal, band, &|_| 1.0, 0.1, &spec);
            let s = interval_from_threshold(band.0, band.1, split_threshold(&scores, 0.1));
            let h = (band.1 - band.0 + 2.0 * cal.max_score()) / spec.grid_points as f64;
            assert!((w.lower() - s.lower()).abs() <= 2.0 * h + 1e-9);
            assert!((w.upper() - s.upper()).abs() <= 2.0 * h + 1e-9);
            assert!(w.lower() <= s.lower() + 1e-9 && w.upper() >= s.upper() - 1e-9);
        }
    }

    #[test]
    fn single_point_weighted_cp_is_infinite() {
        let cal = WeightedScores::new(&[0.5], &[1.0]).unwrap();
        assert_eq!(weighted_cp(&cal, (0.0, 1.0), &|_| 1.0, 0.4, &SearchSpec::default()), PredictionInterval::full());
    }

    #[test]
    fn zero_weights_give_empty_set() {
        let cal = WeightedScores::new(&[0.5, 0.7], &[0.0, 0.0]).unwrap();
        assert!(weighted_cp(&cal, (0.0, 1.0), &|_| 0.0, 0.1, &SearchSpec::default()).is_empty());
    }

    #[test]
    fn arc_select_extremes() {
        let mut rng = stream(5, &[]);
        assert_eq!(arc_select(&[2.0; 10], 2.0, &mut rng).unwrap().len(), 10);
        assert!(arc_select(&[0.0; 10], 2.0, &mut rng).unwrap().is_empty());
        assert!(arc_select(&[1.0], 0.0, &mut rng).is_err());
        let full = arc_cp(&[1.0; 5], &[0.0; 5], 1.0, (0.0, 1.0), 0.1, &mut rng).unwrap();
        assert_eq!(full, PredictionInterval::full());
    }

    #[test]
    fn arc_with_constant_ratio_is_split() {
        let scores: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let arc = arc_cp(&scores, &[3.0; 40], 3.0, (0.0, 2.0), 0.1, &mut stream(6, &[])).unwrap();
        assert_eq!(arc, interval_from_threshold(0.0, 2.0, split_threshold(&scores, 0.1)));
    }

    #[test]
    fn arc_acceptance_rate() {
        let weights = [0.1, 0.5, 0.9];
        let trials = 100_000;
        let mut counts = [0usize; 3];
        let mut rng = stream(7, &[]);
        for _ in 0..trials {
            for i in arc_select(&weights, 1.0, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for (c, w) in counts.iter().zip(weights) {
            assert!((*c as f64 / trials as f64 - w).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn weighted_quantile_matches_brute_force(
            vals in prop::collection::vec(-5.0f64..5.0, 50),
            ws in prop::collection::vec(0.0f64..1.0, 50),
            inf_w in 0.01f64..1.0,
            betas in prop::collection::vec(0.01f64..0.99, 20),
        ) {
            for beta in betas {
                prop_assert_eq!(weighted_quantile(&vals, &ws, inf_w, beta).unwrap(), brute_quantile(&vals, &ws, inf_w, beta));
            }
        }

        #[test]
        fn uniform_weights_reduce_to_split(scores in prop::collection::vec(-3.0f64..3.0, 1..200), alpha in 0.01f64..0.99) {
            let n = scores.len();
            let q = weighted_quantile(&scores, &vec![1.0; n], 1.0, 1.0 - alpha).unwrap();
            prop_assert_eq!(q, split_threshold(&scores, alpha));
        }

        #[test]
        fn score_sign_matches_band(l in -5.0f64..5.0, w in 0.0f64..5.0, y in -10.0f64..10.0) {
            let h = l + w;
            prop_assert_eq!(cqr_score(l, h, y) <= 0.0, (l..=h).contains(&y));
        }

        #[test]
        fn split_threshold_is_monotone_in_alpha(scores in prop::collection::vec(-3.0f64..3.0, 1..100), a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let (a1, a2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(split_threshold(&scores, a1) >= split_threshold(&scores, a2));
        }

        #[test]
        fn weighted_cp_is_scale_invariant(
            scores in prop::collection::vec(-2.0f64..2.0, 5..60),
            seed in 0u64..1000,
        ) {
            let mut rng = stream(seed, &[]);
            let ws: Vec<f64> = scores.iter().map(|_| rng.random::<f64>() * 2.0 + 0.01).collect();
            let base = {
                let cal = WeightedScores::new(&scores, &ws).unwrap();
                weighted_cp(&cal, (0.0, 1.0), &|y: f64| 1.0 + 0.5 * y.sin(), 0.1, &SearchSpec::default())
            };
            for c in [0.1, 10.0] {
                let scaled: Vec<f64> = ws.iter().map(|w| w * c).collect();
                let cal = WeightedScores::new(&scores, &scaled).unwrap();
                let out = weighted_cp(&cal, (0.0, 1.0), &|y: f64| c * (1.0 + 0.5 * y.sin()), 0.1, &SearchSpec::default());
                prop_assert_eq!(out, base);
            }
        }
    }
}
