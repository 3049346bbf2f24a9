//! MCAR, MAR and self-masked MNAR missingness generators.
//!
//! MAR and MNAR use a logistic link on standardized inputs with a shared
//! intercept solved by bisection so that the average missing rate over the
//! maskable cells of a reference sample hits the target.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{McvError, Result};
use crate::tabular::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mcar => "mcar",
            Self::Mar => "mar",
            Self::Mnar => "mnar",
        }
    }
}

/// Declarative description of a missingness mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    /// Per-feature probability (MCAR) or target average rate (MAR/MNAR).
    pub rate: f64,
    pub maskable: Vec<usize>,
    /// Features driving the MAR logits. Ignored for MCAR and MNAR.
    pub driver: Vec<usize>,
    /// Redraw the pattern where every covariate is missing.
    pub exclude_full: bool,
}

impl MissingnessSpec {
    pub fn mcar(d: usize, p: f64) -> Self {
        Self { mechanism: Mechanism::Mcar, rate: p, maskable: (0..d).collect(), driver: vec![], exclude_full: true }
    }

    pub fn mar(maskable: Vec<usize>, driver: Vec<usize>, rate: f64) -> Self {
        Self { mechanism: Mechanism::Mar, rate, maskable, driver, exclude_full: true }
    }

    pub fn mnar(maskable: Vec<usize>, rate: f64) -> Self {
        Self { mechanism: Mechanism::Mnar, rate, maskable, driver: vec![], exclude_full: true }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(McvError::invalid(format!("missingness rate must lie in [0, 1), got {}", self.rate)));
        }
        if self.maskable.is_empty() {
            return Err(McvError::invalid("no maskable features"));
        }
        if let Some(&bad) = self.maskable.iter().chain(&self.driver).find(|&&i| i >= d) {
            return Err(McvError::invalid(format!("feature index {bad} out of range for d={d}")));
        }
        if self.mechanism == Mechanism::Mar {
            if self.driver.is_empty() {
                return Err(McvError::invalid("MAR needs at least one driver feature"));
            }
            if self.maskable.iter().any(|i| self.driver.contains(i)) {
                return Err(McvError::invalid("MAR driver and maskable sets must be disjoint"));
            }
        }
        Ok(())
    }

    /// Whether the fully-missing pattern can occur at all.
    fn full_reachable(&self, d: usize) -> bool {
        self.maskable.len() == d
    }
}

/// A mechanism with its logistic weights and calibrated intercept.
#[derive(Clone, Debug)]
pub struct MissingnessModel {
    spec: MissingnessSpec,
    dim: usize,
    /// One weight vector per maskable feature: over `driver` for MAR, a
    /// single self-weight for MNAR, empty for MCAR.
    weights: Vec<Vec<f64>>,
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: f64,
}

const MAX_REDRAWS: usize = 10_000;

impl MissingnessModel {
    /// MCAR needs no reference data.
    pub fn mcar(spec: MissingnessSpec, dim: usize) -> Result<Self> {
        spec.validate(dim)?;
        if spec.mechanism != Mechanism::Mcar {
            return Err(McvError::invalid("MissingnessModel::mcar called with a non-MCAR spec"));
        }
        Ok(Self { spec, dim, weights: vec![], center: vec![0.0; dim], scale: vec![1.0; dim], intercept: 0.0 })
    }

    /// Draws standard normal logistic weights once, then calibrates the
    /// intercept on `reference`.
    pub fn fit<R: Rng + ?Sized>(spec: MissingnessSpec, reference: &[Vec<f64>], rng: &mut R) -> Result<Self> {
        let dim = reference.first().map(Vec::len).ok_or_else(|| McvError::invalid("empty reference sample"))?;
        let weights = match spec.mechanism {
            Mechanism::Mcar => return Self::mcar(spec, dim),
            Mechanism::Mar => spec
                .maskable
                .iter()
                .map(|_| spec.driver.iter().map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
            Mechanism::Mnar => spec.maskable.iter().map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect(),
        };
        Self::with_weights(spec, reference, weights)
    }

    /// Uses explicit weights (one vector per maskable feature) and calibrates
    /// the intercept on `reference`.
    pub fn with_weights(spec: MissingnessSpec, reference: &[Vec<f64>], weights: Vec<Vec<f64>>) -> Result<Self> {
        let dim = reference.first().map(Vec::len).ok_or_else(|| McvError::invalid("empty reference sample"))?;
        spec.validate(dim)?;
        if spec.mechanism == Mechanism::Mcar {
            return Self::mcar(spec, dim);
        }
        let expected = if spec.mechanism == Mechanism::Mar { spec.driver.len() } else { 1 };
        if weights.len() != spec.maskable.len() || weights.iter().any(|w| w.len() != expected) {
            return Err(McvError::invalid("weight shape does not match the missingness spec"));
        }
        if spec.rate <= 0.0 {
            return Err(McvError::Calibration("target rate must be positive for MAR/MNAR".into()));
        }
        let n = reference.len() as f64;
        let mut center = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            let col: Vec<f64> = reference.iter().map(|x| x[j]).collect();
            center[j] = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - center[j]).powi(2)).sum::<f64>() / n).sqrt();
            scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
        let mut model = Self { spec, dim, weights, center, scale, intercept: 0.0 };
        let logits: Vec<Vec<f64>> = reference.iter().map(|x| model.linear_parts(x)).collect();
        let rate_at = |b: f64| {
            logits.iter().flat_map(|row| row.iter().map(move |l| sigmoid(l + b))).sum::<f64>()
                / (logits.len() * logits[0].len()) as f64
        };
        let target = model.spec.rate;
        let (mut lo, mut hi) = (-60.0, 60.0);
        if rate_at(lo) > target || rate_at(hi) < target {
            return Err(McvError::Calibration(format!("target rate {target} unreachable")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        model.intercept = 0.5 * (lo + hi);
        Ok(model)
    }

    pub fn spec(&self) -> &MissingnessSpec {
        &self.spec
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    fn linear_parts(&self, x: &[f64]) -> Vec<f64> {
        let z = |j: usize| (x[j] - self.center[j]) / self.scale[j];
        match self.spec.mechanism {
            Mechanism::Mcar => vec![0.0; self.spec.maskable.len()],
            Mechanism::Mar => self
                .weights
                .iter()
                .map(|w| w.iter().zip(&self.spec.driver).map(|(wi, &j)| wi * z(j)).sum())
                .collect(),
            Mechanism::Mnar => self.weights.iter().zip(&self.spec.maskable).map(|(w, &j)| w[0] * z(j)).collect(),
        }
    }

    /// Missing probability of every maskable feature given the full row.
    pub fn missing_probs(&self, x: &[f64]) -> Vec<f64> {
        match self.spec.mechanism {
            Mechanism::Mcar => vec![self.spec.rate; self.spec.maskable.len()],
            _ => self.linear_parts(x).into_iter().map(|l| sigmoid(l + self.intercept)).collect(),
        }
    }

    /// Draws a mask for the complete row `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Mask {
        let probs = self.missing_probs(x);
        let redraw = self.spec.exclude_full && self.spec.full_reachable(self.dim);
        let mut bits = vec![false; self.dim];
        for _ in 0..MAX_REDRAWS {
            bits.iter_mut().for_each(|b| *b = false);
            for (&j, &p) in self.spec.maskable.iter().zip(&probs) {
                bits[j] = rng.random_bool(p.clamp(0.0, 1.0));
            }
            if !(redraw && bits.iter().all(|&b| b)) {
                return Mask::new(bits);
            }
        }
        let k = rng.random_range(0..self.dim);
        bits[k] = false;
        Mask::new(bits)
    }

    /// `P(M = m | x)` for the complete row `x`, after full-pattern exclusion.
    pub fn mask_probability(&self, x: &[f64], m: &Mask) -> f64 {
        if m.len() != self.dim {
            return 0.0;
        }
        let probs = self.missing_probs(x);
        let mut p_m = 1.0;
        let mut p_full = 1.0;
        for j in 0..self.dim {
            match self.spec.maskable.iter().position(|&k| k == j) {
                Some(i) => {
                    p_m *= if m.is_missing(j) { probs[i] } else { 1.0 - probs[i] };
                    p_full *= probs[i];
                }
                None => {
                    if m.is_missing(j) {
                        return 0.0;
                    }
                    p_full = 0.0;
                }
            }
        }
        if self.spec.exclude_full && self.spec.full_reachable(self.dim) {
            if m.is_full() {
                return 0.0;
            }
            p_m /= 1.0 - p_full;
        }
        p_m
    }

    /// Exact pattern probability under MCAR (after full-pattern exclusion).
    pub fn mcar_mask_probability(&self, m: &Mask) -> Option<f64> {
        if self.spec.mechanism != Mechanism::Mcar || m.len() != self.dim {
            return None;
        }
        let p = self.spec.rate;
        let mut prob = 1.0;
        for j in 0..self.dim {
            let maskable = self.spec.maskable.contains(&j);
            prob *= match (maskable, m.is_missing(j)) {
                (true, true) => p,
                (true, false) => 1.0 - p,
                (false, true) => 0.0,
                (false, false) => 1.0,
            };
        }
        if self.spec.exclude_full && self.spec.full_reachable(self.dim) {
            if m.is_full() {
                return Some(0.0);
            }
            prob /= 1.0 - p.powi(self.dim as i32);
        }
        Some(prob)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn gen_mcar<R: Rng + ?Sized>(x: &[f64], model: &MissingnessModel, rng: &mut R) -> Mask {
    debug_assert_eq!(model.spec.mechanism, Mechanism::Mcar);
    model.sample(x, rng)
}

pub fn gen_mar<R: Rng + ?Sized>(x: &[f64], model: &MissingnessModel, rng: &mut R) -> Mask {
    debug_assert_eq!(model.spec.mechanism, Mechanism::Mar);
    model.sample(x, rng)
}

pub fn gen_mnar<R: Rng + ?Sized>(x: &[f64], model: &MissingnessModel, rng: &mut R) -> Mask {
    debug_assert_eq!(model.spec.mechanism, Mechanism::Mnar);
    model.sample(x, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::chi_square_independence;

    fn normal_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[0]);
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn mcar_zero_rate_gives_empty_masks() {
        let model = MissingnessModel::mcar(MissingnessSpec::mcar(4, 0.0), 4).unwrap();
        let mut rng = stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(model.sample(&[0.0; 4], &mut rng), Mask::zeros(4));
        }
    }

    #[test]
    fn mcar_high_rate_frequency() {
        let p = 1.0 - 1e-3;
        let mut spec = MissingnessSpec::mcar(3, p);
        spec.exclude_full = false;
        let model = MissingnessModel::mcar(spec, 3).unwrap();
        let mut rng = stream(2, &[]);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let m = gen_mcar(&[0.0; 3], &model, &mut rng);
            for (j, c) in counts.iter_mut().enumerate() {
                *c += usize::from(m.is_missing(j));
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn mcar_respects_maskable_set() {
        let spec = MissingnessSpec { maskable: vec![0, 1], ..MissingnessSpec::mcar(4, 0.7) };
        let model = MissingnessModel::mcar(spec, 4).unwrap();
        let mut rng = stream(3, &[]);
        for _ in 0..1000 {
            let m = model.sample(&[0.0; 4], &mut rng);
            assert!(!m.is_missing(2) && !m.is_missing(3));
        }
    }

    #[test]
    fn full_pattern_is_never_drawn() {
        let model = MissingnessModel::mcar(MissingnessSpec::mcar(2, 0.9), 2).unwrap();
        let mut rng = stream(4, &[]);
        assert!((0..5000).all(|_| !model.sample(&[0.0; 2], &mut rng).is_full()));
        let total: f64 = Mask::enumerate(2, false).iter().map(|m| model.mcar_mask_probability(m).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcar_is_independent_of_covariates() {
        let rows = normal_rows(10_000, 3, 5);
        let model = MissingnessModel::mcar(MissingnessSpec::mcar(3, 0.5), 3).unwrap();
        let mut rng = stream(6, &[]);
        let mut table = vec![vec![0.0; 2]; 4];
        for x in &rows {
            let bin = match x[0] {
                v if v < -0.674 => 0,
                v if v < 0.0 => 1,
                v if v < 0.674 => 2,
                _ => 3,
            };
            table[bin][usize::from(model.sample(x, &mut rng).is_missing(0))] += 1.0;
        }
        assert!(chi_square_independence(&table) > 0.01);
    }

    #[test]
    fn mar_zero_weights_reduce_to_mcar_at_target() {
        let rows = normal_rows(2000, 5, 7);
        let spec = MissingnessSpec::mar(vec![0, 1, 2], vec![3, 4], 0.2);
        let model = MissingnessModel::with_weights(spec, &rows, vec![vec![0.0, 0.0]; 3]).unwrap();
        let sig = 1.0 / (1.0 + (-model.intercept()).exp());
        assert!((sig - 0.2).abs() < 1e-9);
    }

    #[test]
    fn mar_rate_matches_target() {
        let rows = normal_rows(100_000, 5, 8);
        let mut rng = stream(9, &[]);
        let spec = MissingnessSpec::mar(vec![0, 1, 2], vec![3, 4], 0.2);
        let model = MissingnessModel::fit(spec, &rows[..5000], &mut rng).unwrap();
        let calibrated: f64 = rows[..5000].iter().map(|x| model.missing_probs(x).iter().sum::<f64>()).sum::<f64>()
            / (5000.0 * 3.0);
        assert!((calibrated - 0.2).abs() < 1e-3);
        let missing: usize = rows.iter().map(|x| gen_mar(x, &model, &mut rng).n_missing()).sum();
        let rate = missing as f64 / (rows.len() * 3) as f64;
        assert!((rate - 0.2).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn mar_masks_ignore_maskable_values() {
        let rows = normal_rows(2000, 5, 10);
        let mut rng = stream(11, &[]);
        let spec = MissingnessSpec::mar(vec![0, 1, 2], vec![3, 4], 0.3);
        let model = MissingnessModel::fit(spec, &rows, &mut rng).unwrap();
        let mut permuted = rows.clone();
        for (i, row) in permuted.iter_mut().enumerate() {
            let donor = &rows[(i * 7 + 3) % rows.len()];
            row[..3].copy_from_slice(&donor[..3]);
        }
        let mut r1 = stream(12, &[]);
        let mut r2 = stream(12, &[]);
        for (a, b) in rows.iter().zip(&permuted) {
            assert_eq!(model.sample(a, &mut r1), model.sample(b, &mut r2));
        }
    }

    #[test]
    fn mnar_positive_weight_masks_large_values() {
        let rows = normal_rows(100_000, 3, 13);
        let spec = MissingnessSpec::mnar(vec![0, 1, 2], 0.2);
        let model = MissingnessModel::with_weights(spec, &rows[..5000], vec![vec![1.5]; 3]).unwrap();
        let mut rng = stream(14, &[]);
        let (mut hi_miss, mut hi_n, mut lo_miss, mut lo_n, mut total) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for x in &rows {
            let m = gen_mnar(x, &model, &mut rng);
            total += m.n_missing();
            if x[0] > 0.0 {
                hi_n += 1.0;
                hi_miss += f64::from(u8::from(m.is_missing(0)));
            } else {
                lo_n += 1.0;
                lo_miss += f64::from(u8::from(m.is_missing(0)));
            }
        }
        assert!(hi_miss / hi_n > lo_miss / lo_n + 0.1);
        let rate = total as f64 / (rows.len() * 3) as f64;
        assert!((rate - 0.2).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn mnar_zero_weight_is_mcar() {
        let rows = normal_rows(1000, 2, 15);
        let model = MissingnessModel::with_weights(MissingnessSpec::mnar(vec![0, 1], 0.25), &rows, vec![vec![0.0]; 2])
            .unwrap();
        for x in rows.iter().take(10) {
            for p in model.missing_probs(x) {
                assert!((p - 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(MissingnessSpec::mar(vec![0, 1], vec![1], 0.2).validate(3).is_err());
        assert!(MissingnessSpec::mcar(3, 1.0).validate(3).is_err());
        assert!(MissingnessSpec::mnar(vec![5], 0.2).validate(3).is_err());
    }
}
