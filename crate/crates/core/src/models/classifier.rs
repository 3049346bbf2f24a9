use super::tree::{build_tree, check_rows, round_rows, Binned, BinMapper, Ensemble};
use super::TreeParams;
use crate::error::{McvError, Result};
use crate::rng::McvRng;
use rand::seq::SliceRandom;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-6;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Boosted logistic classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbClassifier {
    ensemble: Ensemble,
}

/// Predicted probability as a function of the last feature with all other
/// features held fixed. Piecewise constant over the last feature's bins.
#[derive(Clone, Debug)]
pub struct YProfile {
    cuts: Vec<f64>,
    probs: Vec<f64>,
}

impl YProfile {
    pub fn prob(&self, y: f64) -> f64 {
        self.probs[self.cuts.partition_point(|c| *c < y)]
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

impl ProbClassifier {
    pub fn dim(&self) -> usize {
        self.ensemble.mapper.dim()
    }

    pub fn predict_proba(&self, row: &[Option<f64>]) -> Result<f64> {
        Ok(clip(sigmoid(self.ensemble.raw(row)?)))
    }

    /// Probability profile over the last feature; `head` holds the others.
    pub fn profile_last(&self, head: &[Option<f64>]) -> Result<YProfile> {
        let d = self.dim();
        McvError::check_dim(d - 1, head.len())?;
        let mapper = &self.ensemble.mapper;
        let mut bins = mapper.bin_row(&[head, &[None]].concat());
        let nb = mapper.n_bins(d - 1);
        let probs = (0..nb)
            .map(|b| {
                bins[d - 1] = b as u8;
                clip(sigmoid(self.ensemble.raw_bins(&bins)))
            })
            .collect();
        Ok(YProfile { cuts: mapper.cuts(d - 1).to_vec(), probs })
    }
}

/// Stratified split into fitting and held-out rows; no hold-out when
/// `fraction` is 0 or a class is too small to spare rows.
fn holdout(labels: &[bool], fraction: f64, rng: &mut McvRng) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..labels.len()).collect();
    if fraction <= 0.0 {
        return (all, Vec::new());
    }
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = all.iter().copied().filter(|&i| labels[i] == class).collect();
        let k = (idx.len() as f64 * fraction).round() as usize;
        if k == 0 || k == idx.len() {
            return (all, Vec::new());
        }
        idx.shuffle(rng);
        val.extend_from_slice(&idx[..k]);
        fit.extend_from_slice(&idx[k..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

fn log_loss(raw: &[f64], t: &[f64], rows: &[usize]) -> f64 {
    rows.iter()
        .map(|&i| {
            let p = clip(sigmoid(raw[i]));
            -(t[i] * p.ln() + (1.0 - t[i]) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / rows.len().max(1) as f64
}

/// Fits a boosted logistic model with Newton leaves.
pub fn fit_classifier(
    rows: &[Vec<Option<f64>>],
    labels: &[bool],
    params: &TreeParams,
    rng: &mut McvRng,
) -> Result<ProbClassifier> {
    params.validate()?;
    check_rows(rows, labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(McvError::InsufficientData("classifier needs both labels present".into()));
    }
    let mapper = BinMapper::fit(rows, params.max_bins)?;
    let x = Binned::new(&mapper, rows);
    let n = labels.len();
    let (fit_rows, val_rows) = holdout(labels, params.validation_fraction, rng);
    let n_fit_pos = fit_rows.iter().filter(|&&i| labels[i]).count();
    let prior = (n_fit_pos as f64 / fit_rows.len() as f64).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let init = (prior / (1.0 - prior)).ln();
    let t: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut raw = vec![init; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut best = (log_loss(&raw, &t, &val_rows), 0usize);
    for _ in 0..params.n_trees {
        for &i in &fit_rows {
            let p = sigmoid(raw[i]);
            grad[i] = p - t[i];
            hess[i] = (p * (1.0 - p)).max(1e-12);
        }
        let rows_t: Vec<usize> =
            round_rows(fit_rows.len(), params.subsample, rng).into_iter().map(|k| fit_rows[k]).collect();
        let (lr, lambda) = (params.learning_rate, params.lambda);
        let (g, h) = (&grad, &hess);
        let mut leaf = |idx: &[usize]| {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            let hs: f64 = idx.iter().map(|&i| h[i]).sum();
            -lr * gs / (hs + lambda)
        };
        let tree = build_tree(&x, &mapper, &grad, &hess, rows_t, params, &mut leaf);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += tree.predict_bins(x.row(i));
        }
        trees.push(tree);
        if !val_rows.is_empty() {
            let loss = log_loss(&raw, &t, &val_rows);
            if loss < best.0 {
                best = (loss, trees.len());
            } else if trees.len() - best.1 >= params.patience {
                break;
            }
        }
    }
    if !val_rows.is_empty() {
        trees.truncate(best.1);
    }
    Ok(ProbClassifier { ensemble: Ensemble { mapper, init, trees } })
}
