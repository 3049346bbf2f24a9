use super::tree::{build_tree, check_rows, round_rows, Binned, BinMapper, Ensemble};
use super::TreeParams;
use crate::error::{McvError, Result};
use crate::rng::McvRng;

/// Mean pinball loss at level `tau`.
pub fn pinball_loss(y: &[f64], pred: &[f64], tau: f64) -> f64 {
    let total: f64 = y
        .iter()
        .zip(pred)
        .map(|(y, f)| {
            let r = y - f;
            if r >= 0.0 {
                tau * r
            } else {
                (tau - 1.0) * r
            }
        })
        .sum();
    total / y.len() as f64
}

/// Lower empirical `tau`-quantile; a minimiser of the pinball loss.
fn empirical_quantile(mut v: Vec<f64>, tau: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((tau * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Boosted pinball-loss regressor at one quantile level.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileRegressor {
    level: f64,
    ensemble: Ensemble,
    loss_history: Vec<f64>,
}

impl QuantileRegressor {
    pub fn fit(rows: &[Vec<Option<f64>>], y: &[f64], level: f64, params: &TreeParams, rng: &mut McvRng) -> Result<Self> {
        params.validate()?;
        check_rows(rows, y.len())?;
        if !(level > 0.0 && level < 1.0) {
            return Err(McvError::invalid("quantile level must lie in (0, 1)"));
        }
        let mapper = BinMapper::fit(rows, params.max_bins)?;
        let x = Binned::new(&mapper, rows);
        let n = y.len();
        let init = empirical_quantile(y.to_vec(), level);
        let mut pred = vec![init; n];
        let hess = vec![1.0; n];
        let mut grad = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut loss_history = vec![pinball_loss(y, &pred, level)];
        for _ in 0..params.n_trees {
            for i in 0..n {
                grad[i] = if y[i] > pred[i] { -level } else { 1.0 - level };
            }
            let rows_t = round_rows(n, params.subsample, rng);
            let lr = params.learning_rate;
            let mut leaf = |idx: &[usize]| lr * empirical_quantile(idx.iter().map(|&i| y[i] - pred[i]).collect(), level);
            let tree = build_tree(&x, &mapper, &grad, &hess, rows_t, params, &mut leaf);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += tree.predict_bins(x.row(i));
            }
            loss_history.push(pinball_loss(y, &pred, level));
            trees.push(tree);
        }
        Ok(Self { level, ensemble: Ensemble { mapper, init, trees }, loss_history })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Training pinball loss before the first tree and after each tree.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn predict(&self, row: &[Option<f64>]) -> Result<f64> {
        self.ensemble.raw(row)
    }
}

/// Lower/upper quantile regressors used by the CQR score.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantilePair {
    low: QuantileRegressor,
    high: QuantileRegressor,
}

impl QuantilePair {
    pub fn fit_levels(
        rows: &[Vec<Option<f64>>],
        y: &[f64],
        low: f64,
        high: f64,
        params: &TreeParams,
        rng: &mut McvRng,
    ) -> Result<Self> {
        let low = QuantileRegressor::fit(rows, y, low, params, rng)?;
        let high = QuantileRegressor::fit(rows, y, high, params, rng)?;
        Ok(Self { low, high })
    }

    pub fn low(&self) -> &QuantileRegressor {
        &self.low
    }

    pub fn high(&self) -> &QuantileRegressor {
        &self.high
    }

    pub fn dim(&self) -> usize {
        self.low.ensemble.mapper.dim()
    }

    /// `(f_low(x), f_high(x))`, no crossing correction.
    pub fn predict(&self, row: &[Option<f64>]) -> Result<(f64, f64)> {
        Ok((self.low.predict(row)?, self.high.predict(row)?))
    }
}

/// Fits the pair at levels `alpha / 2` and `1 - alpha / 2`.
pub fn fit_quantile_pair(
    rows: &[Vec<Option<f64>>],
    y: &[f64],
    alpha: f64,
    params: &TreeParams,
    rng: &mut McvRng,
) -> Result<QuantilePair> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(McvError::invalid("alpha must lie in (0, 1)"));
    }
    QuantilePair::fit_levels(rows, y, alpha / 2.0, 1.0 - alpha / 2.0, params, rng)
}
