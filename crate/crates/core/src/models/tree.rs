use rand::seq::index::sample;

use super::TreeParams;
use crate::error::{McvError, Result};
use crate::rng::McvRng;

/// Bin index reserved for missing values.
pub(crate) const NA_BIN: u8 = u8::MAX;

/// Per-feature cut points. Bin `b` holds values in `(cut[b-1], cut[b]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinMapper {
    cuts: Vec<Vec<f64>>,
}

impl BinMapper {
    pub fn fit(rows: &[Vec<Option<f64>>], max_bins: usize) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or_else(|| McvError::InsufficientData("no rows to bin".into()))?;
        let mut cuts = Vec::with_capacity(d);
        for j in 0..d {
            let mut vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let c = if vals.len() <= max_bins {
                vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let i = k * vals.len() / max_bins;
                        0.5 * (vals[i - 1] + vals[i])
                    })
                    .collect();
                c.dedup();
                c
            };
            cuts.push(c);
        }
        Ok(Self { cuts })
    }

    pub fn dim(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn cuts(&self, feature: usize) -> &[f64] {
        &self.cuts[feature]
    }

    pub fn bin_value(&self, feature: usize, v: Option<f64>) -> u8 {
        match v {
            None => NA_BIN,
            Some(x) => self.cuts[feature].partition_point(|c| *c < x) as u8,
        }
    }

    pub fn bin_row(&self, row: &[Option<f64>]) -> Vec<u8> {
        row.iter().enumerate().map(|(j, v)| self.bin_value(j, *v)).collect()
    }
}

/// Row-major binned design.
pub(crate) struct Binned {
    pub data: Vec<u8>,
    pub d: usize,
}

impl Binned {
    pub fn new(mapper: &BinMapper, rows: &[Vec<Option<f64>>]) -> Self {
        let d = mapper.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend(mapper.bin_row(r));
        }
        Self { data, d }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: u8, na_left: bool, left: usize, right: usize },
}

/// One regression tree over binned inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_bins(&self, bins: &[u8]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, na_left, left, right } => {
                    let b = bins[*feature];
                    let go_left = if b == NA_BIN { *na_left } else { b <= *threshold };
                    k = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: u8,
    na_left: bool,
}

struct Builder<'a> {
    x: &'a Binned,
    mapper: &'a BinMapper,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<Best> {
        let lambda = self.params.lambda;
        let min_leaf = self.params.min_samples_leaf;
        let g_tot: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_tot: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let parent = g_tot * g_tot / (h_tot + lambda);
        let n_tot = rows.len();
        let mut best: Option<Best> = None;
        let mut hg = vec![0.0; 256];
        let mut hh = vec![0.0; 256];
        let mut hc = vec![0usize; 256];
        for j in 0..self.x.d {
            let nb = self.mapper.n_bins(j);
            hg[..nb].fill(0.0);
            hh[..nb].fill(0.0);
            hc[..nb].fill(0);
            let (mut g_na, mut h_na, mut c_na) = (0.0, 0.0, 0usize);
            for &i in rows {
                let b = self.x.get(i, j);
                if b == NA_BIN {
                    g_na += self.grad[i];
                    h_na += self.hess[i];
                    c_na += 1;
                } else {
                    let b = b as usize;
                    hg[b] += self.grad[i];
                    hh[b] += self.hess[i];
                    hc[b] += 1;
                }
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for t in 0..nb {
                gl += hg[t];
                hl += hh[t];
                cl += hc[t];
                for na_left in [false, true] {
                    if na_left && (c_na == 0 || t + 1 == nb) {
                        continue;
                    }
                    let (g_l, h_l, c_l) = if na_left { (gl + g_na, hl + h_na, cl + c_na) } else { (gl, hl, cl) };
                    let c_r = n_tot - c_l;
                    if c_l < min_leaf || c_r < min_leaf {
                        continue;
                    }
                    let (g_r, h_r) = (g_tot - g_l, h_tot - h_l);
                    let gain = g_l * g_l / (h_l + lambda) + g_r * g_r / (h_r + lambda) - parent;
                    if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                        // With no NA at this node, send NA down the larger child.
                        let na_left = if c_na == 0 { c_l >= c_r } else { na_left };
                        best = Some(Best { gain, feature: j, threshold: t as u8, na_left });
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, leaf_value: &mut dyn FnMut(&[usize]) -> f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if depth < self.params.max_depth && rows.len() >= 2 * self.params.min_samples_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf(leaf_value(&rows));
            }
            Some(b) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| {
                    let v = self.x.get(i, b.feature);
                    if v == NA_BIN {
                        b.na_left
                    } else {
                        v <= b.threshold
                    }
                });
                let left = self.grow(l, depth + 1, leaf_value);
                let right = self.grow(r, depth + 1, leaf_value);
                self.nodes[id] = Node::Split { feature: b.feature, threshold: b.threshold, na_left: b.na_left, left, right };
            }
        }
        id
    }
}

pub(crate) fn build_tree(
    x: &Binned,
    mapper: &BinMapper,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    leaf_value: &mut dyn FnMut(&[usize]) -> f64,
) -> Tree {
    let mut b = Builder { x, mapper, grad, hess, params, nodes: Vec::new() };
    b.grow(rows, 0, leaf_value);
    Tree { nodes: b.nodes }
}

/// Rows used for one boosting round.
pub(crate) fn round_rows(n: usize, subsample: f64, rng: &mut McvRng) -> Vec<usize> {
    if subsample >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * subsample).round() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Additive tree ensemble on a fixed binning.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Ensemble {
    pub mapper: BinMapper,
    pub init: f64,
    pub trees: Vec<Tree>,
}

impl Ensemble {
    pub fn raw_bins(&self, bins: &[u8]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_bins(bins)).sum::<f64>()
    }

    pub fn raw(&self, row: &[Option<f64>]) -> Result<f64> {
        McvError::check_dim(self.mapper.dim(), row.len())?;
        Ok(self.raw_bins(&self.mapper.bin_row(row)))
    }
}

pub(crate) fn check_rows(rows: &[Vec<Option<f64>>], n_targets: usize) -> Result<usize> {
    if rows.is_empty() {
        return Err(McvError::InsufficientData("empty training set".into()));
    }
    McvError::check_dim(rows.len(), n_targets)?;
    let d = rows[0].len();
    for r in rows {
        McvError::check_dim(d, r.len())?;
        if r.iter().flatten().any(|v| !v.is_finite()) {
            return Err(McvError::invalid("non-finite feature value"));
        }
    }
    Ok(d)
}
