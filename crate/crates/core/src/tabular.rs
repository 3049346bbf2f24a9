//! Mask algebra, masked samples, datasets and CSV ingestion.
//!
//! Missing cells are `None`, never a NaN sentinel. A mask bit set to `true`
//! marks the coordinate as missing.

use std::fmt;
use std::io::Read;
use std::path::Path;

use crate::error::{McvError, Result};

/// Missingness pattern over `d` covariates (`true` = missing).
///
/// Ordering is lexicographic on the bit string, so `"00101" < "01000"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![false; d])
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![true; d])
    }

    /// Parses a bit string such as `"0101"`.
    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(McvError::invalid(format!("invalid mask character '{other}' in \"{s}\""))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn to_bitstring(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Mask index with bit 0 as the most significant position, matching the
    /// lexicographic order of bit strings.
    pub fn index(&self) -> usize {
        self.0.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn from_index(index: usize, d: usize) -> Self {
        Self((0..d).map(|i| (index >> (d - 1 - i)) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn n_missing(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.0[i]).collect()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.0[i]).collect()
    }

    /// Coordinate-wise maximum of two masks.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        McvError::check_dim(self.len(), other.len())?;
        Ok(Mask(self.0.iter().zip(&other.0).map(|(&a, &b)| a || b).collect()))
    }

    /// True when every missing coordinate of `self` is also missing in `other`.
    pub fn missing_subset_of(&self, other: &Mask) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    /// All masks of dimension `d` in lexicographic order, optionally without
    /// the fully-missing pattern.
    pub fn enumerate(d: usize, exclude_full: bool) -> Vec<Mask> {
        let total = 1usize << d;
        let end = if exclude_full { total - 1 } else { total };
        (0..end).map(|i| Mask::from_index(i, d)).collect()
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

/// `mask(x, m)`: keeps `x_i` where `m_i = 0`, NA elsewhere.
pub fn mask_apply(x: &[f64], m: &Mask) -> Result<Vec<Option<f64>>> {
    McvError::check_dim(m.len(), x.len())?;
    Ok(x.iter().zip(m.bits()).map(|(&v, &miss)| (!miss).then_some(v)).collect())
}

/// Applies `m` on top of an already partially-missing row. NA cells pass
/// through unchanged.
pub fn mask_apply_partial(x: &[Option<f64>], m: &Mask) -> Result<Vec<Option<f64>>> {
    McvError::check_dim(m.len(), x.len())?;
    Ok(x.iter().zip(m.bits()).map(|(&v, &miss)| if miss { None } else { v }).collect())
}

/// NA pattern of a row as a mask.
pub fn na_pattern(x: &[Option<f64>]) -> Mask {
    Mask(x.iter().map(Option::is_none).collect())
}

/// The `(X̃, M, Y)` triple. The mask is derived from the NA pattern at
/// construction, so the two can never disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    x: Vec<Option<f64>>,
    mask: Mask,
    y: f64,
}

impl MaskedSample {
    pub fn new(x: Vec<Option<f64>>, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(McvError::invalid("response must be finite"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(McvError::invalid("observed covariates must be finite"));
        }
        let mask = na_pattern(&x);
        Ok(Self { x, mask, y })
    }

    pub fn from_complete(x: &[f64], m: &Mask, y: f64) -> Result<Self> {
        Self::new(mask_apply(x, m)?, y)
    }

    pub fn x(&self) -> &[Option<f64>] {
        &self.x
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn observed_values(&self) -> Vec<f64> {
        self.x.iter().flatten().copied().collect()
    }
}

/// An ordered collection of masked samples sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<MaskedSample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<MaskedSample>, dim: usize) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
            return Err(McvError::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        Ok(Self { samples, dim })
    }

    pub fn samples(&self) -> &[MaskedSample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { samples: idx.iter().map(|&i| self.samples[i].clone()).collect(), dim: self.dim }
    }
}

/// Closed interval on the extended real line, or the empty set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionInterval {
    lower: f64,
    upper: f64,
    empty: bool,
}

impl PredictionInterval {
    /// Builds `[lower, upper]`; `lower > upper` yields the empty set.
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(!lower.is_nan() && !upper.is_nan(), "interval bounds must not be NaN");
        if lower > upper {
            Self::empty()
        } else {
            Self { lower, upper, empty: false }
        }
    }

    pub fn full() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY, empty: false }
    }

    pub fn empty() -> Self {
        Self { lower: 0.0, upper: 0.0, empty: true }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_bounded(&self) -> bool {
        self.empty || (self.lower.is_finite() && self.upper.is_finite())
    }

    pub fn contains(&self, y: f64) -> bool {
        !self.empty && self.lower <= y && y <= self.upper
    }

    /// Length of the interval; 0 for the empty set, `+inf` when unbounded.
    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.upper - self.lower
        }
    }
}

/// CSV reading options.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub na_token: String,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { na_token: "NA".into(), has_header: false }
    }
}

/// Loads a numeric CSV whose last column is the response.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1 + usize::from(opts.has_header);
        let record = record.map_err(|e| McvError::Parse { line, msg: e.to_string() })?;
        if record.len() < 2 {
            return Err(McvError::Parse { line, msg: "need at least one covariate and a response".into() });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(McvError::Parse {
                    line,
                    msg: format!("inconsistent width: expected {w} columns, got {}", record.len()),
                })
            }
            _ => {}
        }
        let mut cells = Vec::with_capacity(record.len());
        for field in record.iter() {
            if field == opts.na_token {
                cells.push(None);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| McvError::Parse { line, msg: format!("not a number: \"{field}\"") })?;
                if !v.is_finite() {
                    return Err(McvError::Parse { line, msg: format!("non-finite value \"{field}\"") });
                }
                cells.push(Some(v));
            }
        }
        let y = cells
            .pop()
            .flatten()
            .ok_or_else(|| McvError::Parse { line, msg: "missing value in response column".into() })?;
        samples.push(MaskedSample::new(cells, y)?);
    }
    let dim = width.map_or(0, |w| w - 1);
    Dataset::new(samples, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(s: &str) -> Mask {
        Mask::from_bitstring(s).unwrap()
    }

    #[test]
    fn mask_apply_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(mask_apply(&x, &m("000")).unwrap(), vec![Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(mask_apply(&x, &m("111")).unwrap(), vec![None, None, None]);
        assert_eq!(mask_apply(&x, &m("010")).unwrap(), vec![Some(1.0), None, Some(3.0)]);
        assert!(matches!(mask_apply(&x, &m("01")), Err(McvError::DimensionMismatch { .. })));
    }

    #[test]
    fn mask_union_examples() {
        assert_eq!(m("01").union(&m("10")).unwrap(), m("11"));
        assert_eq!(m("00").union(&m("00")).unwrap(), m("00"));
        assert_eq!(m("11").union(&m("01")).unwrap(), m("11"));
        assert!(m("1").union(&m("10")).is_err());
    }

    #[test]
    fn masks_sort_lexicographically() {
        let all = Mask::enumerate(3, true);
        assert_eq!(all.len(), 7);
        let strings: Vec<_> = all.iter().map(Mask::to_bitstring).collect();
        let mut sorted = strings.clone();
        sorted.sort();
        assert_eq!(strings, sorted);
        assert_eq!(strings[0], "000");
        assert_eq!(strings[6], "110");
        for mask in &all {
            assert_eq!(&Mask::from_index(mask.index(), 3), mask);
        }
    }

    #[test]
    fn interval_semantics() {
        let iv = PredictionInterval::new(1.0, 6.0);
        assert!(iv.contains(1.0) && iv.contains(6.0) && !iv.contains(6.1));
        assert_eq!(iv.width(), 5.0);
        let e = PredictionInterval::new(4.0, 3.0);
        assert!(e.is_empty() && !e.contains(3.5));
        assert_eq!(e.width(), 0.0);
        assert_eq!(PredictionInterval::full().width(), f64::INFINITY);
    }

    #[test]
    fn csv_row_with_na() {
        let ds = read_csv("1.0,NA,3.0,7.2\n".as_bytes(), &CsvOptions::default()).unwrap();
        let s = &ds.samples()[0];
        assert_eq!(s.x(), &[Some(1.0), None, Some(3.0)]);
        assert_eq!(s.mask(), &m("010"));
        assert_eq!(s.y(), 7.2);
        assert_eq!(ds.dim(), 3);
    }

    #[test]
    fn csv_errors() {
        let opts = CsvOptions::default();
        let err = read_csv("1,2,3\n1,2\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, McvError::Parse { line: 2, .. }), "{err}");
        assert!(read_csv("1.0,2.0,NA\n".as_bytes(), &opts).is_err());
        assert!(read_csv("1.0,abc,2\n".as_bytes(), &opts).is_err());
    }

    #[test]
    fn csv_header_and_custom_token() {
        let opts = CsvOptions { na_token: "?".into(), has_header: true };
        let ds = read_csv("a,b,y\n?,2,3\n1,?,4\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples()[1].mask(), &m("01"));
    }

    fn arb_mask(d: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(any::<bool>(), d).prop_map(Mask::new)
    }

    proptest! {
        #[test]
        fn union_laws(a in arb_mask(6), b in arb_mask(6), c in arb_mask(6)) {
            prop_assert_eq!(a.union(&b).unwrap(), b.union(&a).unwrap());
            prop_assert_eq!(
                a.union(&b).unwrap().union(&c).unwrap(),
                a.union(&b.union(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(a.union(&a).unwrap(), a.clone());
            prop_assert_eq!(a.union(&Mask::zeros(6)).unwrap(), a.clone());
        }

        #[test]
        fn masking_is_idempotent(x in proptest::collection::vec(-1e6f64..1e6, 5), m in arb_mask(5)) {
            let once = mask_apply(&x, &m).unwrap();
            let twice = mask_apply_partial(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn sample_mask_matches_na_pattern(x in proptest::collection::vec(-1e3f64..1e3, 4), m in arb_mask(4), y in -10.0f64..10.0) {
            let s = MaskedSample::from_complete(&x, &m, y).unwrap();
            prop_assert_eq!(s.mask(), &m);
            for (i, v) in s.x().iter().enumerate() {
                prop_assert_eq!(v.is_none(), m.is_missing(i));
            }
        }
    }
}
