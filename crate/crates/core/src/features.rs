//! Window descriptors, channel composition and the inner-product diagnostic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::svm::Example;

/// Dense descriptor with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyFeature);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Which descriptor channels feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    /// Foreground descriptor only.
    ForegroundOnly,
    /// Foreground concatenated with the background descriptor.
    ForegroundPlusBackground,
    /// Foreground concatenated with background minus foreground context.
    ForegroundPlusContrastive,
}

impl ChannelMode {
    pub fn needs_background(self) -> bool {
        !matches!(self, ChannelMode::ForegroundOnly)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ChannelMode::ForegroundOnly => "f",
            ChannelMode::ForegroundPlusBackground => "fb",
            ChannelMode::ForegroundPlusContrastive => "fc",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        match name {
            "f" => Some(ChannelMode::ForegroundOnly),
            "fb" => Some(ChannelMode::ForegroundPlusBackground),
            "fc" => Some(ChannelMode::ForegroundPlusContrastive),
            _ => None,
        }
    }

    /// Length of the composed descriptor.
    pub fn composed_dim(self, fg_dim: usize, bg_dim: usize) -> usize {
        match self {
            ChannelMode::ForegroundOnly => fg_dim,
            _ => fg_dim + bg_dim,
        }
    }
}

pub fn l2_normalize(v: &FeatureVector) -> FeatureVector {
    let n = v.norm();
    if n < 1e-12 {
        return v.clone();
    }
    FeatureVector(v.0.iter().map(|x| x / n).collect())
}

/// `x_b - x_f`, the contrastive background descriptor.
pub fn contrastive(x_b: &FeatureVector, x_f: &FeatureVector) -> Result<FeatureVector> {
    check_dims(x_b.dim(), x_f.dim())?;
    Ok(FeatureVector(x_b.0.iter().zip(&x_f.0).map(|(b, f)| b - f).collect()))
}

/// Builds the classifier input for one window.
///
/// In contrastive mode the background is contrasted against the leading
/// `bg.dim()` entries of the foreground descriptor, which hold the
/// un-gridded foreground block.
pub fn compose(fg: &FeatureVector, bg: Option<&FeatureVector>, mode: ChannelMode) -> Result<FeatureVector> {
    match mode {
        ChannelMode::ForegroundOnly => Ok(fg.clone()),
        ChannelMode::ForegroundPlusBackground => {
            let bg = bg.ok_or(Error::MissingBackground("fb"))?;
            let mut out = fg.0.clone();
            out.extend_from_slice(&bg.0);
            Ok(FeatureVector(out))
        }
        ChannelMode::ForegroundPlusContrastive => {
            let bg = bg.ok_or(Error::MissingBackground("fc"))?;
            if bg.dim() > fg.dim() {
                return Err(Error::DimensionMismatch { expected: fg.dim(), got: bg.dim() });
            }
            let context = FeatureVector(fg.0[..bg.dim()].to_vec());
            let c = contrastive(bg, &context)?;
            let mut out = fg.0.clone();
            out.extend_from_slice(&c.0);
            Ok(FeatureVector(out))
        }
    }
}

/// Borrowed view of a composed descriptor over raw `f32` storage.
///
/// Never materializes the concatenation; dot products and updates are
/// applied block by block.
#[derive(Debug, Clone, Copy)]
pub struct ComposedRef<'a> {
    pub fg: &'a [f32],
    pub bg: Option<&'a [f32]>,
    pub mode: ChannelMode,
}

impl<'a> ComposedRef<'a> {
    pub fn new(fg: &'a [f32], bg: Option<&'a [f32]>, mode: ChannelMode) -> Result<Self> {
        if mode.needs_background() {
            let b = bg.ok_or(Error::MissingBackground(mode.short_name()))?;
            if mode == ChannelMode::ForegroundPlusContrastive && b.len() > fg.len() {
                return Err(Error::DimensionMismatch { expected: fg.len(), got: b.len() });
            }
        }
        Ok(ComposedRef { fg, bg, mode })
    }

    fn bg_unchecked(&self) -> &'a [f32] {
        self.bg.unwrap_or(&[])
    }

    pub fn to_feature_vector(&self) -> Result<FeatureVector> {
        let fg = FeatureVector::from_f32(self.fg)?;
        let bg = match self.bg {
            Some(b) if self.mode.needs_background() => Some(FeatureVector::from_f32(b)?),
            _ => None,
        };
        compose(&fg, bg.as_ref(), self.mode)
    }
}

pub(crate) fn dot_f32(w: &[f64], x: &[f32]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let wc = w.chunks_exact(4);
    let xc = x.chunks_exact(4);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        acc[0] += a[0] * b[0] as f64;
        acc[1] += a[1] * b[1] as f64;
        acc[2] += a[2] * b[2] as f64;
        acc[3] += a[3] * b[3] as f64;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in wr.iter().zip(xr) {
        s += a * *b as f64;
    }
    s
}

pub(crate) fn axpy_f32(a: f64, x: &[f32], w: &mut [f64]) {
    debug_assert_eq!(w.len(), x.len());
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi += a * *xi as f64;
    }
}

fn sq_f32(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

impl Example for ComposedRef<'_> {
    fn dim(&self) -> usize {
        self.mode.composed_dim(self.fg.len(), self.bg_unchecked().len())
    }

    fn dot(&self, w: &[f64]) -> f64 {
        let n = self.fg.len();
        let fgs = dot_f32(&w[..n], self.fg);
        match self.mode {
            ChannelMode::ForegroundOnly => fgs,
            ChannelMode::ForegroundPlusBackground => fgs + dot_f32(&w[n..], self.bg_unchecked()),
            ChannelMode::ForegroundPlusContrastive => {
                let bg = self.bg_unchecked();
                let m = bg.len();
                fgs + dot_f32(&w[n..n + m], bg) - dot_f32(&w[n..n + m], &self.fg[..m])
            }
        }
    }

    fn add_scaled(&self, a: f64, w: &mut [f64]) {
        let n = self.fg.len();
        axpy_f32(a, self.fg, &mut w[..n]);
        match self.mode {
            ChannelMode::ForegroundOnly => {}
            ChannelMode::ForegroundPlusBackground => axpy_f32(a, self.bg_unchecked(), &mut w[n..]),
            ChannelMode::ForegroundPlusContrastive => {
                let bg = self.bg_unchecked();
                let m = bg.len();
                axpy_f32(a, bg, &mut w[n..n + m]);
                axpy_f32(-a, &self.fg[..m], &mut w[n..n + m]);
            }
        }
    }

    fn norm_sq(&self) -> f64 {
        let f = sq_f32(self.fg);
        match self.mode {
            ChannelMode::ForegroundOnly => f,
            ChannelMode::ForegroundPlusBackground => f + sq_f32(self.bg_unchecked()),
            ChannelMode::ForegroundPlusContrastive => {
                let bg = self.bg_unchecked();
                let c: f64 = bg
                    .iter()
                    .zip(self.fg)
                    .map(|(&b, &f)| {
                        let d = b as f64 - f as f64;
                        d * d
                    })
                    .sum();
                f + c
            }
        }
    }
}

/// Which window pairs enter the inner-product diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairMode {
    AllPairs,
    WithinImage,
}

/// Equal-width histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram { lo, hi, counts: vec![0; bins.max(1)] }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        if self.hi <= self.lo {
            return n / 2;
        }
        let t = ((v - self.lo) / (self.hi - self.lo) * n as f64).floor();
        (t.max(0.0) as usize).min(n - 1)
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + width * i as f64, self.lo + width * (i + 1) as f64)
    }

    /// Fraction of the mass in bins lying entirely inside `(-r, r)`.
    pub fn mass_within(&self, r: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let inside: u64 = (0..self.counts.len())
            .filter(|&i| {
                let (a, b) = self.bin_edges(i);
                a >= -r - 1e-12 && b <= r + 1e-12
            })
            .map(|i| self.counts[i])
            .sum();
        inside as f64 / total as f64
    }
}

/// Shifts a descriptor to zero mean and scales it to unit norm.
pub fn center_and_normalize(x: &[f32]) -> Vec<f64> {
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    let centered = FeatureVector(x.iter().map(|&v| v as f64 - mean).collect());
    l2_normalize(&centered).into_inner()
}

/// Inner-product histogram of centered, normalized foreground descriptors.
///
/// `sample_size` windows are drawn uniformly without replacement; all
/// pairs among them are used, or only those sharing an image.
pub fn inner_product_histogram(
    dataset: &Dataset,
    pair_mode: PairMode,
    sample_size: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    let mut pool: Vec<(usize, usize)> = dataset
        .bags()
        .iter()
        .enumerate()
        .flat_map(|(i, b)| (0..b.windows.len()).map(move |w| (i, w)))
        .collect();
    if pool.len() < 2 || sample_size < 2 {
        return Err(Error::TooFewWindows(pool.len().min(sample_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(sample_size);
    pool.sort_unstable();

    let normed: Vec<Vec<f64>> = pool
        .iter()
        .map(|&(i, w)| center_and_normalize(dataset.fg_row(i, w)))
        .collect();

    let mut hist = Histogram::new(-1.0, 1.0, bins);
    for a in 0..pool.len() {
        for b in a + 1..pool.len() {
            if pair_mode == PairMode::WithinImage && pool[a].0 != pool[b].0 {
                continue;
            }
            let p: f64 = normed[a].iter().zip(&normed[b]).map(|(x, y)| x * y).sum();
            hist.add(p.clamp(-1.0, 1.0));
        }
    }
    if hist.total() == 0 {
        return Err(Error::TooFewWindows(pool.len()));
    }
    Ok(hist)
}
