//! Bags, the binary feature store and the JSON dataset manifest.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{ChannelMode, ComposedRef};
use crate::geometry::{initial_window, iou, Window};
use crate::refine::EdgeGroup;

pub const MANIFEST_VERSION: u32 = 1;
pub const MILF_MAGIC: &[u8; 4] = b"MILF";
pub const MILF_VERSION: u32 = 1;
pub const DEFAULT_FEATURES_FILE: &str = "features.milf";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    #[default]
    Weak,
    Full,
}

/// A candidate window of a given image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowRef {
    pub image: usize,
    pub window: usize,
}

/// Row indices into the feature store for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub fg: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fg_flip: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_flip: Option<usize>,
}

/// One image with its candidate windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: ImageId,
    pub label: Label,
    pub supervision: Supervision,
    pub windows: Vec<Window>,
    pub features: Vec<WindowFeatures>,
    pub edge_groups: Vec<EdgeGroup>,
    gt_boxes: Vec<Window>,
}

impl Bag {
    pub fn new(
        id: ImageId,
        label: Label,
        supervision: Supervision,
        windows: Vec<Window>,
        features: Vec<WindowFeatures>,
        gt_boxes: Vec<Window>,
        edge_groups: Vec<EdgeGroup>,
    ) -> Result<Self> {
        if windows.len() != features.len() {
            return Err(Error::Format(format!("image {id}: {} windows but {} feature refs", windows.len(), features.len())));
        }
        if label == Label::Positive && windows.is_empty() {
            return Err(Error::Format(format!("positive image {id} has no candidate windows")));
        }
        if supervision == Supervision::Full && gt_boxes.is_empty() {
            return Err(Error::Format(format!("fully supervised image {id} has no ground-truth boxes")));
        }
        Ok(Bag { id, label, supervision, windows, features, edge_groups, gt_boxes })
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }

    pub fn is_negative(&self) -> bool {
        self.label == Label::Negative
    }

    pub fn has_gt(&self) -> bool {
        !self.gt_boxes.is_empty()
    }
}

/// Row-major `f32` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Format(format!("{} values do not form rows of dim {dim}", data.len())));
        }
        Ok(FeatureStore { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends a row and returns its index.
    pub fn push(&mut self, row: &[f32]) -> Result<usize> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(self.len() - 1)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MILF_MAGIC)?;
        out.write_all(&MILF_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 4 * self.data.len());
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 20];
        input.read_exact(&mut header).map_err(|_| Error::Format("truncated MILF header".into()))?;
        if &header[..4] != MILF_MAGIC {
            return Err(Error::Format("bad MILF magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != MILF_VERSION {
            return Err(Error::Format(format!("unsupported MILF version {version}")));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Format("MILF dim is zero".into()));
        }
        let n = dim.checked_mul(count).ok_or_else(|| Error::Format("MILF size overflow".into()))?;
        let mut bytes = vec![0u8; n * 4];
        input.read_exact(&mut bytes).map_err(|_| Error::Format("truncated MILF body".into()))?;
        let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sidecar"));
        }
        Ok(FeatureStore { dim, data })
    }
}

/// Immutable collection of bags sharing one feature store.
#[derive(Debug)]
pub struct Dataset {
    bags: Vec<Bag>,
    store: FeatureStore,
    gt_reads: AtomicUsize,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Dataset { bags: self.bags.clone(), store: self.store.clone(), gt_reads: AtomicUsize::new(0) }
    }
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, store: FeatureStore) -> Result<Self> {
        let n = store.len();
        let mut has_bg = None;
        for bag in &bags {
            for f in &bag.features {
                for idx in [Some(f.fg), f.bg, f.fg_flip, f.bg_flip].into_iter().flatten() {
                    if idx >= n {
                        return Err(Error::Format(format!("image {}: feature index {idx} out of range ({n} rows)", bag.id)));
                    }
                }
                match has_bg {
                    None => has_bg = Some(f.bg.is_some()),
                    Some(h) if h != f.bg.is_some() => {
                        return Err(Error::Format("background refs must be given for all windows or none".into()))
                    }
                    _ => {}
                }
            }
            for w in bag.windows.iter().chain(&bag.gt_boxes) {
                if !w.is_valid() {
                    return Err(Error::InvalidWindow { x0: w.x0, y0: w.y0, x1: w.x1, y1: w.y1 });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for bag in &bags {
            if !seen.insert(&bag.id) {
                return Err(Error::Format(format!("duplicate image id {}", bag.id)));
            }
        }
        Ok(Dataset { bags, store, gt_reads: AtomicUsize::new(0) })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag(&self, i: usize) -> &Bag {
        &self.bags[i]
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }

    pub fn feature_dim(&self) -> usize {
        self.store.dim()
    }

    pub fn has_background(&self) -> bool {
        self.bags.iter().flat_map(|b| &b.features).any(|f| f.bg.is_some())
    }

    pub fn has_flips(&self) -> bool {
        let mut all = self.bags.iter().flat_map(|b| &b.features).peekable();
        all.peek().is_some() && all.all(|f| f.fg_flip.is_some())
    }

    /// Dimension of the classifier input under `mode`.
    pub fn composed_dim(&self, mode: ChannelMode) -> usize {
        mode.composed_dim(self.store.dim(), self.store.dim())
    }

    pub fn positive_ids(&self) -> Vec<usize> {
        (0..self.bags.len()).filter(|&i| self.bags[i].is_positive()).collect()
    }

    pub fn negative_ids(&self) -> Vec<usize> {
        (0..self.bags.len()).filter(|&i| self.bags[i].is_negative()).collect()
    }

    pub fn fg_row(&self, image: usize, window: usize) -> &[f32] {
        self.store.row(self.bags[image].features[window].fg)
    }

    pub fn composed(&self, image: usize, window: usize, mode: ChannelMode) -> Result<ComposedRef<'_>> {
        let f = &self.bags[image].features[window];
        ComposedRef::new(self.store.row(f.fg), f.bg.map(|b| self.store.row(b)), mode)
    }

    /// Descriptor of the horizontally mirrored window, when the dataset has one.
    pub fn composed_flip(&self, image: usize, window: usize, mode: ChannelMode) -> Result<Option<ComposedRef<'_>>> {
        let f = &self.bags[image].features[window];
        let Some(fg) = f.fg_flip else { return Ok(None) };
        let bg = match (mode.needs_background(), f.bg_flip) {
            (true, None) => return Ok(None),
            (_, b) => b.map(|b| self.store.row(b)),
        };
        ComposedRef::new(self.store.row(fg), bg, mode).map(Some)
    }

    /// Ground-truth boxes for evaluation. Every call is counted so training
    /// phases can prove they never looked.
    pub fn gt_boxes(&self, image: usize) -> &[Window] {
        self.gt_reads.fetch_add(1, Ordering::Relaxed);
        &self.bags[image].gt_boxes
    }

    /// Ground truth that training may use: only for fully supervised bags.
    pub fn supervised_gt(&self, image: usize) -> Option<&[Window]> {
        let bag = &self.bags[image];
        (bag.supervision == Supervision::Full).then_some(bag.gt_boxes.as_slice())
    }

    pub fn gt_read_count(&self) -> usize {
        self.gt_reads.load(Ordering::Relaxed)
    }

    /// Candidate window closest (by IoU) to the full image minus `margin`;
    /// ties go to the lowest index.
    pub fn initial_window_index(&self, image: usize, margin: f64) -> Result<usize> {
        let target = initial_window(margin)?;
        Ok(best_match(&self.bags[image].windows, &target).unwrap_or(0))
    }

    /// Copy of the dataset with the supervision flag of `image` replaced.
    pub fn with_supervision(&self, flags: &[(usize, Supervision)]) -> Result<Dataset> {
        let mut bags = self.bags.clone();
        for &(i, s) in flags {
            let bag = &mut bags[i];
            if s == Supervision::Full && bag.gt_boxes.is_empty() {
                return Err(Error::Format(format!("image {} has no ground truth to supervise with", bag.id)));
            }
            bag.supervision = s;
        }
        Dataset::new(bags, self.store.clone())
    }

    /// Drops candidate windows closer than `margin` to the border.
    pub fn margin_filtered(&self, margin: f64) -> Result<Dataset> {
        initial_window(margin)?;
        let mut bags = self.bags.clone();
        for bag in &mut bags {
            let keep: Vec<bool> = bag.windows.iter().map(|w| w.respects_margin(margin)).collect();
            let mut k = keep.iter();
            bag.windows.retain(|_| *k.next().unwrap());
            let mut k = keep.iter();
            bag.features.retain(|_| *k.next().unwrap());
            if bag.is_positive() && bag.windows.is_empty() {
                return Err(Error::Format(format!("positive image {} has no window within the margin", bag.id)));
            }
        }
        Dataset::new(bags, self.store.clone())
    }

    pub fn to_manifest(&self, features_file: &str) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            features: Some(features_file.to_string()),
            images: self
                .bags
                .iter()
                .map(|b| ManifestImage {
                    id: b.id.clone(),
                    label: b.label,
                    supervision: b.supervision,
                    width: None,
                    height: None,
                    windows: b
                        .windows
                        .iter()
                        .zip(&b.features)
                        .map(|(w, f)| ManifestWindow { bbox: w.to_array(), refs: *f })
                        .collect(),
                    gt_boxes: b.gt_boxes.iter().map(|w| w.to_array()).collect(),
                    edge_groups: b.edge_groups.clone(),
                })
                .collect(),
        }
    }

    /// Writes `manifest.json` style output to `manifest_path` plus the
    /// feature sidecar next to it.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let manifest = self.to_manifest(DEFAULT_FEATURES_FILE);
        fs::write(manifest_path, manifest.to_json_bytes()?)?;
        let f = fs::File::create(dir.join(DEFAULT_FEATURES_FILE))?;
        let mut w = BufWriter::new(f);
        self.store.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read(manifest_path)?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let sidecar: PathBuf = dir.join(manifest.features.as_deref().unwrap_or(DEFAULT_FEATURES_FILE));
        let f = fs::File::open(&sidecar)?;
        let store = FeatureStore::read_from(std::io::BufReader::new(f))?;
        manifest.into_dataset(store)
    }

    /// SHA-256 over the canonical manifest and the feature rows.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_manifest(DEFAULT_FEATURES_FILE).to_json_bytes()?);
        h.update(self.store.to_bytes());
        Ok(hex::encode(h.finalize()))
    }
}

/// Index of the window with largest IoU to `target`, lowest index on ties.
pub fn best_match(windows: &[Window], target: &Window) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in windows.iter().enumerate() {
        let o = iou(w, target);
        if best.map_or(true, |(_, b)| o > b) {
            best = Some((i, o));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: ImageId,
    pub label: Label,
    #[serde(default)]
    pub supervision: Supervision,
    /// Image size in pixels; when given, all boxes are pixel coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub windows: Vec<ManifestWindow>,
    #[serde(default)]
    pub gt_boxes: Vec<[f64; 4]>,
    #[serde(default)]
    pub edge_groups: Vec<EdgeGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestWindow {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(flatten)]
    pub refs: WindowFeatures,
}

impl Manifest {
    /// Pretty-printed JSON with sorted keys.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let v = serde_json::to_value(self)?;
        let mut out = serde_json::to_vec_pretty(&v)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn into_dataset(self, store: FeatureStore) -> Result<Dataset> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", self.version)));
        }
        let mut bags = Vec::with_capacity(self.images.len());
        for img in self.images {
            let scale = match (img.width, img.height) {
                (Some(w), Some(h)) if w > 0.0 && h > 0.0 => Some((w, h)),
                (None, None) => None,
                _ => return Err(Error::Format(format!("image {}: width and height must both be positive", img.id))),
            };
            let conv = |b: [f64; 4]| match scale {
                Some((w, h)) => Window::from_pixels(b, w, h),
                None => Window::from_array(b),
            };
            let windows = img.windows.iter().map(|w| conv(w.bbox)).collect::<Result<Vec<_>>>()?;
            let features = img.windows.iter().map(|w| w.refs).collect();
            let gts = img.gt_boxes.iter().map(|b| conv(*b)).collect::<Result<Vec<_>>>()?;
            let mut groups = img.edge_groups;
            if let Some((w, h)) = scale {
                for g in &mut groups {
                    for p in &mut g.points {
                        p[0] /= w;
                        p[1] /= h;
                    }
                }
            }
            for g in &groups {
                g.validate()?;
            }
            bags.push(Bag::new(img.id, img.label, img.supervision, windows, features, gts, groups)?);
        }
        Dataset::new(bags, store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        let mut store = FeatureStore::new(3);
        for i in 0..6 {
            store.push(&[i as f32, 1.0, -0.5]).unwrap();
        }
        let w = |a: f64, b: f64| Window::new(a, a, b, b).unwrap();
        let refs = |i: usize| WindowFeatures { fg: i, bg: None, fg_flip: None, bg_flip: None };
        let pos = Bag::new(
            "p0".into(),
            Label::Positive,
            Supervision::Weak,
            vec![w(0.1, 0.5), w(0.04, 0.96), w(0.0, 0.3)],
            vec![refs(0), refs(1), refs(2)],
            vec![w(0.1, 0.5)],
            vec![],
        )
        .unwrap();
        let neg = Bag::new(
            "n0".into(),
            Label::Negative,
            Supervision::Weak,
            vec![w(0.2, 0.6), w(0.04, 0.96), w(0.3, 0.9)],
            vec![refs(3), refs(4), refs(5)],
            vec![],
            vec![],
        )
        .unwrap();
        Dataset::new(vec![pos, neg], store).unwrap()
    }

    #[test]
    fn manifest_round_trip_and_hash() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back.bags(), ds.bags());
        assert_eq!(back.store(), ds.store());
        assert_eq!(back.content_hash().unwrap(), ds.content_hash().unwrap());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"box\""));
        assert!(text.find("\"images\"").unwrap() > text.find("\"features\"").unwrap());
    }

    #[test]
    fn milf_layout_is_bit_exact() {
        let store = FeatureStore::from_rows(2, vec![1.0, -2.5, 0.0, 3.25]).unwrap();
        let bytes = store.to_bytes();
        assert_eq!(&bytes[..4], b"MILF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), -2.5);
        assert_eq!(bytes.len(), 20 + 16);
        assert!(FeatureStore::read_from(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureStore::read_from(&bad[..]).is_err());
    }

    #[test]
    fn pixel_boxes_are_normalized() {
        let json = r#"{"version":1,"images":[{"id":"a","label":"positive","width":200,"height":100,
            "windows":[{"box":[20,10,180,90],"fg":0}],"gt_boxes":[[0,0,100,50]],
            "edge_groups":[{"contour_id":0,"strength":1.0,"points":[[20,10],[40,10]]}]}]}"#;
        let m: Manifest = serde_json::from_str(json).unwrap();
        let ds = m.into_dataset(FeatureStore::from_rows(2, vec![0.0, 1.0]).unwrap()).unwrap();
        let b = ds.bag(0);
        assert_eq!(b.windows[0].to_array(), [0.1, 0.1, 0.9, 0.9]);
        assert_eq!(ds.gt_boxes(0)[0].to_array(), [0.0, 0.0, 0.5, 0.5]);
        assert_eq!(b.edge_groups[0].points[1], [0.2, 0.1]);
    }

    #[test]
    fn rejects_bad_refs() {
        let mut m = tiny().to_manifest("x");
        m.images[0].windows[0].refs.fg = 99;
        assert!(m.into_dataset(FeatureStore::from_rows(3, vec![0.0; 18]).unwrap()).is_err());
    }

    #[test]
    fn gt_reads_are_counted() {
        let ds = tiny();
        assert_eq!(ds.gt_read_count(), 0);
        assert!(ds.supervised_gt(0).is_none());
        let _ = ds.gt_boxes(0);
        assert_eq!(ds.gt_read_count(), 1);
    }

    #[test]
    fn initial_window_lookup() {
        let ds = tiny();
        assert_eq!(ds.initial_window_index(0, 0.04).unwrap(), 1);
        let filtered = ds.margin_filtered(0.04).unwrap();
        assert_eq!(filtered.bag(0).windows.len(), 2);
        assert_eq!(filtered.bag(0).features[1].fg, 1);
    }

    proptest! {
        #[test]
        fn milf_round_trip(dim in 1usize..8, rows in proptest::collection::vec(-1e6f32..1e6, 0..64)) {
            let n = rows.len() / dim * dim;
            let store = FeatureStore::from_rows(dim, rows[..n].to_vec()).unwrap();
            let back = FeatureStore::read_from(&store.to_bytes()[..]).unwrap();
            prop_assert_eq!(back, store);
        }
    }
}
