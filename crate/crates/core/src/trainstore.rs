//! Balanced per-class training instances and their on-disk store.
//!
//! Selected frame features of one class are concatenated across recordings
//! (ordered by recording identifier) and cut into consecutive blocks of
//! `instance_frames` frames. Each block becomes one feature vector; classes
//! are then subsampled without replacement to a common instance count.
//!
//! Store layout, little-endian throughout:
//!
//! ```text
//! "CHOR" | version u16 | kind u8 | instance_frames u32 | seed u64
//! n_classes u32 | per class: label_len u16, label utf-8, n_instances u32
//! per class, per instance:
//!     histogram: tag u8 (0 = sparse, 1 = dense)
//!         sparse: nnz u32, nnz x (bin u32, mass f32)
//!         dense:  dim x mass f32
//!     summary: 6 x f64
//! crc32 u32 over every preceding byte
//! ```
//!
//! Histogram masses are held at f32 precision once inside a store so that a
//! load reproduces the in-memory store exactly.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    aggregate, FeatureError, FeatureKind, FeatureVector, FrameFeatures, SparseHistogram,
    SUMMARY_DIM,
};

pub const MAGIC: &[u8; 4] = b"CHOR";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_INSTANCE_FRAMES: usize = 100;

const TAG_SPARSE: u8 = 0;
const TAG_DENSE: u8 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a store file (bad magic)")]
    BadMagic,
    #[error("unsupported store version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("store truncated")]
    Truncated,
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("only {available} selected frames, need at least {needed}")]
    InsufficientFrames { available: usize, needed: usize },
    #[error("class {label:?} has {available} blocks, fewer than the target {target}")]
    TargetTooLarge {
        label: String,
        available: usize,
        target: usize,
    },
    #[error("class {0:?} has a different instance count from the others")]
    Unbalanced(String),
    #[error("duplicate class label {0:?}")]
    DuplicateLabel(String),
    #[error("instance of kind {found} in a {expected} store")]
    KindMismatch {
        expected: FeatureKind,
        found: FeatureKind,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense class index into a store's class table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// One recording's selected frames, keyed by recording identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFrames {
    pub recording_id: String,
    pub frames: Vec<FrameFeatures>,
}

/// Concatenate the recordings of one class in identifier order and cut the
/// result into consecutive, non-overlapping blocks of `instance_frames`
/// frames. The remainder shorter than a block is dropped.
pub fn assemble_instances(
    recordings: &[RecordingFrames],
    instance_frames: usize,
) -> Result<Vec<Vec<FrameFeatures>>, StoreError> {
    assert!(instance_frames > 0, "instance_frames must be positive");
    let mut ordered: Vec<&RecordingFrames> = recordings.iter().collect();
    ordered.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    let available: usize = ordered.iter().map(|r| r.frames.len()).sum();
    if available < instance_frames {
        return Err(StoreError::InsufficientFrames {
            available,
            needed: instance_frames,
        });
    }
    let lineup: Vec<FrameFeatures> = ordered
        .into_iter()
        .flat_map(|r| r.frames.iter().copied())
        .collect();
    Ok(lineup
        .chunks_exact(instance_frames)
        .map(<[FrameFeatures]>::to_vec)
        .collect())
}

/// Blocks of a class turned into feature vectors.
pub fn blocks_to_vectors(
    blocks: &[Vec<FrameFeatures>],
    kind: FeatureKind,
) -> Result<Vec<FeatureVector>, StoreError> {
    blocks
        .iter()
        .map(|b| aggregate(b, kind).map_err(StoreError::from))
        .collect()
}

/// Distinct block indices, ascending, drawn without replacement.
pub fn sample_block_indices(available: usize, target: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked = index::sample(&mut rng, available, target).into_vec();
    picked.sort_unstable();
    picked
}

/// Subsample every class to `target` instances (default: the smallest class).
/// Class ids follow the lexicographic order of labels; the sampling stream of
/// each class is derived from `seed` and its class id.
pub fn balance_subsample(
    per_class_blocks: BTreeMap<String, Vec<FeatureVector>>,
    target: Option<usize>,
    seed: u64,
    kind: FeatureKind,
    instance_frames: usize,
) -> Result<TrainingStore, StoreError> {
    let min_available = per_class_blocks.values().map(Vec::len).min().unwrap_or(0);
    let target = target.unwrap_or(min_available);
    let mut classes = Vec::with_capacity(per_class_blocks.len());
    for (ordinal, (label, blocks)) in per_class_blocks.into_iter().enumerate() {
        if blocks.len() < target {
            return Err(StoreError::TargetTooLarge {
                label,
                available: blocks.len(),
                target,
            });
        }
        let picked = sample_block_indices(blocks.len(), target, seed, ordinal as u64);
        let mut slots: Vec<Option<FeatureVector>> = blocks.into_iter().map(Some).collect();
        let chosen = picked
            .into_iter()
            .map(|i| slots[i].take().expect("indices are distinct"))
            .collect();
        classes.push((label, chosen));
    }
    TrainingStore::new(kind, instance_frames, seed, classes)
}

/// Immutable bank of balanced per-class training instances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStore {
    kind: FeatureKind,
    instance_frames: u32,
    seed: u64,
    labels: Vec<String>,
    instances: Vec<Vec<FeatureVector>>,
}

impl TrainingStore {
    /// Build a store from `(label, instances)` pairs in class-id order.
    pub fn new(
        kind: FeatureKind,
        instance_frames: usize,
        seed: u64,
        classes: Vec<(String, Vec<FeatureVector>)>,
    ) -> Result<Self, StoreError> {
        let mut seen = HashSet::new();
        let mut labels = Vec::with_capacity(classes.len());
        let mut instances = Vec::with_capacity(classes.len());
        let expected = classes.first().map(|(_, v)| v.len());
        for (label, vectors) in classes {
            if !seen.insert(label.clone()) {
                return Err(StoreError::DuplicateLabel(label));
            }
            if Some(vectors.len()) != expected {
                return Err(StoreError::Unbalanced(label));
            }
            let vectors = vectors
                .into_iter()
                .map(|v| quantize(v, kind))
                .collect::<Result<Vec<_>, _>>()?;
            labels.push(label);
            instances.push(vectors);
        }
        Ok(Self {
            kind,
            instance_frames: u32::try_from(instance_frames)
                .map_err(|_| StoreError::Corrupt("instance_frames exceeds u32".into()))?,
            seed,
            labels,
            instances,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn instance_frames(&self) -> usize {
        self.instance_frames as usize
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    /// Instances per class (identical for every class).
    pub fn instances_per_class(&self) -> usize {
        self.instances.first().map_or(0, Vec::len)
    }

    pub fn total_instances(&self) -> usize {
        self.instances.iter().map(Vec::len).sum()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, class: ClassId) -> Option<&str> {
        self.labels.get(class.index()).map(String::as_str)
    }

    pub fn class_id(&self, label: &str) -> Option<ClassId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| ClassId(i as u32))
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.labels.len() as u32).map(ClassId)
    }

    pub fn instances(&self, class: ClassId) -> &[FeatureVector] {
        &self.instances[class.index()]
    }

    /// A physically reduced store holding only the classes in `keep`.
    /// Class ids are renumbered densely in ascending order of the old ids.
    pub fn restricted_to(&self, keep: &[ClassId]) -> Self {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        Self {
            kind: self.kind,
            instance_frames: self.instance_frames,
            seed: self.seed,
            labels: keep.iter().map(|c| self.labels[c.index()].clone()).collect(),
            instances: keep.iter().map(|c| self.instances[c.index()].clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.instance_frames.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for (label, inst) in self.labels.iter().zip(&self.instances) {
            let bytes = label.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.extend_from_slice(&(inst.len() as u32).to_le_bytes());
        }
        let dim = self.kind.dim();
        for v in self.instances.iter().flatten() {
            match v {
                FeatureVector::Histogram(h) => {
                    if h.nnz() * 8 <= dim * 4 {
                        out.push(TAG_SPARSE);
                        out.extend_from_slice(&(h.nnz() as u32).to_le_bytes());
                        for (i, m) in h.iter() {
                            out.extend_from_slice(&i.to_le_bytes());
                            out.extend_from_slice(&(m as f32).to_le_bytes());
                        }
                    } else {
                        out.push(TAG_DENSE);
                        for m in h.to_dense() {
                            out.extend_from_slice(&(m as f32).to_le_bytes());
                        }
                    }
                }
                FeatureVector::Summary(s) => {
                    for x in s {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        if bytes.len() < 6 {
            return Err(StoreError::Truncated);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(StoreError::VersionMismatch { found: version });
        }
        if bytes.len() < 4 + 2 + 1 + 4 + 8 + 4 + 4 {
            return Err(StoreError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(StoreError::ChecksumMismatch { stored, computed });
        }

        let mut r = ByteReader { buf: body, pos: 6 };
        let code = r.u8()?;
        let kind = FeatureKind::from_code(code)
            .ok_or_else(|| StoreError::Corrupt(format!("unknown feature kind code {code}")))?;
        let instance_frames = r.u32()?;
        let seed = r.u64()?;
        let n_classes = r.u32()? as usize;
        let mut table = Vec::with_capacity(n_classes.min(1 << 16));
        for _ in 0..n_classes {
            let len = r.u16()? as usize;
            let label = std::str::from_utf8(r.take(len)?)
                .map_err(|e| StoreError::Corrupt(format!("label is not utf-8: {e}")))?
                .to_string();
            let count = r.u32()? as usize;
            table.push((label, count));
        }
        let dim = kind.dim();
        let mut classes = Vec::with_capacity(table.len());
        for (label, count) in table {
            let mut vectors = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                vectors.push(read_instance(&mut r, kind, dim)?);
            }
            classes.push((label, vectors));
        }
        if r.pos != body.len() {
            return Err(StoreError::Corrupt(format!(
                "{} trailing bytes before checksum",
                body.len() - r.pos
            )));
        }
        Self::new(kind, instance_frames as usize, seed, classes)
    }
}

pub fn save_store<W: Write>(store: &TrainingStore, mut sink: W) -> Result<(), StoreError> {
    sink.write_all(&store.to_bytes())?;
    sink.flush()?;
    Ok(())
}

pub fn load_store<R: Read>(mut source: R) -> Result<TrainingStore, StoreError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    TrainingStore::from_bytes(&bytes)
}

fn quantize(v: FeatureVector, kind: FeatureKind) -> Result<FeatureVector, StoreError> {
    if v.kind() != kind {
        return Err(StoreError::KindMismatch {
            expected: kind,
            found: v.kind(),
        });
    }
    Ok(match v {
        FeatureVector::Histogram(mut h) => {
            for m in &mut h.masses {
                *m = f64::from(*m as f32);
            }
            FeatureVector::Histogram(h)
        }
        summary => summary,
    })
}

fn read_instance(
    r: &mut ByteReader<'_>,
    kind: FeatureKind,
    dim: usize,
) -> Result<FeatureVector, StoreError> {
    if !kind.is_histogram() {
        let mut s = [0.0; SUMMARY_DIM];
        for x in &mut s {
            *x = r.f64()?;
        }
        return Ok(FeatureVector::Summary(s));
    }
    let mut indices = Vec::new();
    let mut masses = Vec::new();
    match r.u8()? {
        TAG_SPARSE => {
            let nnz = r.u32()? as usize;
            if nnz > dim {
                return Err(StoreError::Corrupt(format!("{nnz} entries exceed dimension {dim}")));
            }
            for _ in 0..nnz {
                let i = r.u32()?;
                let m = r.f32()?;
                if i as usize >= dim || indices.last().is_some_and(|&prev| prev >= i) {
                    return Err(StoreError::Corrupt(format!("bad bin index {i}")));
                }
                indices.push(i);
                masses.push(f64::from(m));
            }
        }
        TAG_DENSE => {
            for i in 0..dim {
                let m = r.f32()?;
                if m != 0.0 {
                    indices.push(i as u32);
                    masses.push(f64::from(m));
                }
            }
        }
        tag => return Err(StoreError::Corrupt(format!("unknown instance tag {tag}"))),
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(StoreError::Corrupt("negative or non-finite mass".into()));
    }
    Ok(FeatureVector::Histogram(SparseHistogram {
        kind,
        indices,
        masses,
    }))
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(StoreError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32, StoreError> {
        self.array().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, StoreError> {
        self.array().map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::aggregate_histogram;
    use proptest::prelude::*;

    fn frame(mode: f64) -> FrameFeatures {
        FrameFeatures {
            f_mean: mode,
            f_std: 100.0,
            f_mode: mode,
            delta_f_mode: Some(0.0),
        }
    }

    fn recording(id: &str, n: usize, tag: f64) -> RecordingFrames {
        RecordingFrames {
            recording_id: id.into(),
            frames: (0..n).map(|i| frame(tag + i as f64)).collect(),
        }
    }

    fn point_mass(kind: FeatureKind, bin: u32) -> FeatureVector {
        FeatureVector::Histogram(SparseHistogram {
            kind,
            indices: vec![bin],
            masses: vec![1.0],
        })
    }

    #[test]
    fn emberiza_arithmetic() {
        let blocks = assemble_instances(&[recording("a", 1830, 1000.0)], 100).unwrap();
        assert_eq!(blocks.len(), 18);
        assert!(blocks.iter().all(|b| b.len() == 100));
    }

    #[test]
    fn exact_single_block() {
        assert_eq!(assemble_instances(&[recording("a", 100, 0.0)], 100).unwrap().len(), 1);
    }

    #[test]
    fn blocks_span_recordings_in_id_order() {
        // Given out of order on purpose: "r1" (150 frames) precedes "r2" (100).
        let recs = [recording("r2", 100, 5000.0), recording("r1", 150, 1000.0)];
        let blocks = assemble_instances(&recs, 100).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0][0].f_mode, 1000.0);
        assert_eq!(blocks[0][99].f_mode, 1099.0);
        assert_eq!(blocks[1][0].f_mode, 1100.0);
        assert_eq!(blocks[1][49].f_mode, 1149.0);
        assert_eq!(blocks[1][50].f_mode, 5000.0);
        assert_eq!(blocks[1][99].f_mode, 5049.0);
    }

    #[test]
    fn too_few_frames() {
        let err = assemble_instances(&[recording("a", 60, 0.0), recording("b", 39, 0.0)], 100)
            .unwrap_err();
        assert!(matches!(
            err,
            StoreError::InsufficientFrames {
                available: 99,
                needed: 100
            }
        ));
    }

    fn blocks_of(n: usize, base: u32) -> Vec<FeatureVector> {
        (0..n).map(|i| point_mass(FeatureKind::Mode1d, (base + i as u32) % 100)).collect()
    }

    #[test]
    fn balance_to_smallest_class() {
        let mut m = BTreeMap::new();
        m.insert("c".to_string(), blocks_of(500, 0));
        m.insert("a".to_string(), blocks_of(18, 0));
        m.insert("b".to_string(), blocks_of(40, 0));
        let store = balance_subsample(m, None, 7, FeatureKind::Mode1d, 100).unwrap();
        assert_eq!(store.labels(), ["a", "b", "c"]);
        assert_eq!(store.instances_per_class(), 18);
        assert!(store.class_ids().all(|c| store.instances(c).len() == 18));
    }

    #[test]
    fn full_target_is_identity() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), blocks_of(20, 3));
        m.insert("y".to_string(), blocks_of(20, 50));
        let store = balance_subsample(m.clone(), Some(20), 1, FeatureKind::Mode1d, 100).unwrap();
        for (c, (_, blocks)) in store.class_ids().zip(m) {
            assert_eq!(store.instances(c), &blocks[..]);
        }
    }

    #[test]
    fn two_hundred_target() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), blocks_of(250, 0));
        m.insert("y".to_string(), blocks_of(1035, 0));
        let store = balance_subsample(m, Some(200), 1, FeatureKind::Mode1d, 100).unwrap();
        assert_eq!(store.instances_per_class(), 200);
    }

    #[test]
    fn target_too_large() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), blocks_of(18, 0));
        assert!(matches!(
            balance_subsample(m, Some(19), 1, FeatureKind::Mode1d, 100),
            Err(StoreError::TargetTooLarge { available: 18, target: 19, .. })
        ));
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_block_indices(500, 18, 42, 0);
        assert_eq!(a, sample_block_indices(500, 18, 42, 0));
        assert_ne!(a, sample_block_indices(500, 18, 43, 0));
        assert_ne!(a, sample_block_indices(500, 18, 42, 1));
    }

    #[test]
    fn empty_store_round_trips() {
        let store = TrainingStore::new(FeatureKind::ModeDelta2d, 100, 9, vec![]).unwrap();
        let bytes = store.to_bytes();
        assert_eq!(bytes.len(), 4 + 2 + 1 + 4 + 8 + 4 + 4);
        assert_eq!(TrainingStore::from_bytes(&bytes).unwrap(), store);
    }

    #[test]
    fn rejects_corruption() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), blocks_of(3, 0));
        let store = balance_subsample(m, None, 1, FeatureKind::Mode1d, 100).unwrap();
        let bytes = store.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TrainingStore::from_bytes(&bad), Err(StoreError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            TrainingStore::from_bytes(&bad),
            Err(StoreError::VersionMismatch { found: 9 })
        ));

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(
            TrainingStore::from_bytes(&bad),
            Err(StoreError::ChecksumMismatch { .. })
        ));

        assert!(TrainingStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn mixed_kinds_rejected() {
        let classes = vec![("a".to_string(), vec![point_mass(FeatureKind::MeanStd2d, 3)])];
        assert!(matches!(
            TrainingStore::new(FeatureKind::Mode1d, 100, 0, classes),
            Err(StoreError::KindMismatch { .. })
        ));
    }

    #[test]
    fn unbalanced_and_duplicate_rejected() {
        let classes = vec![
            ("a".to_string(), blocks_of(2, 0)),
            ("b".to_string(), blocks_of(3, 0)),
        ];
        assert!(matches!(
            TrainingStore::new(FeatureKind::Mode1d, 100, 0, classes),
            Err(StoreError::Unbalanced(_))
        ));
        let classes = vec![
            ("a".to_string(), blocks_of(2, 0)),
            ("a".to_string(), blocks_of(2, 0)),
        ];
        assert!(matches!(
            TrainingStore::new(FeatureKind::Mode1d, 100, 0, classes),
            Err(StoreError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn dense_encoding_used_for_busy_histograms() {
        let feats: Vec<FrameFeatures> = (0..100).map(|i| frame(1000.0 + 90.0 * i as f64 + 1.0)).collect();
        let v = aggregate_histogram(&feats, FeatureKind::Mode1d).unwrap();
        assert_eq!(v.as_histogram().unwrap().nnz(), 100);
        let store = TrainingStore::new(FeatureKind::Mode1d, 100, 0, vec![("a".into(), vec![v])]).unwrap();
        let bytes = store.to_bytes();
        // header 23 + label (2 + 1 + 4) + tag 1 + 100 x f32 + crc 4
        assert_eq!(bytes.len(), 23 + 7 + 1 + 400 + 4);
        assert_eq!(TrainingStore::from_bytes(&bytes).unwrap(), store);
    }

    fn arb_histogram(kind: FeatureKind) -> impl Strategy<Value = FeatureVector> {
        prop::collection::btree_map(0u32..kind.dim() as u32, 1u32..20, 1..120).prop_map(move |m| {
            let total: u32 = m.values().sum();
            FeatureVector::Histogram(SparseHistogram {
                kind,
                indices: m.keys().copied().collect(),
                masses: m.values().map(|&c| f64::from(c) / f64::from(total)).collect(),
            })
        })
    }

    fn arb_store() -> impl Strategy<Value = TrainingStore> {
        (
            prop::sample::select(FeatureKind::ALL.to_vec()),
            1usize..5,
            0usize..4,
            any::<u64>(),
        )
            .prop_flat_map(|(kind, n_classes, per_class, seed)| {
                let inst = if kind.is_histogram() {
                    arb_histogram(kind).boxed()
                } else {
                    prop::array::uniform6(-2000.0f64..10000.0)
                        .prop_map(FeatureVector::Summary)
                        .boxed()
                };
                prop::collection::vec(prop::collection::vec(inst, per_class), n_classes).prop_map(
                    move |classes| {
                        let classes = classes
                            .into_iter()
                            .enumerate()
                            .map(|(i, v)| (format!("Species {i} ü"), v))
                            .collect();
                        TrainingStore::new(kind, 100, seed, classes).unwrap()
                    },
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_bit_exact(store in arb_store()) {
            let bytes = store.to_bytes();
            let loaded = TrainingStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&loaded, &store);
            prop_assert_eq!(loaded.to_bytes(), bytes);
        }

        #[test]
        fn sampled_indices_distinct(avail in 1usize..400, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let target = ((avail as f64) * frac) as usize;
            let idx = sample_block_indices(avail, target, seed, 3);
            prop_assert_eq!(idx.len(), target);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < avail));
        }

        #[test]
        fn chunk_conservation(lens in prop::collection::vec(0usize..400, 1..6), block in 1usize..150) {
            let recs: Vec<RecordingFrames> = lens.iter().enumerate()
                .map(|(i, &n)| recording(&format!("r{i}"), n, 0.0)).collect();
            let total: usize = lens.iter().sum();
            match assemble_instances(&recs, block) {
                Ok(blocks) => {
                    prop_assert!(blocks.len() * block <= total);
                    prop_assert!(total < blocks.len() * block + block);
                }
                Err(StoreError::InsufficientFrames { available, .. }) => prop_assert!(available < block),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
