//! Datasets: the labeled ring of Gaussians, strict IDX ingestion, balanced
//! subsets, block-mean downsampling and CSV export.

use std::io::Write;
use std::path::Path;

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    Magic { expected: u32, found: u32 },
    #[error("truncated: need {needed} bytes, have {found}")]
    Length { needed: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    Trailing { extra: usize },
    #[error("dimensions overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("{0}")]
    Contract(String),
    #[error("{file}: {source}")]
    Idx {
        file: &'static str,
        #[source]
        source: IdxError,
    },
    #[error("images file has {images} entries, labels file has {labels}")]
    Consistency { images: usize, labels: usize },
    #[error("class {class} has {have} members, {need} requested")]
    InsufficientClass { class: usize, have: usize, need: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Centers and spread of a ring dataset, in the rescaled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RingGeometry {
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub meta: String,
    pub ring: Option<RingGeometry>,
}

impl Dataset {
    /// Checks range and label invariants.
    pub fn new(samples: Tensor, labels: Vec<usize>, num_classes: usize, meta: impl Into<String>) -> Result<Self> {
        let (n, _) = samples
            .dims2()
            .ok_or_else(|| DataError::Contract(format!("samples must be 2-D, got {:?}", samples.shape())))?;
        if labels.len() != n {
            return Err(DataError::Contract(format!("{n} samples but {} labels", labels.len())));
        }
        if num_classes == 0 {
            return Err(DataError::Contract("num_classes must be positive".into()));
        }
        if let Some(i) = samples.data().iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(DataError::Contract(format!(
                "sample entry {i} = {} outside [-1, 1]",
                samples.data()[i]
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Contract(format!("label {l} >= {num_classes} classes")));
        }
        Ok(Dataset {
            samples,
            labels,
            num_classes,
            meta: meta.into(),
            ring: None,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.samples.shape()[1]
    }

    /// Side length when samples are square images.
    pub fn image_side(&self) -> Option<usize> {
        let d = self.data_dim();
        let s = (d as f64).sqrt().round() as usize;
        (self.ring.is_none() && s * s == d && d > 2).then_some(s)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rows at `indices`, with their labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.data_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.samples.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new([indices.len(), d], data).expect("gather shape"), labels)
    }

    /// `b` rows drawn uniformly with replacement.
    pub fn sample_batch(&self, b: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
        let idx: Vec<usize> = (0..b).map(|_| rng.below(self.len())).collect();
        self.gather(&idx)
    }

    fn subset(&self, indices: &[usize], meta: String) -> Dataset {
        let (samples, labels) = self.gather(indices);
        Dataset {
            samples,
            labels,
            num_classes: self.num_classes,
            meta,
            ring: self.ring.clone(),
        }
    }

    /// Header `label,x0,...,x{d-1}` then one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_samples_csv(&mut w, &self.samples, &self.labels)
    }
}

/// CSV with a `label,x0,...` header; values use Rust's shortest round-trip form.
pub fn write_samples_csv<W: Write>(w: &mut W, samples: &Tensor, labels: &[usize]) -> std::io::Result<()> {
    let d = samples.shape().get(1).copied().unwrap_or(0);
    let mut header = String::from("label");
    for j in 0..d {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for (r, l) in labels.iter().enumerate() {
        let mut line = l.to_string();
        for v in &samples.data()[r * d..(r + 1) * d] {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpec {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    pub n: usize,
    pub labeled: bool,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            modes: 8,
            radius: 2.0,
            std: 0.1,
            n: 500,
            labeled: true,
        }
    }
}

impl RingSpec {
    /// Factor mapping raw coordinates into `[-1, 1]`: the ring plus six
    /// standard deviations fits inside the unit square.
    pub fn scale(&self) -> f64 {
        1.0 / (self.radius + 6.0 * self.std)
    }

    pub fn geometry(&self) -> RingGeometry {
        let s = self.scale();
        let centers = (0..self.modes)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / self.modes as f64;
                [self.radius * a.cos() * s, self.radius * a.sin() * s]
            })
            .collect();
        RingGeometry {
            centers,
            std: self.std * s,
        }
    }
}

/// `n` points from `k` isotropic Gaussians evenly spaced on a circle, rescaled
/// into `[-1, 1]²`. Mode `j` sits at angle `2πj/k`. Unlabeled sets put every
/// point in class 0.
pub fn ring_of_gaussians(spec: RingSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.modes == 0 || spec.std.is_nan() || spec.std < 0.0 || !(spec.radius >= 0.0) {
        return Err(DataError::Contract(format!(
            "ring needs modes >= 1, std >= 0, radius >= 0; got {spec:?}"
        )));
    }
    let geom = spec.geometry();
    let mut data = Vec::with_capacity(spec.n * 2);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let j = rng.below(spec.modes);
        let c = geom.centers[j];
        for v in c {
            data.push((v + geom.std * rng.normal()).clamp(-1.0, 1.0));
        }
        labels.push(if spec.labeled { j } else { 0 });
    }
    let classes = if spec.labeled { spec.modes } else { 1 };
    let meta = format!(
        "ring(k={},radius={},std={},n={},labeled={})",
        spec.modes, spec.radius, spec.std, spec.n, spec.labeled
    );
    let mut ds = Dataset::new(Tensor::new([spec.n, 2], data).expect("ring shape"), labels, classes, meta)?;
    ds.ring = Some(geom);
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Length {
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::Magic { expected, found });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<(), IdxError> {
    let needed = header.checked_add(payload).ok_or(IdxError::Overflow)?;
    match bytes.len().cmp(&needed) {
        std::cmp::Ordering::Less => Err(IdxError::Length {
            needed,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(IdxError::Trailing {
            extra: bytes.len() - needed,
        }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(IdxError::Overflow)?;
    check_payload(bytes, 16, payload)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn encode_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    for v in [IDX_IMAGES_MAGIC, img.count as u32, img.rows as u32, img.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<IdxLabels, IdxError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    Ok(IdxLabels {
        labels: bytes[8..].to_vec(),
    })
}

pub fn encode_idx_labels(lab: &IdxLabels) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + lab.labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(lab.labels.len() as u32).to_be_bytes());
    out.extend_from_slice(&lab.labels);
    out
}

/// Maps pixel `x` to `x / 127.5 - 1`.
pub fn pixel_to_unit(x: u8) -> f64 {
    x as f64 / 127.5 - 1.0
}

/// Decodes and cross-checks an image/label pair.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = decode_idx_images(images).map_err(|source| DataError::Idx { file: "images", source })?;
    let lab = decode_idx_labels(labels).map_err(|source| DataError::Idx { file: "labels", source })?;
    if img.count != lab.labels.len() {
        return Err(DataError::Consistency {
            images: img.count,
            labels: lab.labels.len(),
        });
    }
    let d = img.rows * img.cols;
    if d == 0 {
        return Err(DataError::Contract("images have zero pixels".into()));
    }
    let samples = Tensor::new([img.count, d], img.pixels.iter().map(|&p| pixel_to_unit(p)).collect())
        .map_err(|e| DataError::Contract(e.to_string()))?;
    let labels: Vec<usize> = lab.labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        samples,
        labels,
        classes,
        format!("idx({}x{}x{})", img.count, img.rows, img.cols),
    )
}

/// Reads and decodes an IDX image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| DataError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    dataset_from_idx(&read(images_path)?, &read(labels_path)?)
}

/// Exactly `per_class` members of every class, sampled without replacement
/// and shuffled.
pub fn balanced_subset(ds: &Dataset, per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut picked = Vec::with_capacity(per_class * ds.num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(DataError::InsufficientClass {
                class,
                have: members.len(),
                need: per_class,
            });
        }
        rng.shuffle(members);
        picked.extend_from_slice(&members[..per_class]);
    }
    rng.shuffle(&mut picked);
    Ok(ds.subset(&picked, format!("{} balanced({per_class}/class)", ds.meta)))
}

/// Block-mean pooling of square images from `from_side` to `to_side`, after
/// center-cropping to the largest multiple of `to_side`.
pub fn downsample(ds: &Dataset, from_side: usize, to_side: usize) -> Result<Dataset> {
    if ds.data_dim() != from_side * from_side {
        return Err(DataError::Contract(format!(
            "data_dim {} is not {from_side}²",
            ds.data_dim()
        )));
    }
    if to_side == 0 || to_side > from_side {
        return Err(DataError::Contract(format!("cannot downsample {from_side} to {to_side}")));
    }
    let block = from_side / to_side;
    let offset = (from_side - block * to_side) / 2;
    let area = (block * block) as f64;
    let mut out = Vec::with_capacity(ds.len() * to_side * to_side);
    for r in 0..ds.len() {
        let img = ds.samples.row(r);
        for by in 0..to_side {
            for bx in 0..to_side {
                let mut s = 0.0;
                for y in 0..block {
                    let row = offset + by * block + y;
                    let start = row * from_side + offset + bx * block;
                    s += img[start..start + block].iter().sum::<f64>();
                }
                out.push((s / area).clamp(-1.0, 1.0));
            }
        }
    }
    let samples = Tensor::new([ds.len(), to_side * to_side], out).expect("downsample shape");
    let meta = format!("{} down({from_side}->{to_side})", ds.meta);
    Dataset::new(samples, ds.labels.clone(), ds.num_classes, meta)
}
