//! Datasets: synthetic generators, IDX and CSV loaders, splitting, label
//! noise, and mini-batch iteration.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples, one row of `features` per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("Dataset::new"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: format!("{}[{tag}]", self.provenance),
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Isotropic Gaussian clusters around centres drawn uniformly from
/// `[-5, 5]^dim`. Samples are laid out class by class.
pub fn gen_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("blob counts must be >= 1".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n_per_class * num_classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for (class, centre) in centres.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in centre {
                data.push(c + spread * gaussian(&mut rng));
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::new(labels.len(), dim, data)?,
        labels,
        num_classes,
        format!("blobs(n_per_class={n_per_class},classes={num_classes},dim={dim},spread={spread},seed={seed})"),
    )
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Two interleaving half circles: class 0 on the upper unit half circle,
/// class 1 on the lower one shifted to `(1, 0.5)`, plus Gaussian jitter of
/// standard deviation `noise`.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let angle = |i: usize, count: usize| {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        data.push(t.cos() + noise * gaussian(&mut rng));
        data.push(t.sin() + noise * gaussian(&mut rng));
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        data.push(1.0 - t.cos() + noise * gaussian(&mut rng));
        data.push(0.5 - t.sin() + noise * gaussian(&mut rng));
        labels.push(1);
    }
    Dataset::new(
        Matrix::new(n, 2, data)?,
        labels,
        2,
        format!("two_moons(n={n},noise={noise},seed={seed})"),
    )
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| Error::TruncatedFile {
        path: path.to_path_buf(),
        expected: header + len,
        found: bytes.len(),
    })
}

/// Loads an IDX image/label pair (the MNIST layout). Pixels are scaled by
/// 1/255; `num_classes` is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip)?;
    let labels = fs::read(lp)?;

    check_magic(&images, IDX_IMAGES_MAGIC, ip)?;
    let count = read_be_u32(&images, 4, ip)? as usize;
    let rows = read_be_u32(&images, 8, ip)? as usize;
    let cols = read_be_u32(&images, 12, ip)? as usize;
    let pixels = body(&images, 16, count * rows * cols, ip)?;

    check_magic(&labels, IDX_LABELS_MAGIC, lp)?;
    let label_count = read_be_u32(&labels, 4, lp)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let label_bytes = body(&labels, 8, label_count, lp)?;

    let features = Matrix::new(
        count,
        rows * cols,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(
        features,
        labels,
        num_classes,
        format!("idx({},{})", ip.display(), lp.display()),
    )
}

/// Numeric CSV rows, skipping `#` comment lines. A first row that does not
/// parse as numbers is treated as a header. Row and column numbers in errors
/// are 1-based file positions.
pub fn read_numeric_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(c, field)| field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(c))
            .collect();
        match parsed {
            Ok(values) => {
                let expected = *width.get_or_insert(values.len());
                if expected != values.len() {
                    return Err(Error::Parse {
                        row: line,
                        col: values.len().min(expected) + 1,
                        msg: format!("expected {expected} fields, found {}", values.len()),
                    });
                }
                rows.push(values);
            }
            Err(_) if i == 0 => continue,
            Err(c) => {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("not a finite number: {:?}", &record[c]),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 1,
            col: 1,
            msg: "no numeric rows".into(),
        });
    }
    Ok(rows)
}

/// Reads a numeric CSV as a matrix (see [`read_numeric_csv`]).
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    Matrix::from_rows(&read_numeric_csv(path)?)
}

/// Loads a numeric CSV, taking column `label_column` (0-based) as the class
/// index and the remaining columns as features.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let rows = read_numeric_csv(path)?;
    let width = rows[0].len();
    if label_column >= width {
        return Err(Error::Parse {
            row: 1,
            col: label_column + 1,
            msg: format!("label column {label_column} out of range for {width} columns"),
        });
    }
    let mut data = Vec::with_capacity(rows.len() * (width - 1));
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let v = row[label_column];
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::NonIntegerLabel {
                row: i + 1,
                col: label_column,
                value: v.to_string(),
            });
        }
        labels.push(v as usize);
        data.extend(
            row.iter()
                .enumerate()
                .filter(|&(c, _)| c != label_column)
                .map(|(_, &x)| x),
        );
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(
        Matrix::new(rows.len(), width - 1, data)?,
        labels,
        num_classes,
        format!("csv({},label={label_column})", path.display()),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded permutation followed by contiguous train/val/test slices.
///
/// Validation and test sizes are `round(fraction · N)`; train takes the
/// rest. A positive fraction that rounds to an empty slice is an error.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be >= 0, got {fractions:?}"
        )));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let n = ds.len();
    let n_val = (fv * n as f64).round() as usize;
    let n_test = (fs * n as f64).round() as usize;
    let n_train = n.checked_sub(n_val + n_test).ok_or_else(|| {
        Error::InvalidArgument("split slices exceed dataset size".into())
    })?;
    for (name, f, count) in [("train", ft, n_train), ("val", fv, n_val), ("test", fs, n_test)] {
        if f > 0.0 && count == 0 {
            return Err(Error::InvalidArgument(format!(
                "{name} fraction {f} leaves an empty slice of {n} samples"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok(Split {
        train: ds.subset(train, "train"),
        val: ds.subset(val, "val"),
        test: ds.subset(test, "test"),
    })
}

/// Replaces exactly `⌊rate · N⌋` labels, chosen without replacement, with a
/// uniformly drawn different class. Returns a new dataset.
pub fn inject_label_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate must be in [0, 1], got {rate}")));
    }
    let flips = (rate * ds.len() as f64).floor() as usize;
    if flips == 0 {
        return Ok(ds.clone());
    }
    if ds.num_classes < 2 {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for i in index::sample(&mut rng, ds.len(), flips) {
        let old = out.labels[i];
        let draw = rng.random_range(0..ds.num_classes - 1);
        out.labels[i] = if draw >= old { draw + 1 } else { draw };
    }
    out.provenance = format!("{}+noise({rate},seed={seed})", ds.provenance);
    Ok(out)
}

/// Epoch permutation derived from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled mini-batches for one epoch; the last batch may be partial.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    Ok(Batches {
        ds,
        order: epoch_order(ds.len(), seed, epoch),
        batch_size,
        cursor: 0,
    })
}

#[derive(Debug)]
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Matrix, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        Some((
            self.ds.features.select_rows(idx),
            idx.iter().map(|&i| self.ds.labels[i]).collect(),
        ))
    }
}
