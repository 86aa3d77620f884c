//! Dataset ingestion (IDX images, numeric CSV), synthetic blob generation,
//! and normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::sample_standard_normal;
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An in-memory dataset: feature rows, optional image geometry, optional
/// ground-truth labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// (height, width, channels) when rows are flattened images.
    pub image_shape: Option<(usize, usize, usize)>,
    pub truth: Option<Vec<i64>>,
    pub name: String,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Appends another dataset with identical feature width; truth labels
    /// are kept only when both sides carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features() != other.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "feature widths {} vs {}",
                self.n_features(),
                other.n_features()
            )));
        }
        let mut features = Array2::zeros((self.n_samples() + other.n_samples(), self.n_features()));
        for (i, row) in self
            .features
            .rows()
            .into_iter()
            .chain(other.features.rows())
            .enumerate()
        {
            features.row_mut(i).assign(&row);
        }
        let truth = match (&self.truth, &other.truth) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Dataset {
            features,
            image_shape: self.image_shape,
            truth,
            name: self.name.clone(),
        })
    }

    /// Writes features (and truth labels, when present, as a final integer
    /// column) as a plain CSV. Floats use the shortest round-trip form, so
    /// a reload reproduces them bit-exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut line = String::new();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v}"));
            }
            if let Some(truth) = &self.truth {
                line.push_str(&format!(",{}", truth[i]));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses big-endian IDX image (and optionally label) files. Pixels are
/// scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let mut reader = BufReader::new(File::open(images_path)?);
    let magic = reader.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = reader.read_u32::<BigEndian>()? as usize;
    let height = reader.read_u32::<BigEndian>()? as usize;
    let width = reader.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; n * height * width];
    reader.read_exact(&mut pixels).map_err(|e| {
        Error::Format(format!("truncated image payload in {}: {e}", images_path.display()))
    })?;
    // Reject trailing garbage as well as truncation.
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(Error::Format(format!(
            "trailing bytes after {n} images in {}",
            images_path.display()
        )));
    }
    let features = Array2::from_shape_vec(
        (n, height * width),
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape follows from header");

    let truth = match labels_path {
        Some(path) => {
            let mut reader = BufReader::new(File::open(path)?);
            let magic = reader.read_u32::<BigEndian>()?;
            if magic != IDX_LABELS_MAGIC {
                return Err(Error::Format(format!(
                    "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
                )));
            }
            let n_labels = reader.read_u32::<BigEndian>()? as usize;
            if n_labels != n {
                return Err(Error::Format(format!(
                    "{n} images but {n_labels} labels"
                )));
            }
            let mut bytes = vec![0u8; n_labels];
            reader.read_exact(&mut bytes).map_err(|e| {
                Error::Format(format!("truncated label payload in {}: {e}", path.display()))
            })?;
            Some(bytes.into_iter().map(|b| b as i64).collect())
        }
        None => None,
    };

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(Dataset {
        features,
        image_shape: Some((height, width, 1)),
        truth,
        name,
    })
}

/// Loads a rectangular numeric CSV. Each feature column is min-max
/// normalized to [0, 1]; constant columns map to 0. With
/// `has_label_column`, the final column is read as integer truth labels.
pub fn load_csv(path: &Path, has_label_column: bool) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut truth: Vec<i64> = Vec::new();
    let mut width = None;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Format(format!(
                    "ragged row at line {}: {} cells, expected {w}",
                    line_no + 1,
                    cells.len()
                )));
            }
            _ => {}
        }
        let feature_cells = if has_label_column {
            if cells.len() < 2 {
                return Err(Error::Format(
                    "label column requested but rows have a single cell".into(),
                ));
            }
            let label_cell = cells[cells.len() - 1];
            truth.push(label_cell.trim().parse::<i64>().map_err(|_| {
                Error::Format(format!(
                    "non-integer label {label_cell:?} at line {}",
                    line_no + 1
                ))
            })?);
            &cells[..cells.len() - 1]
        } else {
            &cells[..]
        };
        let mut row = Vec::with_capacity(feature_cells.len());
        for cell in feature_cells {
            row.push(cell.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!("non-numeric cell {cell:?} at line {}", line_no + 1))
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let d = rows[0].len();
    let mut features = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    min_max_normalize(&mut features);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(Dataset {
        features,
        image_shape: None,
        truth: if has_label_column { Some(truth) } else { None },
        name,
    })
}

/// Per-feature min-max scaling to [0, 1]; constant features map to 0.
pub fn min_max_normalize(features: &mut Array2<f64>) {
    for mut col in features.columns_mut() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        if range > 0.0 {
            col.mapv_inplace(|v| (v - lo) / range);
        } else {
            col.fill(0.0);
        }
    }
}

/// Synthetic Gaussian blob settings.
#[derive(Debug, Clone, Copy)]
pub struct BlobSpec {
    pub k: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Centers are drawn uniformly from [-center_box, center_box]^dim.
    pub center_box: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Generates `k` isotropic Gaussian clusters with uniformly drawn centers
/// and attached truth labels. Samples of cluster c occupy rows
/// [c*per_cluster, (c+1)*per_cluster).
pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.k == 0 || spec.per_cluster == 0 || spec.dim == 0 {
        return Err(Error::InvalidParam("blob counts must be positive".into()));
    }
    if !spec.sigma.is_finite() || spec.sigma < 0.0 {
        return Err(Error::InvalidParam("sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = Array2::from_shape_fn((spec.k, spec.dim), |_| {
        rng.random_range(-spec.center_box..=spec.center_box)
    });
    let n = spec.k * spec.per_cluster;
    let mut features = Array2::zeros((n, spec.dim));
    let mut truth = Vec::with_capacity(n);
    for c in 0..spec.k {
        for i in 0..spec.per_cluster {
            let row = c * spec.per_cluster + i;
            for j in 0..spec.dim {
                features[[row, j]] =
                    centers[[c, j]] + spec.sigma * sample_standard_normal(&mut rng);
            }
            truth.push(c as i64);
        }
    }
    Ok(Dataset {
        features,
        image_shape: None,
        truth: Some(truth),
        name: format!("blobs-k{}-n{}", spec.k, n),
    })
}
