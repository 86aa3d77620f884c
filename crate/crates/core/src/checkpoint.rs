//! Binary checkpoint format: little-endian, magic "DECS", a format version,
//! then named f64 arrays. Loaders reject unknown versions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::autoencoder::{Activation, Autoencoder, DenseLayer, Mlp};
use crate::error::{Error, Result};
use crate::stability::CentroidSet;

const MAGIC: &[u8; 4] = b"DECS";
const VERSION: u32 = 1;

/// An ordered collection of named n-dimensional f64 arrays.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    arrays: Vec<(String, Vec<u64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
        self.arrays.push((name.into(), dims, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[u64], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, dims, data)| (dims.as_slice(), data.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, dims, data) in &self.arrays {
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.write_all(name.as_bytes())?;
            out.write_u32::<LittleEndian>(dims.len() as u32)?;
            for &d in dims {
                out.write_u64::<LittleEndian>(d)?;
            }
            for &v in data {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?} in {}",
                path.display()
            )));
        }
        let version = reader.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let count = reader.read_u32::<LittleEndian>()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = reader.read_u32::<LittleEndian>()? as usize;
            let mut name_bytes = vec![0u8; name_len];
            reader.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let ndim = reader.read_u32::<LittleEndian>()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(reader.read_u64::<LittleEndian>()?);
            }
            let len = dims.iter().product::<u64>() as usize;
            let mut data = vec![0.0f64; len];
            reader.read_f64_into::<LittleEndian>(&mut data).map_err(|e| {
                Error::Checkpoint(format!("truncated payload for array {name:?}: {e}"))
            })?;
            arrays.push((name, dims, data));
        }
        Ok(Self { arrays })
    }
}

fn push_mlp(ckpt: &mut Checkpoint, prefix: &str, mlp: &Mlp) {
    for (li, layer) in mlp.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        ckpt.push(
            format!("{prefix}.{li}.weight"),
            vec![rows as u64, cols as u64],
            layer.weights.iter().copied().collect(),
        );
        ckpt.push(
            format!("{prefix}.{li}.bias"),
            vec![layer.bias.len() as u64],
            layer.bias.to_vec(),
        );
        let act = match layer.activation {
            Activation::Relu => 0.0,
            Activation::Identity => 1.0,
        };
        ckpt.push(format!("{prefix}.{li}.act"), vec![1], vec![act]);
    }
}

fn read_mlp(ckpt: &Checkpoint, prefix: &str) -> Result<Mlp> {
    let mut layers = Vec::new();
    for li in 0.. {
        let Some((w_dims, w_data)) = ckpt.get(&format!("{prefix}.{li}.weight")) else {
            break;
        };
        if w_dims.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "{prefix}.{li}.weight must be 2-d"
            )));
        }
        let (b_dims, b_data) = ckpt
            .get(&format!("{prefix}.{li}.bias"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{li}.bias")))?;
        if b_dims.len() != 1 || b_dims[0] != w_dims[0] {
            return Err(Error::Checkpoint(format!("{prefix}.{li}.bias shape")));
        }
        let (_, act_data) = ckpt
            .get(&format!("{prefix}.{li}.act"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{li}.act")))?;
        let activation = match act_data.first() {
            Some(&0.0) => Activation::Relu,
            Some(&1.0) => Activation::Identity,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown activation code {other:?}"
                )))
            }
        };
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec(
                (w_dims[0] as usize, w_dims[1] as usize),
                w_data.to_vec(),
            )
            .map_err(|e| Error::Checkpoint(e.to_string()))?,
            bias: Array1::from_vec(b_data.to_vec()),
            activation,
        });
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint(format!("no {prefix} layers found")));
    }
    Mlp::new(layers)
}

/// Serializes the autoencoder (and optionally centroids) into a checkpoint.
pub fn autoencoder_checkpoint(ae: &Autoencoder, centroids: Option<&CentroidSet>) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    push_mlp(&mut ckpt, "enc", &ae.encoder);
    push_mlp(&mut ckpt, "dec", &ae.decoder);
    if let Some(m) = centroids {
        let (k, d) = m.data().dim();
        ckpt.push(
            "centroids",
            vec![k as u64, d as u64],
            m.data().iter().copied().collect(),
        );
    }
    ckpt
}

/// Restores the autoencoder stored in a checkpoint.
pub fn read_autoencoder(ckpt: &Checkpoint) -> Result<Autoencoder> {
    let encoder = read_mlp(ckpt, "enc")?;
    let decoder = read_mlp(ckpt, "dec")?;
    Autoencoder::new(encoder, decoder)
}

/// Restores the centroid array, if the checkpoint carries one.
pub fn read_centroids(ckpt: &Checkpoint) -> Result<Option<CentroidSet>> {
    match ckpt.get("centroids") {
        None => Ok(None),
        Some((dims, data)) => {
            if dims.len() != 2 {
                return Err(Error::Checkpoint("centroids must be 2-d".into()));
            }
            let arr = Array2::from_shape_vec((dims[0] as usize, dims[1] as usize), data.to_vec())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            Ok(Some(CentroidSet::new(arr)?))
        }
    }
}
