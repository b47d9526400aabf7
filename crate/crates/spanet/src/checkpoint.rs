//! Binary checkpoints.
//!
//! Layout, all integers little-endian u32:
//! `SPANET01`, the eleven configuration fields, the tensor count, then per
//! tensor its name length, name bytes, rank, dims and the values as
//! little-endian f32. Parameters are trained in f64 and rounded on save.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::SpaNetConfig;
use crate::layers::Params;
use crate::model::SpaNetModel;
use crate::{Result, SpaNetError};

pub const MAGIC: &[u8; 8] = b"SPANET01";

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value does not fit in u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| SpaNetError::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn config_fields(c: &SpaNetConfig) -> [usize; 11] {
    [
        c.image_side,
        c.patch_side,
        c.heads,
        c.layers,
        c.token_dim,
        c.ff_hidden,
        c.branch_out,
        c.superpixel_k,
        c.superpixel_feat,
        c.head_hidden,
        usize::from(c.superpixel_encoding),
    ]
}

pub fn write_checkpoint<W: Write>(model: &SpaNetModel, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for v in config_fields(model.config()) {
        put_u32(&mut w, v)?;
    }
    let shapes = model.param_shapes();
    put_u32(&mut w, shapes.len())?;
    let mut result = Ok(());
    model.visit("", &mut |name, shape, data| {
        if result.is_err() {
            return;
        }
        result = (|| {
            put_u32(&mut w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(&mut w, shape.len())?;
            for &d in shape {
                put_u32(&mut w, d)?;
            }
            for &v in data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            Ok(())
        })();
    });
    result
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SpaNetModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| SpaNetError::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(SpaNetError::CheckpointVersion(
            String::from_utf8_lossy(&magic).into_owned(),
        ));
    }
    let mut f = [0usize; 11];
    for v in f.iter_mut() {
        *v = get_u32(&mut r)?;
    }
    let config = SpaNetConfig {
        image_side: f[0],
        patch_side: f[1],
        heads: f[2],
        layers: f[3],
        token_dim: f[4],
        ff_hidden: f[5],
        branch_out: f[6],
        superpixel_k: f[7],
        superpixel_feat: f[8],
        head_hidden: f[9],
        superpixel_encoding: f[10] != 0,
    };
    let mut model = SpaNetModel::zeros(config)?;
    let expected = model.param_shapes();
    let count = get_u32(&mut r)?;
    if count != expected.len() {
        return Err(SpaNetError::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| SpaNetError::Checkpoint(format!("truncated file: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| SpaNetError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank)
            .map(|_| get_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(SpaNetError::Checkpoint(format!(
                "tensor `{name}` {shape:?} where `{want_name}` {want_shape:?} was expected"
            )));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| SpaNetError::Checkpoint(format!("truncated tensor `{name}`: {e}")))?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push(values);
    }
    let mut it = tensors.into_iter();
    model.visit_mut("", &mut |_, p| {
        p.copy_from_slice(&it.next().expect("count checked"))
    });
    if !model.is_finite() {
        return Err(SpaNetError::NonFinite("checkpoint parameters".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SpaNetModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| SpaNetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write_checkpoint(model, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SpaNetModel> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| SpaNetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_checkpoint(std::io::BufReader::new(f))
}
