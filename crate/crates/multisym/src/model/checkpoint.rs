//! `MSEMD1` model checkpoint format.
//!
//! Layout: magic, architecture dimension list, hypothesis tag, group id,
//! seed, then the float32 little-endian weight payload in declaration order
//! (encoder layers, projector, predictor; weights row-major before bias).
//! Weights are f32-representable by construction, so the round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupId};

use super::mlp::{DenseLayer, Mlp};
use super::{ArchSpec, Hypothesis, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MSEMD1";

fn group_byte(id: GroupId) -> u8 {
    match id {
        GroupId::Rot4 => 0,
        GroupId::HalfSwap => 1,
        GroupId::ColorInvert => 2,
    }
}

fn group_from_byte(b: u8) -> Option<GroupId> {
    match b {
        0 => Some(GroupId::Rot4),
        1 => Some(GroupId::HalfSwap),
        2 => Some(GroupId::ColorInvert),
        _ => None,
    }
}

/// Writes a checkpoint; the inverse of [`load_checkpoint`].
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(&display, e));

    write(CHECKPOINT_MAGIC)?;
    let encoder_dims = params.encoder.dims();
    write(&(encoder_dims.len() as u32).to_le_bytes())?;
    for d in &encoder_dims {
        write(&(*d as u32).to_le_bytes())?;
    }
    write(&(params.arch.projection_dim as u32).to_le_bytes())?;
    write(&(params.arch.predictor_hidden.len() as u32).to_le_bytes())?;
    for d in &params.arch.predictor_hidden {
        write(&(*d as u32).to_le_bytes())?;
    }
    write(&(params.predictor.output_dim() as u32).to_le_bytes())?;
    write(&[match params.hypothesis {
        Hypothesis::Invariant => 0u8,
        Hypothesis::Equivariant => 1u8,
    }])?;
    write(&[group_byte(params.group_id)])?;
    write(&params.seed.to_le_bytes())?;
    for mlp in [&params.encoder, &params.projector, &params.predictor] {
        for layer in &mlp.layers {
            for &w in &layer.weights {
                write(&(w as f32).to_le_bytes())?;
            }
            for &b in &layer.bias {
                write(&(b as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&display, e))?;
    let mut offset = 0usize;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
        if *offset + n > bytes.len() {
            return Err(Error::Truncated {
                path: display.clone(),
                expected: (*offset + n) as u64,
                actual: bytes.len() as u64,
            });
        }
        let slice = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(slice)
    };
    let read_u32 = |offset: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(offset, 4)?.try_into().unwrap()))
    };

    let magic = take(&mut offset, 6)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: display.clone(),
            offset: 0,
            reason: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let n_enc = read_u32(&mut offset)? as usize;
    if n_enc < 2 {
        return Err(Error::Format {
            path: display.clone(),
            offset: offset as u64 - 4,
            reason: format!("encoder chain needs at least 2 dims, got {n_enc}"),
        });
    }
    let mut encoder_chain = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        encoder_chain.push(read_u32(&mut offset)? as usize);
    }
    let projection_dim = read_u32(&mut offset)? as usize;
    let n_pred_hidden = read_u32(&mut offset)? as usize;
    let mut predictor_hidden = Vec::with_capacity(n_pred_hidden);
    for _ in 0..n_pred_hidden {
        predictor_hidden.push(read_u32(&mut offset)? as usize);
    }
    let predictor_out = read_u32(&mut offset)? as usize;
    let hypothesis = match take(&mut offset, 1)?[0] {
        0 => Hypothesis::Invariant,
        1 => Hypothesis::Equivariant,
        other => {
            return Err(Error::Format {
                path: display.clone(),
                offset: offset as u64 - 1,
                reason: format!("unknown hypothesis tag {other}"),
            })
        }
    };
    let group_id = group_from_byte(take(&mut offset, 1)?[0]).ok_or_else(|| Error::Format {
        path: display.clone(),
        offset: offset as u64 - 1,
        reason: "unknown group id".to_string(),
    })?;
    let seed = u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap());

    let group = FiniteGroup::new(group_id);
    if predictor_out != group.order() {
        return Err(Error::Format {
            path: display.clone(),
            offset: offset as u64,
            reason: format!(
                "predictor output {predictor_out} does not match group order {}",
                group.order()
            ),
        });
    }

    let arch = ArchSpec {
        input_dim: encoder_chain[0],
        encoder_dims: encoder_chain[1..].to_vec(),
        projection_dim,
        predictor_hidden: predictor_hidden.clone(),
    };

    let repr = arch.repr_dim();
    let mut predictor_chain = vec![repr];
    predictor_chain.extend_from_slice(&predictor_hidden);
    predictor_chain.push(predictor_out);
    let projector_chain = vec![repr, projection_dim];

    let mut read_mlp = |dims: &[usize]| -> Result<Mlp> {
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim * out_dim {
                let raw = take(&mut offset, 4)?;
                weights.push(f32::from_le_bytes(raw.try_into().unwrap()) as f64);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                let raw = take(&mut offset, 4)?;
                bias.push(f32::from_le_bytes(raw.try_into().unwrap()) as f64);
            }
            layers.push(DenseLayer {
                in_dim,
                out_dim,
                weights,
                bias,
            });
        }
        Ok(Mlp { layers })
    };

    let encoder = read_mlp(&encoder_chain)?;
    let projector = read_mlp(&projector_chain)?;
    let predictor = read_mlp(&predictor_chain)?;
    if offset != bytes.len() {
        return Err(Error::Format {
            path: display,
            offset: offset as u64,
            reason: format!("{} trailing bytes after payload", bytes.len() - offset),
        });
    }
    Ok(ModelParams {
        arch,
        hypothesis,
        group_id,
        seed,
        encoder,
        projector,
        predictor,
    })
}
