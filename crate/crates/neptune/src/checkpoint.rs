//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  "NPTN" (4 bytes)
//! version u16 (currently 1)
//! d, k, |E|, |R| as u64
//! activation u8 (0 identity, 1 relu, 2 tanh), batch_norm u8
//! config: lr, lr_decay f64; epochs, batch_size u64; dropout x3,
//!         label_smoothing f64; seed u64; adam beta1, beta2, eps f64;
//!         valid_every u64; keep_best u8
//! bn hyperparams: input momentum/epsilon, hidden momentum/epsilon f64
//! entity_vocab_crc u32, relation_vocab_crc u32
//! f64 arrays: entity_emb, relation_emb, core,
//!             bn_input  (scale, shift, running_mean, running_var),
//!             bn_hidden (scale, shift, running_mean, running_var),
//!             adam first moments  (entity, relation, core, 4 bn vectors),
//!             adam second moments (same order)
//! adam step u64
//! crc32 u32 over every preceding byte
//! ```
//!
//! A load never yields partial state: magic, version, length, and checksum
//! are all verified before any parameter is returned.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::data::KnowledgeGraph;
use crate::model::{Activation, BatchNormState, ModelParams};
use crate::tensor::{Matrix, Tensor3};
use crate::train::{AdamState, GradientSet, TrainConfig};

const MAGIC: &[u8; 4] = b"NPTN";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint file is truncated (expected {expected} bytes, found {found})")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CorruptChecksum { stored: u32, computed: u32 },
    #[error("checkpoint {field} = {found} does not match dataset ({expected})")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint vocabulary checksum does not match this dataset")]
    VocabMismatch,
    #[error("checkpoint field {field} has an invalid value")]
    InvalidField { field: &'static str },
}

/// A fully loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub entity_vocab_crc: u32,
    pub relation_vocab_crc: u32,
}

impl Checkpoint {
    /// Verify that the checkpoint belongs to this dataset: dimensions first,
    /// then the vocabulary checksums.
    pub fn validate_against(&self, g: &KnowledgeGraph) -> Result<(), CheckpointError> {
        let checks = [
            ("entity count", g.num_entities(), self.params.num_entities()),
            (
                "relation count",
                g.num_relations(),
                self.params.num_relations(),
            ),
        ];
        for (field, expected, found) in checks {
            if expected != found {
                return Err(CheckpointError::DimensionMismatch {
                    field,
                    expected,
                    found,
                });
            }
        }
        if self.entity_vocab_crc != g.entity_vocab_crc()
            || self.relation_vocab_crc != g.relation_vocab_crc()
        {
            return Err(CheckpointError::VocabMismatch);
        }
        Ok(())
    }
}

/// `io::Write` adapter that feeds everything through a CRC32 hasher.
struct CrcWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    }
}

fn activation_from_code(c: u8) -> Result<Activation, CheckpointError> {
    match c {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Tanh),
        _ => Err(CheckpointError::InvalidField {
            field: "activation",
        }),
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

/// Serialize params, optimizer state, config, and vocabulary checksums.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    adam: &AdamState,
    cfg: &TrainConfig,
    g: &KnowledgeGraph,
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = CrcWriter::new(io::BufWriter::new(file));

    (|| -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(params.entity_dim() as u64)?;
        w.write_u64::<LittleEndian>(params.relation_dim() as u64)?;
        w.write_u64::<LittleEndian>(params.num_entities() as u64)?;
        w.write_u64::<LittleEndian>(params.num_relations() as u64)?;
        w.write_u8(activation_code(cfg.activation))?;
        w.write_u8(cfg.batch_norm as u8)?;
        w.write_f64::<LittleEndian>(cfg.lr)?;
        w.write_f64::<LittleEndian>(cfg.lr_decay)?;
        w.write_u64::<LittleEndian>(cfg.epochs as u64)?;
        w.write_u64::<LittleEndian>(cfg.batch_size as u64)?;
        w.write_f64::<LittleEndian>(cfg.dropout.0)?;
        w.write_f64::<LittleEndian>(cfg.dropout.1)?;
        w.write_f64::<LittleEndian>(cfg.dropout.2)?;
        w.write_f64::<LittleEndian>(cfg.label_smoothing)?;
        w.write_u64::<LittleEndian>(cfg.seed)?;
        w.write_f64::<LittleEndian>(cfg.adam_beta1)?;
        w.write_f64::<LittleEndian>(cfg.adam_beta2)?;
        w.write_f64::<LittleEndian>(cfg.adam_eps)?;
        w.write_u64::<LittleEndian>(cfg.valid_every as u64)?;
        w.write_u8(cfg.keep_best as u8)?;
        w.write_f64::<LittleEndian>(params.bn_input.momentum)?;
        w.write_f64::<LittleEndian>(params.bn_input.epsilon)?;
        w.write_f64::<LittleEndian>(params.bn_hidden.momentum)?;
        w.write_f64::<LittleEndian>(params.bn_hidden.epsilon)?;
        w.write_u32::<LittleEndian>(g.entity_vocab_crc())?;
        w.write_u32::<LittleEndian>(g.relation_vocab_crc())?;

        write_f64s(&mut w, params.entity_emb.data())?;
        write_f64s(&mut w, params.relation_emb.data())?;
        write_f64s(&mut w, params.core.data())?;
        for bn in [&params.bn_input, &params.bn_hidden] {
            write_f64s(&mut w, &bn.scale)?;
            write_f64s(&mut w, &bn.shift)?;
            write_f64s(&mut w, &bn.running_mean)?;
            write_f64s(&mut w, &bn.running_var)?;
        }
        for moments in [&adam.m, &adam.v] {
            write_f64s(&mut w, moments.entity_emb.data())?;
            write_f64s(&mut w, moments.relation_emb.data())?;
            write_f64s(&mut w, moments.core.data())?;
            write_f64s(&mut w, &moments.bn_input_scale)?;
            write_f64s(&mut w, &moments.bn_input_shift)?;
            write_f64s(&mut w, &moments.bn_hidden_scale)?;
            write_f64s(&mut w, &moments.bn_hidden_shift)?;
        }
        w.write_u64::<LittleEndian>(adam.step)?;
        Ok(())
    })()
    .map_err(io_err)?;

    let crc = w.hasher.clone().finalize();
    let mut inner = w.inner;
    inner.write_u32::<LittleEndian>(crc).map_err(io_err)?;
    inner.flush().map_err(io_err)?;
    Ok(())
}

/// Byte count of the body (everything before the trailing CRC32) for the
/// given dimensions. Saturating so garbage dimensions from a corrupt file
/// produce a length mismatch rather than an arithmetic overflow.
fn expected_body_len(d: usize, k: usize, num_entities: usize, num_relations: usize) -> usize {
    // magic, version, 4 dims, activation + batch_norm bytes, 13 eight-byte
    // config fields, keep_best byte, 4 bn hyperparams, 2 vocab crcs.
    let header: usize = 4 + 2 + 4 * 8 + 2 + 13 * 8 + 1 + 4 * 8 + 2 * 4;
    let dense = (num_entities.saturating_mul(d))
        .saturating_add(num_relations.saturating_mul(k))
        .saturating_add(d.saturating_mul(k).saturating_mul(d));
    // Params carry 8 bn vectors (scale/shift/running stats per layer);
    // each moment set carries 4 (scale/shift gradients only).
    let body_f64s = dense.saturating_mul(3).saturating_add(d.saturating_mul(16));
    header
        .saturating_add(body_f64s.saturating_mul(8))
        .saturating_add(8)
}

fn read_f64s(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Load and fully verify a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    // Magic and version come first so a foreign or future file is reported
    // as such rather than as truncation.
    let min_prefix = 6 + 4 * 8;
    if bytes.len() < min_prefix {
        return Err(CheckpointError::Truncated {
            expected: min_prefix,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }

    let mut r = io::Cursor::new(&bytes[..]);
    r.set_position(6);
    let d = r.read_u64::<LittleEndian>().unwrap() as usize;
    let k = r.read_u64::<LittleEndian>().unwrap() as usize;
    let num_entities = r.read_u64::<LittleEndian>().unwrap() as usize;
    let num_relations = r.read_u64::<LittleEndian>().unwrap() as usize;
    if d == 0 || k == 0 || num_entities == 0 || num_relations == 0 {
        return Err(CheckpointError::InvalidField {
            field: "dimensions",
        });
    }

    let body_len = expected_body_len(d, k, num_entities, num_relations);
    let total_len = body_len.saturating_add(4);
    if bytes.len() != total_len {
        return Err(CheckpointError::Truncated {
            expected: total_len,
            found: bytes.len(),
        });
    }
    let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed_crc = crc32fast::hash(&bytes[..body_len]);
    if stored_crc != computed_crc {
        return Err(CheckpointError::CorruptChecksum {
            stored: stored_crc,
            computed: computed_crc,
        });
    }

    // Length and checksum are verified, so reads below cannot hit EOF.
    let activation = activation_from_code(r.read_u8().unwrap())?;
    let batch_norm = r.read_u8().unwrap() != 0;
    let lr = r.read_f64::<LittleEndian>().unwrap();
    let lr_decay = r.read_f64::<LittleEndian>().unwrap();
    let epochs = r.read_u64::<LittleEndian>().unwrap() as usize;
    let batch_size = r.read_u64::<LittleEndian>().unwrap() as usize;
    let dropout = (
        r.read_f64::<LittleEndian>().unwrap(),
        r.read_f64::<LittleEndian>().unwrap(),
        r.read_f64::<LittleEndian>().unwrap(),
    );
    let label_smoothing = r.read_f64::<LittleEndian>().unwrap();
    let seed = r.read_u64::<LittleEndian>().unwrap();
    let adam_beta1 = r.read_f64::<LittleEndian>().unwrap();
    let adam_beta2 = r.read_f64::<LittleEndian>().unwrap();
    let adam_eps = r.read_f64::<LittleEndian>().unwrap();
    let valid_every = r.read_u64::<LittleEndian>().unwrap() as usize;
    let keep_best = r.read_u8().unwrap() != 0;
    let bn_in_momentum = r.read_f64::<LittleEndian>().unwrap();
    let bn_in_epsilon = r.read_f64::<LittleEndian>().unwrap();
    let bn_hid_momentum = r.read_f64::<LittleEndian>().unwrap();
    let bn_hid_epsilon = r.read_f64::<LittleEndian>().unwrap();
    let entity_vocab_crc = r.read_u32::<LittleEndian>().unwrap();
    let relation_vocab_crc = r.read_u32::<LittleEndian>().unwrap();

    let entity_emb = Matrix::from_vec(num_entities, d, read_f64s(&mut r, num_entities * d).unwrap());
    let relation_emb =
        Matrix::from_vec(num_relations, k, read_f64s(&mut r, num_relations * k).unwrap());
    let core = Tensor3::from_vec(d, k, d, read_f64s(&mut r, d * k * d).unwrap());
    let mut read_bn = |momentum: f64, epsilon: f64| BatchNormState {
        scale: read_f64s(&mut r, d).unwrap(),
        shift: read_f64s(&mut r, d).unwrap(),
        running_mean: read_f64s(&mut r, d).unwrap(),
        running_var: read_f64s(&mut r, d).unwrap(),
        momentum,
        epsilon,
    };
    let bn_input = read_bn(bn_in_momentum, bn_in_epsilon);
    let bn_hidden = read_bn(bn_hid_momentum, bn_hid_epsilon);
    let params = ModelParams::from_parts(entity_emb, relation_emb, core, bn_input, bn_hidden);

    let read_moments = |r: &mut io::Cursor<&[u8]>| GradientSet {
        entity_emb: Matrix::from_vec(num_entities, d, read_f64s(r, num_entities * d).unwrap()),
        relation_emb: Matrix::from_vec(num_relations, k, read_f64s(r, num_relations * k).unwrap()),
        core: Tensor3::from_vec(d, k, d, read_f64s(r, d * k * d).unwrap()),
        bn_input_scale: read_f64s(r, d).unwrap(),
        bn_input_shift: read_f64s(r, d).unwrap(),
        bn_hidden_scale: read_f64s(r, d).unwrap(),
        bn_hidden_shift: read_f64s(r, d).unwrap(),
    };
    let m = read_moments(&mut r);
    let v = read_moments(&mut r);
    let step = r.read_u64::<LittleEndian>().unwrap();

    Ok(Checkpoint {
        params,
        adam: AdamState { m, v, step },
        config: TrainConfig {
            d,
            k,
            lr,
            lr_decay,
            epochs,
            batch_size,
            dropout,
            label_smoothing,
            activation,
            batch_norm,
            seed,
            adam_beta1,
            adam_beta2,
            adam_eps,
            valid_every,
            keep_best,
        },
        entity_vocab_crc,
        relation_vocab_crc,
    })
}
