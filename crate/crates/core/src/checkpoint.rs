//! Versioned binary checkpoints.
//!
//! ```text
//! magic      8 bytes   "NCMCKPT1"
//! version    u32 LE
//! hdr_len    u32 LE
//! header     hdr_len bytes of UTF-8 text
//! payload    f32 LE values, tensors in directory order
//! crc        u32 LE, CRC-32 of header + payload
//! ```
//!
//! The header is a sequence of sections, each opened by a `[name]` line:
//!
//! ```text
//! [config]            key=value lines for every ModelConfig field
//! [schedule]          optional; key=value lines for the TrainSchedule
//! [optimizer]         optional; epsilon=<f64>
//! [vocab] N           followed by exactly N token lines, ids 0..N
//! [tensors] K         followed by K lines "name<TAB>d0,d1<TAB>offset"
//! ```
//!
//! Offsets count f32 elements from the start of the payload. Tensor names
//! follow `ModelConfig::tensor_shapes`; optimizer accumulators repeat the
//! same list with an `adagrad.` prefix. Floats in the header use Rust's
//! shortest round-trip formatting, so every value reads back exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModelConfig, ModelParams};
use crate::text::{TextError, Vocabulary};
use crate::train::{OptimizerKind, OptimizerState, TrainSchedule};

pub const MAGIC: &[u8; 8] = b"NCMCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;
const ACC_PREFIX: &str = "adagrad.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unrecognized format: bad magic bytes")]
    UnrecognizedFormat,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("header line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub schedule: Option<TrainSchedule>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, vocab: Vocabulary, params: ModelParams<f32>) -> Self {
        Checkpoint {
            config,
            vocab,
            params,
            optimizer: None,
            schedule: None,
        }
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        let bad = |m: String| Err(CheckpointError::Inconsistent(m));
        self.config.validate().or_else(|e| bad(e.to_string()))?;
        if self.vocab.len() != self.config.vocab_size {
            return bad(format!(
                "config vocab_size is {} but the vocabulary has {} entries",
                self.config.vocab_size,
                self.vocab.len()
            ));
        }
        self.params
            .check_shapes(&self.config)
            .or_else(|e| bad(e.to_string()))?;
        if let Some(acc) = self
            .optimizer
            .as_ref()
            .and_then(|o| o.accumulators.as_ref())
        {
            acc.check_shapes(&self.config)
                .or_else(|e| bad(format!("optimizer accumulators: {e}")))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        self.validate()?;
        Ok(self.encode())
    }

    fn encode(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for ((name, t), (_, dims)) in self.params.tensors().into_iter().zip(self.params.shapes()) {
            tensors.push((name, dims, t));
        }
        let acc = self
            .optimizer
            .as_ref()
            .and_then(|o| o.accumulators.as_ref());
        if let Some(acc) = acc {
            for ((name, t), (_, dims)) in acc.tensors().into_iter().zip(acc.shapes()) {
                tensors.push((format!("{ACC_PREFIX}{name}"), dims, t));
            }
        }

        let mut header = String::new();
        let c = &self.config;
        header.push_str("[config]\n");
        for (k, v) in [
            ("vocab_size", c.vocab_size.to_string()),
            ("embedding_size", c.embedding_size.to_string()),
            ("hidden_size", c.hidden_size.to_string()),
            ("num_layers", c.num_layers.to_string()),
            ("projection_size", c.projection_size.to_string()),
            ("seed", c.seed.to_string()),
            ("reverse_input", c.reverse_input.to_string()),
        ] {
            let _ = writeln!(header, "{k}={v}");
        }
        if let Some(s) = &self.schedule {
            header.push_str("[schedule]\n");
            let patience = s.patience.map_or("none".to_string(), |p| p.to_string());
            for (k, v) in [
                ("optimizer", s.optimizer.name().to_string()),
                ("learning_rate", s.learning_rate.to_string()),
                ("clip_threshold", s.clip_threshold.to_string()),
                ("epochs", s.epochs.to_string()),
                ("batch_size", s.batch_size.to_string()),
                ("shuffle_seed", s.shuffle_seed.to_string()),
                ("lr_halving", s.lr_halving.to_string()),
                ("patience", patience),
            ] {
                let _ = writeln!(header, "{k}={v}");
            }
        }
        if let Some(o) = &self.optimizer {
            let _ = writeln!(header, "[optimizer]\nepsilon={}", o.epsilon);
        }
        let _ = writeln!(header, "[vocab] {}", self.vocab.len());
        for w in self.vocab.words() {
            let _ = writeln!(header, "{w}");
        }
        let _ = writeln!(header, "[tensors] {}", tensors.len());
        let mut offset = 0;
        for (name, dims, t) in &tensors {
            let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "{name}\t{}\t{offset}", dims.join(","));
            offset += t.len();
        }

        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 4 * offset + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, _, t) in &tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[PREFIX_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::UnrecognizedFormat);
        }
        if bytes.len() < PREFIX_LEN + 4 {
            return Err(CheckpointError::Truncated {
                expected: PREFIX_LEN + 4,
                found: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < PREFIX_LEN + header_len + 4 {
            return Err(CheckpointError::Truncated {
                expected: PREFIX_LEN + header_len + 4,
                found: bytes.len(),
            });
        }
        let body = &bytes[PREFIX_LEN..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        let header =
            std::str::from_utf8(&body[..header_len]).map_err(|e| CheckpointError::Header {
                line: 0,
                reason: e.to_string(),
            })?;
        let parsed = parse_header(header)?;
        let payload = &body[header_len..];

        let total: usize = parsed
            .tensors
            .iter()
            .map(|t| t.dims.iter().product::<usize>())
            .sum();
        if payload.len() != 4 * total {
            return Err(CheckpointError::Truncated {
                expected: PREFIX_LEN + header_len + 4 * total + 4,
                found: bytes.len(),
            });
        }
        let config = parsed.config;
        if parsed.vocab.len() != config.vocab_size {
            return Err(CheckpointError::Inconsistent(format!(
                "config vocab_size is {} but the vocabulary has {} entries",
                config.vocab_size,
                parsed.vocab.len()
            )));
        }
        let vocab = Vocabulary::parse(&parsed.vocab.join("\n"))
            .map_err(|e: TextError| CheckpointError::Inconsistent(format!("vocabulary: {e}")))?;

        let expected = config.tensor_shapes();
        let has_acc = parsed.tensors.len() == 2 * expected.len();
        if parsed.tensors.len() != expected.len() && !has_acc {
            return Err(CheckpointError::Inconsistent(format!(
                "directory lists {} tensors, config implies {}",
                parsed.tensors.len(),
                expected.len()
            )));
        }
        if has_acc != parsed.epsilon.is_some() {
            return Err(CheckpointError::Inconsistent(
                "optimizer section and accumulator tensors must appear together".into(),
            ));
        }
        let mut offset = 0;
        for (i, entry) in parsed.tensors.iter().enumerate() {
            let (name, dims) = &expected[i % expected.len()];
            let name = if i < expected.len() {
                name.clone()
            } else {
                format!("{ACC_PREFIX}{name}")
            };
            if entry.name != name || &entry.dims != dims {
                return Err(CheckpointError::Inconsistent(format!(
                    "tensor {i} is {} {:?}, config implies {name} {dims:?}",
                    entry.name, entry.dims
                )));
            }
            if entry.offset != offset {
                return Err(CheckpointError::Inconsistent(format!(
                    "tensor {} starts at {}, expected {offset}",
                    entry.name, entry.offset
                )));
            }
            offset += dims.iter().product::<usize>();
        }

        let mut values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut fill = |p: &mut ModelParams<f32>| {
            for (_, t) in p.tensors_mut() {
                for (slot, v) in t.iter_mut().zip(values.by_ref()) {
                    *slot = v;
                }
            }
        };
        let mut params = ModelParams::zeros(&config)
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
        fill(&mut params);
        let optimizer = parsed.epsilon.map(|epsilon| {
            let mut acc = params.zeros_like();
            fill(&mut acc);
            OptimizerState {
                accumulators: Some(acc),
                epsilon,
            }
        });
        if let Some(name) = params.first_non_finite() {
            return Err(CheckpointError::Inconsistent(format!(
                "non-finite values in {name}"
            )));
        }
        Ok(Checkpoint {
            config,
            vocab,
            params,
            optimizer,
            schedule: parsed.schedule,
        })
    }
}

/// Writes to a temporary file in the target directory, then renames it
/// over `path`.
pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = checkpoint.to_bytes()?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CheckpointError::Io(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
}

struct Header {
    config: ModelConfig,
    schedule: Option<TrainSchedule>,
    epsilon: Option<f64>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn parse_header(text: &str) -> Result<Header, CheckpointError> {
    let lines: Vec<&str> = text.split('\n').collect();
    if lines.last() != Some(&"") {
        return Err(CheckpointError::Header {
            line: lines.len(),
            reason: "header must end with a newline".into(),
        });
    }
    let lines = &lines[..lines.len() - 1];
    let err = |line: usize, reason: String| CheckpointError::Header {
        line: line + 1,
        reason,
    };

    let mut config: Option<Vec<(usize, &str, &str)>> = None;
    let mut schedule: Option<Vec<(usize, &str, &str)>> = None;
    let mut epsilon = None;
    let mut vocab: Option<Vec<String>> = None;
    let mut tensors: Option<Vec<TensorEntry>> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let (section, count) = match line.strip_prefix('[').and_then(|l| l.split_once(']')) {
            Some((s, rest)) => (s, rest.trim()),
            None => return Err(err(i, format!("expected a section, found {line:?}"))),
        };
        let start = i + 1;
        let mut end = start;
        let counted = |c: &str| {
            c.parse::<usize>()
                .map_err(|_| err(i, format!("bad count {c:?}")))
        };
        match section {
            "vocab" | "tensors" => end += counted(count)?,
            _ => {
                while end < lines.len() && !lines[end].starts_with('[') {
                    end += 1;
                }
            }
        }
        if end > lines.len() {
            return Err(err(i, format!("section [{section}] runs past the header")));
        }
        let body = &lines[start..end];
        let kv = || -> Result<Vec<(usize, &str, &str)>, CheckpointError> {
            body.iter()
                .enumerate()
                .map(|(j, l)| {
                    l.split_once('=')
                        .map(|(k, v)| (start + j, k, v))
                        .ok_or_else(|| err(start + j, format!("expected key=value, found {l:?}")))
                })
                .collect()
        };
        let duplicate = || err(i, format!("duplicate section [{section}]"));
        match section {
            "config" if config.is_none() => config = Some(kv()?),
            "schedule" if schedule.is_none() => schedule = Some(kv()?),
            "optimizer" if epsilon.is_none() => {
                let mut eps = None;
                for (l, k, v) in kv()? {
                    match k {
                        "epsilon" => eps = Some(parse_num::<f64>(v).map_err(|r| err(l, r))?),
                        _ => return Err(err(l, format!("unknown optimizer key {k:?}"))),
                    }
                }
                epsilon = Some(eps.ok_or_else(|| err(i, "missing epsilon".into()))?);
            }
            "vocab" if vocab.is_none() => {
                vocab = Some(body.iter().map(|s| s.to_string()).collect())
            }
            "tensors" if tensors.is_none() => {
                let mut entries = Vec::new();
                for (j, l) in body.iter().enumerate() {
                    let fields: Vec<&str> = l.split('\t').collect();
                    let [name, dims, offset] = fields[..] else {
                        return Err(err(
                            start + j,
                            format!("expected 3 tab-separated fields in {l:?}"),
                        ));
                    };
                    let dims = dims
                        .split(',')
                        .map(parse_num::<usize>)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|r| err(start + j, r))?;
                    entries.push(TensorEntry {
                        name: name.to_string(),
                        dims,
                        offset: parse_num(offset).map_err(|r| err(start + j, r))?,
                    });
                }
                tensors = Some(entries);
            }
            "config" | "schedule" | "optimizer" | "vocab" | "tensors" => return Err(duplicate()),
            _ => return Err(err(i, format!("unknown section [{section}]"))),
        }
        i = end;
    }

    let missing = |s: &str| err(lines.len(), format!("missing section [{s}]"));
    let config = parse_config(&config.ok_or_else(|| missing("config"))?, &err)?;
    let schedule = schedule.map(|s| parse_schedule(&s, &err)).transpose()?;
    Ok(Header {
        config,
        schedule,
        epsilon,
        vocab: vocab.ok_or_else(|| missing("vocab"))?,
        tensors: tensors.ok_or_else(|| missing("tensors"))?,
    })
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format!("{s:?}: {e}"))
}

type KeyValues<'a> = [(usize, &'a str, &'a str)];

fn lookup<T: std::str::FromStr>(
    kv: &KeyValues,
    key: &str,
    err: &dyn Fn(usize, String) -> CheckpointError,
) -> Result<T, CheckpointError>
where
    T::Err: std::fmt::Display,
{
    let mut hits = kv.iter().filter(|(_, k, _)| *k == key);
    match (hits.next(), hits.next()) {
        (Some(&(line, _, v)), None) => parse_num(v).map_err(|r| err(line, format!("{key}: {r}"))),
        (Some(&(line, _, _)), Some(_)) => Err(err(line, format!("duplicate key {key}"))),
        (None, _) => Err(err(0, format!("missing key {key}"))),
    }
}

fn check_keys(
    kv: &KeyValues,
    known: &[&str],
    err: &dyn Fn(usize, String) -> CheckpointError,
) -> Result<(), CheckpointError> {
    match kv.iter().find(|(_, k, _)| !known.contains(k)) {
        Some(&(line, k, _)) => Err(err(line, format!("unknown key {k:?}"))),
        None => Ok(()),
    }
}

fn parse_config(
    kv: &KeyValues,
    err: &dyn Fn(usize, String) -> CheckpointError,
) -> Result<ModelConfig, CheckpointError> {
    check_keys(
        kv,
        &[
            "vocab_size",
            "embedding_size",
            "hidden_size",
            "num_layers",
            "projection_size",
            "seed",
            "reverse_input",
        ],
        err,
    )?;
    Ok(ModelConfig {
        vocab_size: lookup(kv, "vocab_size", err)?,
        embedding_size: lookup(kv, "embedding_size", err)?,
        hidden_size: lookup(kv, "hidden_size", err)?,
        num_layers: lookup(kv, "num_layers", err)?,
        projection_size: lookup(kv, "projection_size", err)?,
        seed: lookup(kv, "seed", err)?,
        reverse_input: lookup(kv, "reverse_input", err)?,
    })
}

fn parse_schedule(
    kv: &KeyValues,
    err: &dyn Fn(usize, String) -> CheckpointError,
) -> Result<TrainSchedule, CheckpointError> {
    check_keys(
        kv,
        &[
            "optimizer",
            "learning_rate",
            "clip_threshold",
            "epochs",
            "batch_size",
            "shuffle_seed",
            "lr_halving",
            "patience",
        ],
        err,
    )?;
    let name: String = lookup(kv, "optimizer", err)?;
    let optimizer =
        OptimizerKind::parse(&name).ok_or_else(|| err(0, format!("unknown optimizer {name:?}")))?;
    let patience: String = lookup(kv, "patience", err)?;
    let patience = match patience.as_str() {
        "none" => None,
        p => Some(parse_num(p).map_err(|r| err(0, format!("patience: {r}")))?),
    };
    Ok(TrainSchedule {
        optimizer,
        learning_rate: lookup(kv, "learning_rate", err)?,
        clip_threshold: lookup(kv, "clip_threshold", err)?,
        epochs: lookup(kv, "epochs", err)?,
        batch_size: lookup(kv, "batch_size", err)?,
        shuffle_seed: lookup(kv, "shuffle_seed", err)?,
        lr_halving: lookup(kv, "lr_halving", err)?,
        patience,
    })
}
