//! Binary checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "CRNNCKPT"
//! version   u16
//! digest    u64      FNV-1a of the config text below
//! config    u32 length + UTF-8 canonical config text
//! step      u64      training steps taken
//! params    u32 count + records
//! optimizer u32 count + records (may be zero)
//!
//! record: u16 name length, name, u8 rank, rank × u32 extents, f32 payload
//! ```
//!
//! Parameter records cover every trainable tensor plus the running
//! batch-norm statistics (`bnK.running_mean`, `bnK.running_var`).

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::autodiff::RunningStats;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRNNCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Decoded contents of a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Vec<(String, Tensor)>,
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes a model with its step counter and optional optimizer slots.
pub fn encode(model: &Model, step: u64, optimizer: &[(String, Tensor)]) -> Vec<u8> {
    let text = model.config().to_text();
    let mut out = Vec::with_capacity(model.num_parameters() * 4 + 4096);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.config().digest().to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    let mut records: Vec<(String, Tensor)> =
        model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    for (name, stats) in model.bn_names().iter().zip(model.running_stats()) {
        let c = stats.channels();
        records.push((format!("{name}.running_mean"), Tensor::new(&[c], stats.mean.clone()).expect("shape")));
        records.push((format!("{name}.running_var"), Tensor::new(&[c], stats.var.clone()).expect("shape")));
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in &records {
        put_record(&mut out, name, t);
    }
    out.extend_from_slice(&(optimizer.len() as u32).to_le_bytes());
    for (name, t) in optimizer {
        put_record(&mut out, name, t);
    }
    out
}

pub fn write_checkpoint(path: &Path, model: &Model, step: u64, optimizer: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(model, step, optimizer);
    let mut file = std::fs::File::create(path).map_err(|e| Error::storage(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::storage(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let len = self.u16("record name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "record name")?)
            .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?
            .to_string();
        let rank = self.u8("record rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("record extents")? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            CheckpointError::Malformed(format!("{name}: extents overflow"))
        })?;
        let payload = self.take(count.saturating_mul(4), "record payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Parameter {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        Ok((name, t))
    }
}

/// Parses checkpoint bytes, verifying magic, version and config digest.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes };
    if bytes.len() < CHECKPOINT_MAGIC.len() {
        return Err(CheckpointError::Truncated("magic"));
    }
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest = r.u64("digest")?;
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config text")?)
        .map_err(|_| CheckpointError::Malformed("config text is not UTF-8".into()))?;
    let (config, rest) =
        ModelConfig::from_text(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if !rest.is_empty() || config.digest() != digest {
        return Err(CheckpointError::Digest {
            found: digest,
            expected: config.digest(),
        });
    }
    let step = r.u64("step")?;
    let n = r.u32("parameter count")?;
    let params = (0..n).map(|_| r.record()).collect::<Result<Vec<_>, _>>()?;
    let n = r.u32("optimizer count")?;
    let optimizer = (0..n).map(|_| r.record()).collect::<Result<Vec<_>, _>>()?;
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.bytes.len())));
    }
    Ok(Checkpoint {
        config,
        step,
        params,
        optimizer,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::storage(path, e))?;
    Ok(decode(&bytes)?)
}

impl Model {
    /// Rebuilds a model from checkpoint contents; every parameter must appear
    /// exactly once with the configured shape.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::build(&ckpt.config, 0)?;
        let mut filled = vec![false; model.params.len()];
        let mut stats = model.running.clone();
        let mut stats_seen = vec![[false; 2]; stats.len()];
        let param_err = |name: &str, reason: &str| {
            Error::from(CheckpointError::Parameter {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        for (name, t) in &ckpt.params {
            if let Some(id) = model.params.find(name) {
                if std::mem::replace(&mut filled[id.0], true) {
                    return Err(param_err(name, "appears twice"));
                }
                if model.params.get(id).shape() != t.shape() {
                    return Err(param_err(
                        name,
                        &format!("shape {:?}, expected {:?}", t.shape(), model.params.get(id).shape()),
                    ));
                }
                *model.params.get_mut(id) = t.clone();
                continue;
            }
            let slot = name
                .rsplit_once('.')
                .and_then(|(bn, field)| Some((model.bn_names.iter().position(|n| n == bn)?, field)));
            match slot {
                Some((i, field @ ("running_mean" | "running_var"))) => {
                    if t.shape() != [stats[i].channels()] {
                        return Err(param_err(name, "wrong channel count"));
                    }
                    let which = usize::from(field == "running_var");
                    if std::mem::replace(&mut stats_seen[i][which], true) {
                        return Err(param_err(name, "appears twice"));
                    }
                    if which == 0 {
                        stats[i].mean = t.data().to_vec();
                    } else {
                        stats[i].var = t.data().to_vec();
                    }
                }
                _ => return Err(param_err(name, "not part of this model")),
            }
        }
        if let Some(i) = filled.iter().position(|f| !f) {
            return Err(param_err(model.params.name(crate::layers::ParamId(i)), "missing"));
        }
        if stats_seen.iter().any(|s| !(s[0] && s[1])) {
            return Err(param_err("running statistics", "missing"));
        }
        model.running = stats
            .into_iter()
            .map(|s| RunningStats::from_parts(s.mean, s.var))
            .collect();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, self, 0, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }

    /// Loads a checkpoint that must have been written for `config`.
    pub fn load_for(path: &Path, config: &ModelConfig) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        if ckpt.config.digest() != config.digest() {
            return Err(CheckpointError::Digest {
                found: ckpt.config.digest(),
                expected: config.digest(),
            }
            .into());
        }
        Self::from_checkpoint(&ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::Alphabet;

    fn toy() -> Model {
        Model::build(&ModelConfig::toy(Alphabet::digits()), 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact_at_single_precision() {
        let model = toy();
        let slots = vec![("adadelta.sq_grad/proj.bias".to_string(), Tensor::full(&[11], 0.25))];
        let bytes = encode(&model, 17, &slots);
        let ckpt = decode(&bytes).unwrap();
        assert_eq!(ckpt.step, 17);
        assert_eq!(ckpt.optimizer, slots);
        let back = Model::from_checkpoint(&ckpt).unwrap();
        for ((n1, a), (n2, b)) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(n1, n2);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        // a second trip is bit-identical
        assert_eq!(encode(&back, 17, &slots), bytes);
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let bytes = encode(&toy(), 0, &[]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode(&bad), Err(CheckpointError::Version { found: 9, .. })));
        let mut bad = bytes.clone();
        bad[10] ^= 1;
        assert!(matches!(decode(&bad), Err(CheckpointError::Digest { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(decode(&bytes[..4]), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn load_for_other_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        toy().save(&path).unwrap();
        assert!(Model::load(&path).is_ok());
        let other = ModelConfig::toy(Alphabet::alphanumeric());
        assert!(matches!(
            Model::load_for(&path, &other),
            Err(Error::Checkpoint(CheckpointError::Digest { .. }))
        ));
    }
}
