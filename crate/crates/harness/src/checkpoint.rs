//! Versioned binary checkpoints.
//!
//! Layout: magic `DNCK`, version as u32 LE, config block (u32 LE length +
//! the flat key=value text), then one record per named tensor — parameters
//! in visit order, normalization buffers, optimizer state, epoch counter.
//! A record is `name_len u32 | name bytes | rank u32 | extents u32… |
//! payload f32 LE`. Everything is written byte-exactly, so identical
//! training runs produce identical files and a load reproduces evaluation
//! logits bitwise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dndfn_core::network::ModelParams;
use dndfn_core::numerics::{OptimizerState, ParamVisitor};
use dndfn_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;

const MAGIC: &[u8; 4] = b"DNCK";
const VERSION: u32 = 1;

pub struct LoadedCheckpoint {
    pub config: TrainConfig,
    pub model: ModelParams<f32>,
    pub optim: OptimizerState<f32>,
    pub epoch: u32,
}

fn push_record(buf: &mut Vec<u8>, name: &str, extents: &[usize], values: &[f32]) {
    debug_assert_eq!(extents.iter().product::<usize>(), values.len());
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(extents.len() as u32).to_le_bytes());
    for &e in extents {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &TrainConfig,
    model: &ModelParams<f32>,
    optim: &OptimizerState<f32>,
    epoch: u32,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let text = config.to_text();
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    model.visit_params(&mut |p| push_record(&mut buf, &p.name, &p.shape, &p.values));
    model.visit_buffers(&mut |name, values| push_record(&mut buf, name, &[values.len()], values));
    push_record(&mut buf, "optim.step", &[], &[optim.current_step as f32]);
    push_record(
        &mut buf,
        "optim.total_steps",
        &[],
        &[optim.total_steps as f32],
    );
    for (name, v) in optim.velocities() {
        push_record(&mut buf, &format!("velocity.{name}"), &[v.len()], v);
    }
    push_record(&mut buf, "epoch", &[], &[epoch as f32]);
    fs::write(path, buf)?;
    Ok(())
}

struct Record {
    extents: Vec<usize>,
    values: Vec<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let slice = self.buf.get(self.pos..self.pos + n).ok_or_else(|| {
            Error::Format(format!(
                "{}: truncated {} at byte {}",
                self.path, what, self.pos
            ))
        })?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let buf = fs::read(path)?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic at byte 0, expected \"DNCK\"",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config block")?).map_err(|e| {
        Error::Format(format!(
            "{}: config block is not UTF-8: {e}",
            path.display()
        ))
    })?;
    let config = TrainConfig::parse(config_text)?;

    let mut records: BTreeMap<String, Record> = BTreeMap::new();
    while r.pos < buf.len() {
        let name_len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|e| {
                Error::Format(format!("{}: record name is not UTF-8: {e}", path.display()))
            })?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(r.u32("record extent")? as usize);
        }
        let numel: usize = extents.iter().product();
        let payload = r.take(numel * 4, "record payload")?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.insert(name, Record { extents, values });
    }

    let mut model = ModelParams::<f32>::new(&config.network, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut missing: Vec<String> = Vec::new();
    let mut shape_err: Option<String> = None;
    model.visit_params_mut(&mut |p| match records.remove(&p.name) {
        Some(rec) => {
            if rec.extents == p.shape {
                p.values = rec.values;
            } else if shape_err.is_none() {
                shape_err = Some(format!(
                    "parameter '{}' has shape {:?} in the file but {:?} in the model",
                    p.name, rec.extents, p.shape
                ));
            }
        }
        None => missing.push(p.name.clone()),
    });
    model.visit_buffers_mut(&mut |name, values| match records.remove(name) {
        Some(rec) => {
            if rec.values.len() == values.len() {
                *values = rec.values;
            } else if shape_err.is_none() {
                shape_err = Some(format!(
                    "buffer '{name}' has {} values in the file but {} in the model",
                    rec.values.len(),
                    values.len()
                ));
            }
        }
        None => missing.push(name.to_string()),
    });
    if let Some(msg) = shape_err {
        return Err(Error::Format(format!("{}: {msg}", path.display())));
    }
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "{}: records missing for {}",
            path.display(),
            missing.join(", ")
        )));
    }

    let scalar = |records: &mut BTreeMap<String, Record>, name: &str| -> Result<f32> {
        let rec = records
            .remove(name)
            .ok_or_else(|| Error::Format(format!("{}: record '{name}' missing", path.display())))?;
        if rec.values.len() != 1 {
            return Err(Error::Format(format!(
                "{}: record '{name}' should hold one value",
                path.display()
            )));
        }
        Ok(rec.values[0])
    };
    let step = scalar(&mut records, "optim.step")? as usize;
    let total = (scalar(&mut records, "optim.total_steps")? as usize).max(1);
    let epoch = scalar(&mut records, "epoch")? as u32;
    let mut optim =
        OptimizerState::<f32>::new(config.momentum, config.lr_initial, config.lr_final, total);
    optim.current_step = step;
    let velocity_names: Vec<String> = records
        .keys()
        .filter(|k| k.starts_with("velocity."))
        .cloned()
        .collect();
    for key in velocity_names {
        let rec = records.remove(&key).unwrap();
        optim.set_velocity(key.trim_start_matches("velocity.").to_string(), rec.values);
    }
    if let Some(name) = records.keys().next() {
        return Err(Error::Format(format!(
            "{}: unknown record '{name}'",
            path.display()
        )));
    }
    Ok(LoadedCheckpoint {
        config,
        model,
        optim,
        epoch,
    })
}
