//! Checkpoints: a text manifest naming every tensor, plus one f32 container
//! holding all of them back to back.
//!
//! ```text
//! multires-checkpoint 1
//! data <file name of the container>
//! iter <completed iterations>
//! meta <key> <value>
//! param <name> <role> <decay 0|1> <n> <c> <h> <w>
//! running <node> <channels> <updates>
//! ```
//!
//! Each `param` contributes its value then its velocity to the payload,
//! each `running` its mean then its variance, in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::container::{decode, encode, write_atomic, Raster, RasterData};
use crate::nn::{ParamRole, ParamStore, RunningStats};
use crate::tensor::{Shape4, Tensor4};

const HEADER: &str = "multires-checkpoint 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iter: u64,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("mrst")
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("{kind} `{s}` must be a non-empty word")));
    }
    Ok(())
}

/// Writes `path` (the manifest) and the container beside it, with the
/// extension replaced by `.mrst`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let data = data_path(path);
    let mut m = String::new();
    let _ = writeln!(m, "{HEADER}");
    let _ = writeln!(m, "data {}", data.file_name().and_then(|s| s.to_str()).unwrap_or_default());
    let _ = writeln!(m, "iter {}", ckpt.iter);
    for (k, v) in &ckpt.meta {
        check_token("meta key", k)?;
        check_token("meta value", v)?;
        let _ = writeln!(m, "meta {k} {v}");
    }
    let mut payload = Vec::with_capacity(2 * ckpt.params.scalar_count());
    for (name, e) in ckpt.params.iter() {
        check_token("parameter name", name)?;
        let s = e.value.shape();
        let _ = writeln!(
            m,
            "param {name} {} {} {} {} {} {}",
            e.role.as_str(),
            u8::from(e.decay),
            s.n,
            s.c,
            s.h,
            s.w
        );
        payload.extend_from_slice(e.value.data());
        payload.extend_from_slice(e.velocity.data());
    }
    for (node, r) in ckpt.params.running_iter() {
        check_token("node name", node)?;
        let _ = writeln!(m, "running {node} {} {}", r.mean.len(), r.updates);
        payload.extend_from_slice(&r.mean);
        payload.extend_from_slice(&r.var);
    }
    let raster = Raster::new(1, 1, payload.len(), RasterData::F32(payload))?;
    write_atomic(&data, &encode(&raster))?;
    write_atomic(path, m.as_bytes())
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, line: usize) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("manifest line {line}: expected a number")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(HEADER) {
        return Err(Error::Format(format!("{} is not a checkpoint manifest", path.display())));
    }
    let bytes = std::fs::read(data_path(path)).map_err(|e| Error::io(data_path(path), e))?;
    let payload = match decode(&bytes)?.data {
        RasterData::F32(v) => v,
        RasterData::U8(_) => return Err(Error::Format("checkpoint payload must be f32".into())),
    };
    let mut pos = 0;
    let mut next = |n: usize, line: usize| -> Result<Vec<f32>> {
        let s = payload.get(pos..pos + n).ok_or_else(|| {
            Error::Format(format!("manifest line {line}: payload ends at value {}", payload.len()))
        })?;
        pos += n;
        Ok(s.to_vec())
    };
    let mut ckpt = Checkpoint {
        iter: 0,
        meta: BTreeMap::new(),
        params: ParamStore::new(),
    };
    for (i, l) in lines {
        let line = i + 1;
        let mut f = l.split_whitespace();
        match f.next() {
            None => {}
            Some("data") => {}
            Some("iter") => ckpt.iter = parse_num(f.next(), line)?,
            Some("meta") => {
                let (Some(k), Some(v)) = (f.next(), f.next()) else {
                    return Err(Error::Format(format!("manifest line {line}: meta needs key and value")));
                };
                ckpt.meta.insert(k.into(), v.into());
            }
            Some("param") => {
                let name = f.next().ok_or_else(|| Error::Format(format!("manifest line {line}: missing name")))?;
                let role = f
                    .next()
                    .and_then(ParamRole::parse)
                    .ok_or_else(|| Error::Format(format!("manifest line {line}: bad role")))?;
                let decay: u8 = parse_num(f.next(), line)?;
                let dims: Vec<usize> = (0..4).map(|_| parse_num(f.next(), line)).collect::<Result<_>>()?;
                let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
                let value = Tensor4::from_vec(shape, next(shape.len(), line)?)?;
                let velocity = Tensor4::from_vec(shape, next(shape.len(), line)?)?;
                ckpt.params.insert(name, value, role)?;
                let e = ckpt.params.get_mut(name).expect("just inserted");
                e.velocity = velocity;
                e.decay = decay != 0;
            }
            Some("running") => {
                let node = f.next().ok_or_else(|| Error::Format(format!("manifest line {line}: missing node")))?;
                let c: usize = parse_num(f.next(), line)?;
                let updates: u64 = parse_num(f.next(), line)?;
                let mean = next(c, line)?;
                let var = next(c, line)?;
                ckpt.params.insert_running(node, RunningStats { mean, var, updates });
            }
            Some(other) => {
                return Err(Error::Format(format!("manifest line {line}: unknown record `{other}`")));
            }
        }
    }
    if pos != payload.len() {
        return Err(Error::Format(format!(
            "manifest accounts for {pos} of {} payload values",
            payload.len()
        )));
    }
    Ok(ckpt)
}
