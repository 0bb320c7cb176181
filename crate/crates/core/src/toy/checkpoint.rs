//! Model checkpoints: a directory holding `manifest.txt` (`key=value` lines)
//! and one DNIT file per named parameter tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::{Dims, LatentTensor};
use crate::toy::model::{ModelConfig, Params, ToyDenoiser};
use crate::toy::schedule::{make_schedule, NoiseSchedule};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "dni-toy-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// Writes `model` and the schedule it was trained with into `dir`, creating it if needed.
pub fn save_model(model: &ToyDenoiser, schedule: &NoiseSchedule, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &model.config;
    let d = c.dims;
    let (beta_min, beta_max) = schedule.beta_range();
    let mut text = format!(
        "format={FORMAT}\nversion={FORMAT_VERSION}\ndims={},{},{},{}\nhidden={}\nattn_dim={}\nheads={}\nembed_dim={}\ntime_dim={}\nT={}\nbeta_min={beta_min:?}\nbeta_max={beta_max:?}\n",
        d.w,
        d.h,
        d.l,
        d.c,
        c.hidden,
        c.attn_dim,
        c.heads,
        c.embed_dim,
        c.time_dim,
        schedule.steps(),
    );
    if let Some(v) = model.initial_loss {
        text += &format!("initial_loss={v:?}\n");
    }
    if let Some(v) = model.final_loss {
        text += &format!("final_loss={v:?}\n");
    }
    for (name, values) in model.params.named() {
        let file = format!("{name}.dnit");
        let t = LatentTensor::from_vec(Dims::new(values.len(), 1, 1, 1)?, values.clone())?;
        write_tensor(&t, dir.join(&file))?;
        text += &format!("param.{name}={file}\n");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = m
        .get(key)
        .ok_or_else(|| Error::Parse(format!("checkpoint manifest lacks {key}")))?;
    v.parse()
        .map_err(|_| Error::Parse(format!("checkpoint manifest: bad value {v:?} for {key}")))
}

/// Loads a model saved by [`save_model`] together with its schedule.
pub fn load_model(dir: impl AsRef<Path>) -> Result<(ToyDenoiser, NoiseSchedule)> {
    let dir = dir.as_ref();
    let m = parse_manifest(&dir.join(MANIFEST))?;
    let format: String = field(&m, "format")?;
    let version: u32 = field(&m, "version")?;
    if format != FORMAT || version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint {format} v{version}")));
    }
    let dims: Vec<usize> = field::<String>(&m, "dims")?
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse("checkpoint manifest: bad dims".into()))?;
    let [w, h, l, c] = dims[..] else {
        return Err(Error::Parse("checkpoint manifest: dims needs four values".into()));
    };
    let config = ModelConfig {
        dims: Dims::new(w, h, l, c)?,
        hidden: field(&m, "hidden")?,
        attn_dim: field(&m, "attn_dim")?,
        heads: field(&m, "heads")?,
        embed_dim: field(&m, "embed_dim")?,
        time_dim: field(&m, "time_dim")?,
    };
    config.validate()?;
    let mut params = Params::zeros(&config);
    for (name, slot) in params.named_mut() {
        let file: String = field(&m, &format!("param.{name}"))?;
        let t = read_tensor(dir.join(file))?;
        *slot = t.into_vec();
    }
    let mut model = ToyDenoiser::from_params(config, params)?;
    model.initial_loss = m.get("initial_loss").map(|_| field(&m, "initial_loss")).transpose()?;
    model.final_loss = m.get("final_loss").map(|_| field(&m, "final_loss")).transpose()?;
    let schedule = make_schedule(field(&m, "T")?, field(&m, "beta_min")?, field(&m, "beta_max")?)?;
    Ok((model, schedule))
}
