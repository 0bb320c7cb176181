use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dni_core::guidance::{read_manifest, write_manifest};
use dni_core::metrics::{
    band_correlation, masked_mse, MASK_THRESHOLD, psnr, spectral_profile, ssim_video, standardized_psnr, Region,
};
use dni_core::toy::checkpoint::{load_model, save_model};
use dni_core::toy::edit::invert_with_attention;
use dni_core::toy::experiments::{compare_filters, sweep, SweepParam, LOW_BAND};
use dni_core::toy::model::ModelConfig;
use dni_core::toy::scene::{gen_dataset, SceneSpec, ToyPrompt};
use dni_core::toy::train::{train, LossWeighting, TrainConfig};
use dni_core::toy::schedule::{make_schedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
use dni_core::toy::{ddim_invert, ddim_sample, edit_video, NoiseSchedule, ToyDenoiser};
use dni_core::{
    build_asf, disentangle, read_tensor, write_tensor, Dims, DilutionConfig, GuidanceMask,
    LatentTensor, NormMode, Rng,
};

use crate::{Command, DilutionArgs, ModelArgs};

const PROMPTS: &str = "prompts.txt";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { out_dir, n, dims, seed } => gen_data(&out_dir, n, &dims, seed.seed),
        Command::Train {
            data_dir,
            out,
            steps,
            batch,
            lr,
            weighting,
            t,
            history,
            seed,
        } => {
            let cfg = TrainConfig {
                seed: seed.seed,
                steps,
                batch,
                lr,
                weighting: weighting.parse::<LossWeighting>()?,
                ..TrainConfig::default()
            };
            let s = make_schedule(t, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)?;
            train_cmd(&data_dir, &out, &s, &cfg, history.as_deref())
        }
        Command::Invert {
            model,
            input,
            prompt,
            out,
            maps_out,
        } => {
            let (m, s) = load(&model)?;
            let x0 = read(&input)?;
            let p: ToyPrompt = prompt.parse()?;
            let z = match maps_out {
                Some(path) => {
                    let (z, maps) = invert_with_attention(&m, &x0, &p, &s, model.steps)?;
                    ensure_parent(&path)?;
                    write_manifest(&path, &maps)?;
                    z
                }
                None => ddim_invert(&x0, &p, &m, &s, model.steps)?,
            };
            write(&z, &out)
        }
        Command::Sample { model, z, prompt, out } => {
            let (m, s) = load(&model)?;
            let p: ToyPrompt = prompt.parse()?;
            write(&ddim_sample(&read(&z)?, &p, &m, &s, model.steps)?, &out)
        }
        Command::Edit {
            model,
            input,
            source,
            target,
            dilution,
            seed,
            out,
            out_noise,
            out_mask,
        } => {
            let (m, s) = load(&model)?;
            let cfg = dilution_config(&dilution, seed.seed)?;
            let x0 = read(&input)?;
            let (src, tgt): (ToyPrompt, ToyPrompt) = (source.parse()?, target.parse()?);
            let e = edit_video(&x0, &src, &tgt, &m, &cfg, &s, model.steps)?;
            write(&e.output, &out)?;
            if let Some(p) = out_noise {
                write(&e.z_star, &p)?;
            }
            if let Some(p) = out_mask {
                write(&mask_tensor(&e.mask)?, &p)?;
            }
            Ok(())
        }
        Command::Disentangle {
            z,
            z0,
            out_v,
            out_g,
            norm,
        } => {
            let (z, z0) = (read(&z)?, read(&z0)?);
            let f = build_asf(&z0, norm.parse::<NormMode>()?)?;
            let (v, g) = disentangle(&z, &f)?;
            write(&v, &out_v)?;
            write(&g, &out_g)
        }
        Command::Dilute {
            z,
            z0,
            maps_manifest,
            dilution,
            seed,
            out,
            out_mask,
        } => {
            let cfg = dilution_config(&dilution, seed.seed)?;
            let (z, z0) = (read(&z)?, read(&z0)?);
            let maps = read_manifest(&maps_manifest)?;
            let parts = dni_core::dilution::make_dilutional_noise_parts(&z, &z0, &maps, &cfg)?;
            write(&parts.z_star, &out)?;
            if let Some(p) = out_mask {
                write(&mask_tensor(&parts.mask)?, &p)?;
            }
            Ok(())
        }
        Command::Analyze {
            input,
            reference,
            mask,
            out,
        } => {
            let x = read(&input)?;
            let r = reference.as_deref().map(read).transpose()?;
            let m = mask.as_deref().map(read_mask).transpose()?;
            emit(&analyze(&x, r.as_ref(), m.as_ref())?, out.as_deref())
        }
        Command::CompareFilters {
            checkpoint,
            steps,
            z,
            z0,
            seed,
            out,
        } => {
            let (z, z0) = match (checkpoint, z, z0) {
                (Some(ck), _, _) => {
                    let (m, s) = load(&ModelArgs { checkpoint: ck, steps, t: None })?;
                    let scene = SceneSpec::random(&mut Rng::new(seed.seed));
                    let x0 = scene.render(m.config.dims);
                    (ddim_invert(&x0, &scene.prompt, &m, &s, steps)?, x0)
                }
                (None, Some(z), Some(z0)) => (read(&z)?, read(&z0)?),
                _ => bail!("compare-filters needs --checkpoint or both --z and --z0"),
            };
            let mut csv = String::from("filter,psnr\n");
            for f in compare_filters(&z, &z0)? {
                writeln!(csv, "{},{}", f.filter, f.psnr)?;
            }
            emit(&csv, out.as_deref())
        }
        Command::Sweep {
            model,
            param,
            values,
            scenes,
            seed,
            out,
        } => {
            let param: SweepParam = param.parse()?;
            let (m, s) = load(&model)?;
            let rows = sweep(&m, &s, param, &values, scenes, seed.seed, model.steps)?;
            let mut csv = String::from("param,value,edit_effect,inside_mse,outside_mse,trajectory_distance\n");
            for r in rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.param, r.value, r.edit_effect, r.inside_mse, r.outside_mse, r.trajectory_distance
                )?;
            }
            emit(&csv, out.as_deref())
        }
    }
}

fn read(p: &Path) -> Result<LatentTensor> {
    Ok(read_tensor(p)?)
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write(t: &LatentTensor, p: &Path) -> Result<()> {
    ensure_parent(p)?;
    Ok(write_tensor(t, p)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => ensure_parent(p).and_then(|()| fs::write(p, text).map_err(Into::into)).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(m: &ModelArgs) -> Result<(ToyDenoiser, NoiseSchedule)> {
    if m.steps == 0 {
        bail!("--steps must be positive");
    }
    let (model, s) = load_model(&m.checkpoint)?;
    if let Some(t) = m.t.filter(|&t| t != s.steps()) {
        bail!("checkpoint {} was trained with T={}, not T={t}", m.checkpoint.display(), s.steps());
    }
    Ok((model, s))
}

fn dilution_config(d: &DilutionArgs, seed: u64) -> Result<DilutionConfig> {
    let mut cfg = DilutionConfig::new(d.alpha, d.beta, d.gamma, seed)?;
    cfg.norm = d.norm.parse()?;
    Ok(cfg)
}

fn parse_dims(s: &str) -> Result<Dims> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("dims must be W,H,L,C, got {s:?}"))?;
    let [w, h, l, c] = v[..] else {
        bail!("dims must be W,H,L,C, got {s:?}");
    };
    Ok(Dims::new(w, h, l, c)?)
}

fn mask_tensor(m: &GuidanceMask) -> Result<LatentTensor> {
    Ok(LatentTensor::from_vec(Dims::new(m.w, m.h, m.l, 1)?, m.values().to_vec())?)
}

fn read_mask(p: &Path) -> Result<GuidanceMask> {
    let t = read(p)?;
    let d = t.dims();
    if d.c != 1 {
        bail!("mask {} must have one channel, has {}", p.display(), d.c);
    }
    Ok(GuidanceMask::from_values(d.w, d.h, d.l, t.into_vec())?)
}

fn gen_data(dir: &Path, n: usize, dims: &str, seed: u64) -> Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let dims = parse_dims(dims)?;
    if dims.c != 3 {
        bail!("toy videos are RGB; C must be 3");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = String::new();
    for (i, (x, p)) in gen_dataset(&mut Rng::new(seed), n, dims).into_iter().enumerate() {
        let name = format!("video_{i:04}.dnit");
        write(&x, &dir.join(&name))?;
        writeln!(manifest, "{name} {p}")?;
    }
    let path = dir.join(PROMPTS);
    fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))
}

fn read_dataset(dir: &Path) -> Result<Vec<(LatentTensor, ToyPrompt)>> {
    let path = dir.join(PROMPTS);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, prompt) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| anyhow!("{}:{}: expected `<file> <prompt>`", path.display(), n + 1))?;
        let file: PathBuf = dir.join(file);
        data.push((read(&file)?, prompt.trim().parse()?));
    }
    Ok(data)
}

fn train_cmd(data_dir: &Path, out: &Path, s: &NoiseSchedule, cfg: &TrainConfig, history: Option<&Path>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let dims = data
        .first()
        .map(|(x, _)| x.dims())
        .ok_or_else(|| anyhow!("dataset {} is empty", data_dir.display()))?;
    let (model, report) = train(&data, ModelConfig::new(dims), s, cfg)?;
    save_model(&model, s, out)?;
    if let Some(p) = history {
        let mut csv = String::from("step,loss\n");
        for (i, l) in report.history.iter().enumerate() {
            writeln!(csv, "{},{l}", i + 1)?;
        }
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "trained {} steps: loss {:.4} -> {:.4}",
        cfg.steps, report.initial_loss, report.final_loss
    );
    Ok(())
}

fn analyze(x: &LatentTensor, reference: Option<&LatentTensor>, mask: Option<&GuidanceMask>) -> Result<String> {
    let mut csv = String::from("metric,name,value\n");
    let (lo, hi) = x.min_max();
    for (name, v) in [
        ("mean", x.mean()),
        ("variance", x.variance()),
        ("min", lo as f64),
        ("max", hi as f64),
        ("l2_norm", x.l2_norm()),
    ] {
        writeln!(csv, "stats,{name},{v}")?;
    }
    let prof = spectral_profile(x);
    for (i, v) in prof.radial.iter().enumerate() {
        writeln!(csv, "radial,{i},{v}")?;
    }
    for (i, v) in prof.temporal.iter().enumerate() {
        writeln!(csv, "temporal,{i},{v}")?;
    }
    if let Some(r) = reference {
        for (name, v) in [
            ("psnr", psnr(x, r, None)?),
            ("standardized_psnr", standardized_psnr(x, r)?),
            ("ssim", ssim_video(x, r, None)?),
            ("low_band_correlation", band_correlation(x, r, LOW_BAND)?),
            ("rel_l2", x.rel_l2(r)?),
            ("max_abs_diff", x.max_abs_diff(r)?),
        ] {
            writeln!(csv, "reference,{name},{v}")?;
        }
        if let Some(m) = mask {
            for (name, region) in [("inside", Region::Inside), ("outside", Region::Outside)] {
                // An empty side is reported, not fatal.
                let v = match masked_mse(x, r, m, region) {
                    Err(dni_core::Error::EmptyPartition(_)) => f64::NAN,
                    v => v?,
                };
                writeln!(csv, "masked_mse,{name},{v}")?;
            }
            let inside = m.values().iter().filter(|&&v| v >= MASK_THRESHOLD).count();
            writeln!(csv, "mask,inside_cells,{inside}")?;
            writeln!(csv, "mask,outside_cells,{}", m.values().len() - inside)?;
        }
    } else if mask.is_some() {
        bail!("--mask needs --reference");
    }
    Ok(csv)
}
