use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use ioi_core::attacks::{attack_video_parallel, ioi_attack, theorem1_rhs, verify_theorem1};
use ioi_core::fixtures::{derive_seed, random_image, random_video};
use ioi_core::harness::{
    align_gain, attack_rows, defended_gain, emit_report, fmt_sig, frame_budget_sweep, AlignItem, Config, Defence,
    ReportRow,
};
use ioi_core::image::{load_frames, load_png, save_frames, save_png};
use ioi_core::weighting::{ioi_weights, nvw_weights, sobel_weights};
use ioi_core::{build_oracle, run_attack, AttackKind, Error, FramePattern, Image};

use crate::{DefenceArg, SyntheticArgs, WeightScheme};

const DEFAULT_BOUND_COUNT: usize = 200;
const DEFAULT_REPORT_COUNT: usize = 12;
const DEFAULT_VIDEO_FRAMES: usize = 16;

fn required_input(cfg: &Config) -> Result<PathBuf> {
    cfg.io
        .input
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config("no input given; pass --input or set io.input".into()).into())
}

fn pattern(cfg: &Config) -> Result<FramePattern> {
    Ok(FramePattern::parse(&cfg.io.frame_pattern)?)
}

fn item_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Expands directories to their PNG files, sorted by name.
fn collect_images(inputs: &[PathBuf]) -> Result<Vec<(String, Image)>> {
    let mut files = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let io_err = |source| Error::Io {
                path: path.clone(),
                source,
            };
            let mut pngs = Vec::new();
            for entry in fs::read_dir(path).map_err(io_err)? {
                let p = entry.map_err(io_err)?.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    pngs.push(p);
                }
            }
            pngs.sort();
            files.extend(pngs);
        } else {
            files.push(path.clone());
        }
    }
    files.iter().map(|p| Ok((item_name(p), load_png(p)?))).collect()
}

fn synthetic_images(cfg: &Config, synthetic: &SyntheticArgs, default_count: usize) -> Vec<(String, Image)> {
    let n = synthetic.count.unwrap_or(default_count);
    (0..n)
        .map(|i| {
            let img = random_image(derive_seed(cfg.seed, i as u64), synthetic.size, synthetic.size, 3);
            (format!("item{i:02}"), img)
        })
        .collect()
}

fn images_for(
    cfg: &Config,
    inputs: &[PathBuf],
    synthetic: &SyntheticArgs,
    default_count: usize,
) -> Result<Vec<(String, Image)>> {
    let items = if inputs.is_empty() {
        synthetic_images(cfg, synthetic, default_count)
    } else {
        collect_images(inputs)?
    };
    if items.is_empty() {
        return Err(Error::Config("no images to process".into()).into());
    }
    Ok(items)
}

pub fn attack(cfg: &Config) -> Result<String> {
    let mut out = String::new();
    let acfg = cfg.attack_config(false)?;
    let oracle = build_oracle(&cfg.metric)?;
    let input = required_input(cfg)?;
    let img = load_png(&input)?;
    let record = run_attack(&img, oracle.as_ref(), &acfg)?;
    let row = ReportRow::from_record(item_name(&input), &img, &record)?;
    let report = emit_report(vec![row], cfg.to_value())?;
    if let Some(path) = &cfg.io.output {
        save_png(&record.adversarial, path)?;
    }
    out.push_str(&report.to_csv());
    Ok(out)
}

pub fn attack_video(cfg: &Config, stride: usize) -> Result<String> {
    let mut out = String::new();
    let acfg = cfg.attack_config(true)?;
    let pattern = pattern(cfg)?;
    let oracle = build_oracle(&cfg.metric)?;
    let video = load_frames(required_input(cfg)?, &pattern)?;
    let result = attack_video_parallel(&video, oracle.as_ref(), &acfg, stride)?;
    let stats: Vec<_> = result.records.iter().flatten().collect();
    let violations = stats.iter().filter(|s| s.bound_ok == Some(false)).count();
    if violations > 0 {
        return Err(Error::InvariantViolation(format!("{violations} frames exceed the perturbation bound")).into());
    }
    if let Some(dir) = &cfg.io.output {
        save_frames(&result.video, dir, &pattern)?;
    }
    let max_linf = stats.iter().map(|s| s.linf).fold(0.0, f64::max);
    writeln!(out, "frames,attacked,averaged_rg,max_linf,wall_time_s")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        video.len(),
        stats.len(),
        fmt_sig(result.averaged_rg),
        fmt_sig(max_linf),
        fmt_sig(result.wall_time)
    )?;
    Ok(out)
}

pub fn align(cfg: &Config) -> Result<String> {
    let mut out = String::new();
    let params = cfg.align_params()?;
    let oracle = build_oracle(&cfg.metric)?;
    let input = required_input(cfg)?;
    let result = if input.is_dir() {
        let video = load_frames(&input, &pattern(cfg)?)?;
        let base = cfg.attack_config(true)?;
        align_gain(
            AlignItem::Video(&video),
            oracle.as_ref(),
            &cfg.attack.name,
            &base,
            &params,
        )?
    } else {
        let img = load_png(&input)?;
        let base = cfg.attack_config(false)?;
        align_gain(
            AlignItem::Image(&img),
            oracle.as_ref(),
            &cfg.attack.name,
            &base,
            &params,
        )?
    };
    writeln!(out, "lr_found,rg_achieved,probes,converged_by")?;
    let by = match result.converged_by {
        ioi_core::harness::Convergence::TargetReached => "target_reached",
        ioi_core::harness::Convergence::Stagnation => "stagnation",
    };
    writeln!(
        out,
        "{},{},{},{by}",
        fmt_sig(result.lr_found),
        fmt_sig(result.rg_achieved),
        result.probes
    )?;
    Ok(out)
}

pub fn framebudget(cfg: &Config, strides: &[usize], synthetic: &SyntheticArgs) -> Result<String> {
    let mut out = String::new();
    let video = match &cfg.io.input {
        Some(dir) => load_frames(dir, &pattern(cfg)?)?,
        None => random_video(
            cfg.seed,
            synthetic.count.unwrap_or(DEFAULT_VIDEO_FRAMES),
            synthetic.size,
            synthetic.size,
            3,
        ),
    };
    let oracle = build_oracle(&cfg.metric)?;
    let rows = frame_budget_sweep(&video, oracle.as_ref(), cfg.attack.epsilon, strides)?;
    writeln!(out, "stride,averaged_rg,wall_time_s,gradient_calls")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.stride,
            fmt_sig(r.averaged_rg),
            fmt_sig(r.wall_time),
            r.gradient_calls
        )?;
    }
    Ok(out)
}

pub fn defend(
    cfg: &Config,
    original: &Path,
    adversarial: &Path,
    which: DefenceArg,
    fraction: f64,
    seed: u64,
) -> Result<String> {
    let mut out = String::new();
    let pattern = pattern(cfg)?;
    let oracle = build_oracle(&cfg.metric)?;
    let orig = load_frames(original, &pattern)?;
    let adv = load_frames(adversarial, &pattern)?;
    if orig.len() != adv.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} frames", orig.len()),
            found: format!("{} frames", adv.len()),
        }
        .into());
    }
    let crop = Defence::RandomCrop { fraction, seed };
    let resize = Defence::Resize { fraction };
    let defences = match which {
        DefenceArg::None => vec![Defence::None],
        DefenceArg::Crop => vec![crop],
        DefenceArg::Resize => vec![resize],
        DefenceArg::All => vec![Defence::None, crop, resize],
    };
    writeln!(out, "defence,rg")?;
    for d in defences {
        let rg = defended_gain(&orig, &adv, oracle.as_ref(), d)?;
        writeln!(out, "{},{}", d.name(), fmt_sig(rg))?;
    }
    Ok(out)
}

pub fn weights_dump(cfg: &Config, scheme: WeightScheme, channel: Option<usize>) -> Result<String> {
    let mut out = String::new();
    let img = load_png(required_input(cfg)?)?;
    let map = match scheme {
        WeightScheme::Ioi => ioi_weights(&img)?,
        WeightScheme::Nvw => nvw_weights(&img)?,
        WeightScheme::Sobel => sobel_weights(&img)?,
    };
    let w = map.as_image();
    let data = match channel {
        Some(c) if c >= w.channels() => {
            return Err(Error::InvalidParameter(format!("channel {c} out of range for {}", w.shape_string())).into())
        }
        Some(c) => w.plane(c).to_vec(),
        None => (0..w.plane_len())
            .map(|i| w.planes().map(|p| p[i]).sum::<f64>() / w.channels() as f64)
            .collect(),
    };
    let gray = Image::new(w.height(), w.width(), 1, data)?;
    let path = cfg.io.output.as_ref().map(PathBuf::from).expect("output is required");
    save_png(&gray, &path)?;
    writeln!(out, "wrote {} (max weight {})", path.display(), fmt_sig(map.max()))?;
    Ok(out)
}

pub fn verify_bound(cfg: &Config, inputs: &[PathBuf], synthetic: &SyntheticArgs) -> Result<String> {
    let mut out = String::new();
    let acfg = cfg.attack_config(false)?.with_kind(AttackKind::Ioi);
    let oracle = build_oracle(&cfg.metric)?;
    let items = images_for(cfg, inputs, synthetic, DEFAULT_BOUND_COUNT)?;
    writeln!(out, "item,linf,bound,ok")?;
    let mut violations = 0;
    for (name, img) in &items {
        let record = ioi_attack(img, oracle.as_ref(), &acfg)?;
        let ok = verify_theorem1(&record, acfg.f);
        violations += usize::from(!ok);
        writeln!(
            out,
            "{name},{},{},{ok}",
            fmt_sig(record.linf),
            fmt_sig(theorem1_rhs(record.mae_star_pert, acfg.f))
        )?;
    }
    if violations > 0 {
        return Err(Error::InvariantViolation(format!(
            "{violations} of {} images exceed the perturbation bound",
            items.len()
        ))
        .into());
    }
    Ok(out)
}

pub fn report(cfg: &Config, inputs: &[PathBuf], synthetic: &SyntheticArgs) -> Result<String> {
    let mut out = String::new();
    let acfg = cfg.attack_config(false)?;
    let oracle = build_oracle(&cfg.metric)?;
    let items = images_for(cfg, inputs, synthetic, DEFAULT_REPORT_COUNT)?;
    let rows = attack_rows(&items, oracle.as_ref(), &acfg)?;
    let report = emit_report(rows, cfg.to_value())?;
    match &cfg.io.output {
        Some(dir) => {
            report.write_to(Path::new(dir))?;
            for a in &report.aggregates {
                writeln!(
                    out,
                    "{}: mean {} ± {} (n = {})",
                    a.column,
                    fmt_sig(a.mean),
                    fmt_sig(a.ci95),
                    a.count
                )?;
            }
        }
        None => out.push_str(&report.to_csv()),
    }
    Ok(out)
}
