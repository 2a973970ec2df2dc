use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ioi_core::harness::Config;
use ioi_core::Error;

mod commands;

/// Adversarial attacks on no-reference image and video quality metrics.
#[derive(Debug, Parser)]
#[command(name = "ioi", version)]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attack one PNG image.
    Attack {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// Where to write the adversarial PNG.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Attack a directory of PNG frames.
    AttackVideo {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        attack: AttackArgs,
        #[command(flatten)]
        frames: FrameArgs,
        /// Attack every n-th frame, using n iterations.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Search for the attack strength that reaches a target relative gain.
    Align {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        attack: AttackArgs,
        /// PNG image or directory of frames.
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(long)]
        frame_pattern: Option<String>,
        #[arg(long)]
        rg_target: Option<f64>,
        /// Strength increment between probes.
        #[arg(long)]
        d: Option<f64>,
        #[arg(long)]
        n_stop: Option<usize>,
    },
    /// Compare frame strides at an equal gradient budget.
    Framebudget {
        #[command(flatten)]
        metric: MetricArgs,
        /// Directory of frames; a seeded synthetic video when absent.
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(long)]
        frame_pattern: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        strides: Vec<usize>,
        #[command(flatten)]
        synthetic: SyntheticArgs,
    },
    /// Relative gain of an attacked video after purification defences.
    Defend {
        #[command(flatten)]
        metric: MetricArgs,
        /// Directory of original frames.
        #[arg(long)]
        original: PathBuf,
        /// Directory of adversarial frames.
        #[arg(long)]
        adversarial: PathBuf,
        #[arg(long)]
        frame_pattern: Option<String>,
        #[arg(long, value_enum, default_value_t = DefenceArg::All)]
        defence: DefenceArg,
        #[arg(long, default_value_t = ioi_core::harness::defend::DEFAULT_DEFENCE_FRACTION)]
        fraction: f64,
        /// Crop offset seed; defaults to the config seed.
        #[arg(long)]
        crop_seed: Option<u64>,
    },
    /// Write a texture weight map as a grayscale PNG.
    WeightsDump {
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = WeightScheme::Ioi)]
        scheme: WeightScheme,
        /// Dump one channel instead of the channel mean.
        #[arg(long)]
        channel: Option<usize>,
    },
    /// Check the perturbation bound of the IOI attack on images.
    VerifyBound {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        attack: AttackArgs,
        /// PNG files or directories; seeded random images when absent.
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        synthetic: SyntheticArgs,
    },
    /// Attack a set of images and write CSV and JSON reports.
    Report {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        attack: AttackArgs,
        /// PNG files or directories; seeded random images when absent.
        inputs: Vec<PathBuf>,
        /// Report directory; the CSV goes to stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        synthetic: SyntheticArgs,
    },
}

#[derive(Debug, Args)]
struct MetricArgs {
    /// Built-in metric: laplace or cnn.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    metric_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// ioi, fgsm, ifgsm, nvw or korhonen.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Fraction of spectrum magnitudes kept from the original.
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// increase or decrease.
    #[arg(long)]
    direction: Option<String>,
}

#[derive(Debug, Args)]
struct FrameArgs {
    /// Directory of input frames.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Directory for the attacked frames.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// printf-style frame names, e.g. %03d.png.
    #[arg(long)]
    frame_pattern: Option<String>,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    /// Number of synthetic items (images or frames).
    #[arg(long)]
    count: Option<usize>,
    /// Side length of synthetic items.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DefenceArg {
    None,
    Crop,
    Resize,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum WeightScheme {
    Ioi,
    Nvw,
    Sobel,
}

impl MetricArgs {
    fn apply(&self, cfg: &mut Config) {
        if let Some(name) = &self.metric {
            cfg.metric.name = name.clone();
        }
        if let Some(seed) = self.metric_seed {
            cfg.metric.seed = seed;
        }
    }
}

impl AttackArgs {
    fn apply(&self, cfg: &mut Config) -> Result<()> {
        let a = &mut cfg.attack;
        if let Some(name) = &self.attack {
            a.name = name.clone();
        }
        if let Some(eps) = self.epsilon {
            a.epsilon = eps;
        }
        if self.f.is_some() {
            a.f = self.f;
        }
        if let Some(n) = self.iterations {
            a.iterations = n;
        }
        if let Some(d) = &self.direction {
            a.direction = d.parse()?;
        }
        Ok(())
    }
}

impl SyntheticArgs {
    fn apply(&self, cfg: &mut Config) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
    }
}

fn set_io(cfg: &mut Config, input: Option<&PathBuf>, output: Option<&PathBuf>, pattern: Option<&String>) {
    if let Some(p) = input {
        cfg.io.input = Some(p.display().to_string());
    }
    if let Some(p) = output {
        cfg.io.output = Some(p.display().to_string());
    }
    if let Some(p) = pattern {
        cfg.io.frame_pattern = p.clone();
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Attack {
            metric,
            attack,
            input,
            output,
        } => {
            metric.apply(&mut cfg);
            attack.apply(&mut cfg)?;
            set_io(&mut cfg, input.as_ref(), output.as_ref(), None);
            commands::attack(&cfg)
        }
        Command::AttackVideo {
            metric,
            attack,
            frames,
            stride,
        } => {
            metric.apply(&mut cfg);
            attack.apply(&mut cfg)?;
            set_io(
                &mut cfg,
                frames.input.as_ref(),
                frames.output.as_ref(),
                frames.frame_pattern.as_ref(),
            );
            commands::attack_video(&cfg, stride)
        }
        Command::Align {
            metric,
            attack,
            input,
            frame_pattern,
            rg_target,
            d,
            n_stop,
        } => {
            metric.apply(&mut cfg);
            attack.apply(&mut cfg)?;
            set_io(&mut cfg, input.as_ref(), None, frame_pattern.as_ref());
            if rg_target.is_some() {
                cfg.align.rg_target = rg_target;
            }
            if let Some(d) = d {
                cfg.align.d = d;
            }
            if let Some(n) = n_stop {
                cfg.align.n_stop = n;
            }
            commands::align(&cfg)
        }
        Command::Framebudget {
            metric,
            input,
            frame_pattern,
            epsilon,
            strides,
            synthetic,
        } => {
            metric.apply(&mut cfg);
            synthetic.apply(&mut cfg);
            set_io(&mut cfg, input.as_ref(), None, frame_pattern.as_ref());
            if let Some(eps) = epsilon {
                cfg.attack.epsilon = eps;
            }
            commands::framebudget(&cfg, &strides, &synthetic)
        }
        Command::Defend {
            metric,
            original,
            adversarial,
            frame_pattern,
            defence,
            fraction,
            crop_seed,
        } => {
            metric.apply(&mut cfg);
            set_io(&mut cfg, None, None, frame_pattern.as_ref());
            let seed = crop_seed.unwrap_or(cfg.seed);
            commands::defend(&cfg, &original, &adversarial, defence, fraction, seed)
        }
        Command::WeightsDump {
            input,
            output,
            scheme,
            channel,
        } => {
            set_io(&mut cfg, input.as_ref(), Some(&output), None);
            commands::weights_dump(&cfg, scheme, channel)
        }
        Command::VerifyBound {
            metric,
            attack,
            inputs,
            synthetic,
        } => {
            metric.apply(&mut cfg);
            attack.apply(&mut cfg)?;
            synthetic.apply(&mut cfg);
            commands::verify_bound(&cfg, &inputs, &synthetic)
        }
        Command::Report {
            metric,
            attack,
            inputs,
            output,
            synthetic,
        } => {
            metric.apply(&mut cfg);
            attack.apply(&mut cfg)?;
            synthetic.apply(&mut cfg);
            set_io(&mut cfg, None, output.as_ref(), None);
            commands::report(&cfg, &inputs, &synthetic)
        }
    }
}

fn write_stdout(text: String) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::UnknownMetric(_) | Error::UnknownAttack(_) | Error::InvalidParameter(_)) => 2,
        Some(
            Error::Io { .. }
            | Error::Decode { .. }
            | Error::Encode { .. }
            | Error::MissingFrame(_)
            | Error::NoFrames { .. }
            | Error::FrameDimension { .. },
        ) => 3,
        Some(Error::InvariantViolation(_) | Error::OracleRejected { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli).and_then(write_stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_documented_exit_codes() {
        let cases: [(anyhow::Error, u8); 7] = [
            (Error::Config("x".into()).into(), 2),
            (Error::UnknownMetric("x".into()).into(), 2),
            (Error::MissingFrame("001.png".into()).into(), 3),
            (io::Error::other("disk").into(), 3),
            (Error::InvariantViolation("bound".into()).into(), 4),
            (Error::EmptyReport.into(), 1),
            (anyhow::anyhow!("other"), 1),
        ];
        for (err, code) in cases {
            assert_eq!(exit_code(&err), code, "{err}");
        }
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::parse_from(["ioi", "report", "--epsilon", "0.3", "--seed", "9", "--metric", "cnn"]);
        let mut cfg = Config::from_json(r#"{"attack": {"epsilon": 0.05, "f": 0.2}, "seed": 1}"#).unwrap();
        let Command::Report {
            metric,
            attack,
            synthetic,
            ..
        } = cli.command
        else {
            panic!("parsed the wrong command");
        };
        metric.apply(&mut cfg);
        attack.apply(&mut cfg).unwrap();
        synthetic.apply(&mut cfg);
        assert_eq!((cfg.attack.epsilon, cfg.attack.f, cfg.seed), (0.3, Some(0.2), 9));
        assert_eq!(cfg.metric.name, "cnn");
    }
}
