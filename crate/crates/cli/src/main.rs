//! `xkd`: train a teacher, distill a student, evaluate, and explain.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xkd_core::data::{SplitPolicy, SplitRole, SyntheticSpec};
use xkd_core::loss::LossVariant;
use xkd_core::run::{self, Overrides, RunConfig};
use xkd_core::Error;

#[derive(Parser)]
#[command(name = "xkd", version, about = "Explainable knowledge distillation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase 1: train the teacher on hard labels.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Phase 2: distill the student from a frozen teacher checkpoint.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint; defaults to <output>/teacher/teacher.ckpt.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Also train the student without a teacher and compare.
        #[arg(long)]
        with_baseline: bool,
        /// Distillation objective: fbce_mse or ce_kl.
        #[arg(long)]
        variant: Option<LossVariant>,
    },
    /// Evaluate one or more checkpoints and print a comparison grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Split to evaluate on.
        #[arg(long, default_value = "test", value_parser = parse_role)]
        split: SplitRole,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Score-CAM overlays and alignment; the first checkpoint is the reference.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Capture layer (default: last conv layer of each model).
        #[arg(long)]
        layer: Option<String>,
        /// Number of images to explain.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Write a synthetic blob dataset in class-per-folder layout.
    GenSynthetic {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().per_class)]
        per_class: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().num_classes)]
        classes: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().image_size)]
        image_size: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().blob_radius)]
        blob_radius: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().noise)]
        noise: f64,
        /// Image generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split policy recorded in the manifest, train/val/test percent.
        #[arg(long, default_value = "65/15/20")]
        split: SplitPolicy,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
}

/// Config file plus flags that override it.
#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Run directory (default: $XKD_OUTPUT_ROOT/<config stem>, else runs/<config stem>).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Class-per-folder dataset root; replaces any synthetic dataset.
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Split policy, train/val/test percent.
    #[arg(long)]
    split_policy: Option<SplitPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epochs_teacher: Option<usize>,
    #[arg(long)]
    epochs_student: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output.clone(),
            dataset_root: self.dataset_root.clone(),
            split: self.split_policy,
            seed: self.seed,
            alpha: self.alpha,
            gamma: self.gamma,
            temperature: self.temperature,
            epochs_teacher: self.epochs_teacher,
            epochs_student: self.epochs_student,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            ..Default::default()
        }
    }

    fn resolve(&self, extra: Overrides) -> Result<(RunConfig, PathBuf), Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        self.overrides().apply(&mut cfg);
        extra.apply(&mut cfg);
        let out = cfg.resolve_output_dir(Some(&self.config));
        Ok((cfg, out))
    }
}

fn parse_role(s: &str) -> Result<SplitRole, String> {
    match s {
        "train" => Ok(SplitRole::Train),
        "val" => Ok(SplitRole::Val),
        "test" => Ok(SplitRole::Test),
        other => Err(format!("unknown split `{other}` (expected train, val or test)")),
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::TrainTeacher { common } => {
            let (cfg, out) = common.resolve(Overrides::default())?;
            let r = run::cmd_train_teacher(cfg, &out)?;
            print!("{}", r.report.render());
            println!("teacher checkpoint: {}", show(&r.checkpoint));
        }
        Command::Distill {
            common,
            teacher,
            with_baseline,
            variant,
        } => {
            let (cfg, out) = common.resolve(Overrides {
                variant,
                ..Default::default()
            })?;
            let r = run::cmd_distill(cfg, &out, teacher.as_deref(), with_baseline)?;
            print!("{}", r.comparison);
            println!("student checkpoint: {}", show(&r.student.checkpoint));
            if let Some(b) = &r.baseline {
                println!("baseline checkpoint: {}", show(&b.checkpoint));
            }
        }
        Command::Evaluate {
            common,
            split,
            checkpoints,
        } => {
            let (cfg, out) = common.resolve(Overrides::default())?;
            let r = run::cmd_evaluate(cfg, &out, &checkpoints, split)?;
            print!("{}", r.grid);
            println!("reports: {}", show(&r.dir));
        }
        Command::Explain {
            common,
            layer,
            samples,
            checkpoints,
        } => {
            let (cfg, out) = common.resolve(Overrides {
                layer,
                samples,
                ..Default::default()
            })?;
            let r = run::cmd_explain(cfg, &out, &checkpoints)?;
            print!("{}", r.report.render());
            println!("overlays and heatmaps: {}", show(&r.dir));
        }
        Command::GenSynthetic {
            out,
            per_class,
            classes,
            image_size,
            blob_radius,
            noise,
            seed,
            split,
            split_seed,
        } => {
            let spec = SyntheticSpec {
                image_size,
                num_classes: classes,
                blob_radius,
                noise,
                per_class,
                seed,
            };
            let m = run::cmd_gen_synthetic(&spec, &out, split, split_seed)?;
            println!(
                "wrote {} images in {} classes to {} (manifest {})",
                m.items.len(),
                m.num_classes(),
                show(&out),
                &m.content_hash[..12]
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use xkd_core::run::OUTPUT_ROOT_ENV;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn output_env_name_is_documented() {
        let help = Cli::command()
            .find_subcommand_mut("train-teacher")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains(OUTPUT_ROOT_ENV));
    }
}
