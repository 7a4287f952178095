use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{io_at, CliError, CliResult};

pub const SEED_ENV: &str = "PROXATTACK_SEED";

#[derive(Debug, Parser)]
#[command(name = "proxattack", version, about = "Minimal l-infinity adversarial perturbations for per-pixel classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Attack every sample of a dataset directory.
    Attack(AttackArgs),
    /// Time the prox solvers on random instances.
    BenchProx(BenchProxArgs),
    /// Compare a saved model's vjp with central differences.
    Gradcheck(GradcheckArgs),
    /// Summarise one or more records CSV files.
    Report(ReportArgs),
    /// Write a fitted toy model and a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// key=value file supplying any flag of the command; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overridden by the PROXATTACK_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Alma,
    Dag,
    Ifgsm,
    Mifgsm,
    PgdCe,
    PgdDlr,
    Fmn,
    Pdpgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Masking {
    Labeled,
    Fixed,
    Scheduled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Masked,
    All,
}

/// Attack parameters; unset values take the attack's defaults.
#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model directory holding manifest.json.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory with one sub-directory per sample.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = AttackKind::Alma)]
    pub attack: AttackKind,
    /// Use each sample's target.bin instead of its labels.
    #[arg(long)]
    pub targeted: bool,
    /// Also write per-sample iteration traces.
    #[arg(long)]
    pub save_trace: bool,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub step_init: Option<f64>,
    #[arg(long)]
    pub step_final: Option<f64>,
    /// Metric smoothing α.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu_init: Option<f64>,
    #[arg(long)]
    pub rho_init: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma_w: Option<f64>,
    #[arg(long)]
    pub w_min: Option<f64>,
    /// Prox ternary-search precision.
    #[arg(long)]
    pub precision: Option<f64>,
    #[arg(long, value_enum)]
    pub masking: Option<Masking>,
    #[arg(long, value_enum)]
    pub percentile_scope: Option<Scope>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// DAG step.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Inner steps of the fixed-budget attacks.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// MI-FGSM momentum decay.
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long, default_value_t = proxattack::attacks::SEARCH_STEPS)]
    pub search_steps: usize,
    /// FMN initial step.
    #[arg(long)]
    pub alpha_init: Option<f64>,
    #[arg(long)]
    pub primal_lr: Option<f64>,
    #[arg(long)]
    pub dual_lr: Option<f64>,
    /// PDPGD initial constraint-to-norm weight ratio r.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchProxArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "d", value_delimiter = ',', default_value = "4096")]
    pub d_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0.1,0.5,1,2")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    /// Stopping tolerance of the iterative solvers.
    #[arg(long, default_value_t = 1e-5)]
    pub stop_tol: f64,
    #[arg(long, default_value_t = proxattack::prox::DEFAULT_PRECISION)]
    pub precision: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub log10_lambda_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub log10_lambda_max: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Point at which to check; uniform random in [0, 1] when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 32)]
    pub coordinates: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest ε of the failure curve.
    #[arg(long, default_value_t = 32.0 / 255.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 129)]
    pub grid_points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Training images for the toy model.
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Fraction of pixels left out of the mask.
    #[arg(long, default_value_t = 0.0)]
    pub unlabeled: f64,
}

impl Common {
    /// Applies the environment seed override; returns where the seed came
    /// from.
    pub fn resolve_seed(&mut self) -> CliResult<&'static str> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
                Ok("environment")
            }
            Err(_) => Ok("flag"),
        }
    }

    pub fn check_jobs(&self) -> CliResult<()> {
        if self.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splices the flags of a `--config` file in front of the explicit ones so
/// that the latter take precedence.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strings: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strings.iter().enumerate() {
        if a == "--config" {
            path = strings.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let (Some(path), Some(sub)) = (path, strings.get(1)) else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(sub) else {
        return Ok(args);
    };
    let text = io_at(&path, std::fs::read_to_string(&path))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{path}:{}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        if key == "config" {
            return Err(CliError::Config(format!("{path}:{}: config files cannot nest", n + 1)));
        }
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Config(format!("{path}:{}: unknown key `{key}` for `{sub}`", n + 1)))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}"));
            injected.push(value.to_string());
        } else {
            match value {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(CliError::Config(format!(
                        "{path}:{}: `{key}` expects true or false, got `{other}`",
                        n + 1
                    )))
                }
            }
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(args[2..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(file: &str, tail: &[&str]) -> CliResult<Vec<String>> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, file).unwrap();
        let mut args: Vec<OsString> = ["proxattack", "attack", "--config"].map(OsString::from).to_vec();
        args.push(p.into_os_string());
        args.extend(tail.iter().map(OsString::from));
        Ok(expand_config(args)?.into_iter().map(|a| a.into_string().unwrap()).collect())
    }

    #[test]
    fn file_flags_precede_explicit_ones() {
        let a = expand("nu = 0.5\ntargeted = true\nsave-trace = false\n", &["--nu", "0.9"]).unwrap();
        assert_eq!(&a[2..5], ["--nu", "0.5", "--targeted"]);
        assert_eq!(&a[a.len() - 2..], ["--nu", "0.9"]);
        assert!(!a.iter().any(|s| s == "--save-trace"));
        let cli = Cli::try_parse_from(
            a.iter().chain(["--model", "m", "--data", "d", "--out", "o"].iter().map(|s| s.to_string()).collect::<Vec<_>>().iter()),
        )
        .unwrap();
        let Command::Attack(att) = cli.command else { panic!() };
        assert_eq!(att.nu, Some(0.9));
        assert!(att.targeted);
    }

    #[test]
    fn malformed_files_are_config_errors() {
        for bad in ["nu 0.5", "config = x", "targeted = maybe", "bogus = 1"] {
            assert!(matches!(expand(bad, &[]), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn no_config_leaves_args_alone() {
        let args: Vec<OsString> = ["proxattack", "synth", "--out", "x"].map(OsString::from).to_vec();
        assert_eq!(expand_config(args.clone()).unwrap(), args);
    }
}
