//! Command-line driver: `train`, `attack` and `report`.
//!
//! Exit codes are 0 on success, 1 on runtime failure and 2 on usage or
//! validation errors. Every artifact written carries the effective
//! configuration after defaults and overrides.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::attack::{Algorithm, AttackConfig};
use crate::classifier::ClassifierModel;
use crate::encoder::{EncoderParams, PresenceMode, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::{
    export_image, fit_models, run_experiment, Dataset, ExperimentConfig, ExperimentReport, Split,
    DEFAULT_SAMPLES,
};
use crate::image::Image;

pub const ENCODER_FILE: &str = "encoder.cenc";
pub const PRIOR_FILE: &str = "prior.ccls";
pub const POSTERIOR_FILE: &str = "posterior.ccls";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "capsule-evasion",
    version,
    about = "Evasion attacks on capsule-presence encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the surrogate encoder and fit prior and posterior classifiers.
    Train(TrainArgs),
    /// Attack correctly classified test samples and write a report.
    Attack(AttackArgs),
    /// Print a table from one or more report files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with MNIST-named IDX files.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the model files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// JSON file with defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Gdu,
    Psc,
    Opt,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Gdu => Algorithm::Gdu,
            AlgorithmArg::Psc => Algorithm::Psc,
            AlgorithmArg::Opt => Algorithm::Opt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Prior,
    Posterior,
}

impl From<ModeArg> for PresenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Prior => PresenceMode::Prior,
            ModeArg::Posterior => PresenceMode::Posterior,
        }
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Directory with MNIST-named IDX files; the test split is attacked.
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Classifier file; defaults to the file for `--mode` next to the model.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Output directory for the report and image dumps.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub mask: Option<Switch>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub inner_iters: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write original, adversarial and |perturbation| PGM images per success.
    #[arg(long)]
    pub dump_images: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

/// Optional settings read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub algorithm: Option<Algorithm>,
    pub mode: Option<PresenceMode>,
    pub mask: Option<bool>,
    pub alpha: Option<f64>,
    pub iters: Option<usize>,
    pub outer_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format("config", format!("{}: {e}", path.display())))
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

fn require_exists(path: &Path, what: &str) -> std::result::Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<ConfigFile, CliError> {
    match path {
        Some(p) => {
            require_exists(p, "config file")?;
            ConfigFile::load(p).map_err(|e| CliError::Usage(e.to_string()))
        }
        None => Ok(ConfigFile::default()),
    }
}

/// Effective training configuration: defaults, then the config file, then flags.
pub fn resolve_train(args: &TrainArgs, file: &ConfigFile) -> TrainConfig {
    let defaults = TrainConfig::default();
    TrainConfig {
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        ..defaults
    }
}

/// Effective experiment configuration. The presence mode falls back to the
/// classifier's when neither the flag nor the file sets it.
pub fn resolve_attack(args: &AttackArgs, file: &ConfigFile) -> ExperimentConfig {
    let algorithm = args
        .algorithm
        .map(Algorithm::from)
        .or(file.algorithm)
        .unwrap_or(Algorithm::Gdu);
    let mut attack = AttackConfig::defaults(algorithm);
    if let Some(mask) = args.mask.map(|s| s == Switch::On).or(file.mask) {
        attack.mask = mask;
    }
    if let Some(alpha) = args.alpha.or(file.alpha) {
        attack.alpha = alpha;
    }
    if let Some(iters) = args.iters.or(file.iters) {
        attack.iterations = iters;
    }
    if let Some(outer) = args.outer_iters.or(file.outer_iters) {
        attack.outer_iterations = outer;
    }
    if let Some(inner) = args.inner_iters.or(file.inner_iters) {
        attack.inner_iterations = inner;
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);
    attack.seed = seed;
    ExperimentConfig {
        attack,
        mode: args
            .mode
            .map(PresenceMode::from)
            .or(file.mode)
            .unwrap_or(PresenceMode::Prior),
        n: args.n.or(file.n).unwrap_or(DEFAULT_SAMPLES),
        seed,
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> std::result::Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    require_exists(&args.data, "data path")?;
    let config = resolve_train(args, &file);
    config.validate()?;

    let train = Dataset::load_dir(&args.data, Split::Train)?.normalized();
    let test = Dataset::load_dir(&args.data, Split::Test)?.normalized();
    writeln!(
        out,
        "training on {} images ({} test), {} epochs, seed {}",
        train.len(),
        test.len(),
        config.epochs,
        config.seed
    )
    .ok();
    let models = fit_models(&config, &train, &test)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    models.encoder.save(args.out.join(ENCODER_FILE))?;
    models.prior.save(args.out.join(PRIOR_FILE))?;
    models.posterior.save(args.out.join(POSTERIOR_FILE))?;
    let echo = serde_json::to_string_pretty(&config).expect("config serialises");
    write_json(&args.out.join(TRAIN_CONFIG_FILE), &echo)?;

    writeln!(
        out,
        "prior classifier accuracy: {:.4}",
        models.prior_accuracy
    )
    .ok();
    writeln!(
        out,
        "posterior classifier accuracy: {:.4}",
        models.posterior_accuracy
    )
    .ok();
    Ok(())
}

fn describe(config: &ExperimentConfig) -> String {
    let a = &config.attack;
    let mut s = format!("algorithm {}: alpha {}", a.algorithm, a.alpha);
    match a.algorithm {
        Algorithm::Gdu | Algorithm::Psc => s += &format!(", n_iter {}", a.iterations),
        Algorithm::Opt => {
            s += &format!(
                ", alpha bounds [{}, {}], outer {}, inner {}",
                a.alpha_lower,
                a.alpha_upper.map_or("inf".to_string(), |u| u.to_string()),
                a.outer_iterations,
                a.inner_iterations
            )
        }
    }
    s += &format!(
        ", mask {}, mode {}, n {}, seed {}",
        if a.mask { "on" } else { "off" },
        config.mode,
        config.n,
        config.seed
    );
    s
}

fn magnitude(p: &[f64], like: &Image) -> Image {
    like.with_pixels(p.iter().map(|v| v.abs().min(1.0)).collect())
        .expect("same length")
}

pub fn cmd_attack(args: &AttackArgs, out: &mut dyn Write) -> std::result::Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let mut config = resolve_attack(args, &file);
    config.attack.validate()?;
    if config.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    require_exists(&args.data, "data path")?;
    require_exists(&args.model, "model file")?;
    let mode_given = args.mode.is_some() || file.mode.is_some();
    let classifier_path = match &args.classifier {
        Some(p) => p.clone(),
        None => {
            let dir = args.model.parent().unwrap_or(Path::new("."));
            dir.join(match config.mode {
                PresenceMode::Prior => PRIOR_FILE,
                PresenceMode::Posterior => POSTERIOR_FILE,
            })
        }
    };
    require_exists(&classifier_path, "classifier file")?;

    let encoder = Arc::new(EncoderParams::load(&args.model)?);
    let classifier = Arc::new(ClassifierModel::load(&classifier_path)?);
    if !mode_given {
        config.mode = classifier.mode;
    } else if classifier.mode != config.mode {
        return Err(CliError::Usage(format!(
            "classifier {} reads {} presences but --mode is {}",
            classifier_path.display(),
            classifier.mode,
            config.mode
        )));
    }
    writeln!(out, "{}", describe(&config)).ok();

    let test = Dataset::load_dir(&args.data, Split::Test)?.normalized();
    let experiment = run_experiment(&test, encoder, classifier, &config)?;
    let report = &experiment.report;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_json(&args.out.join(REPORT_FILE), &report.to_json())?;
    if args.dump_images {
        let dir = args.out.join("images");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (pos, (summary, result)) in report
            .per_sample
            .iter()
            .zip(&experiment.results)
            .enumerate()
        {
            if !result.success {
                continue;
            }
            let stem = format!("{pos:03}_{}", summary.index);
            let x = &test.images[summary.index];
            export_image(x, dir.join(format!("{stem}_original.pgm")))?;
            export_image(
                &result.adversarial,
                dir.join(format!("{stem}_adversarial.pgm")),
            )?;
            export_image(
                &magnitude(&result.perturbation, x),
                dir.join(format!("{stem}_perturbation.pgm")),
            )?;
        }
    }

    writeln!(
        out,
        "success_rate {:.4} over {} samples{}",
        report.success_rate,
        report.attempted,
        if report.shortfall > 0 {
            format!(" ({} fewer than requested)", report.shortfall)
        } else {
            String::new()
        }
    )
    .ok();
    writeln!(
        out,
        "mean_l2 {}  std_l2 {}",
        fmt_stat(report.mean_l2),
        fmt_stat(report.std_l2)
    )
    .ok();
    writeln!(
        out,
        "report written to {}",
        args.out.join(REPORT_FILE).display()
    )
    .ok();
    Ok(())
}

fn fmt_stat(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.4}"))
}

/// One table row per report: classifier mode, algorithm, success rate, mean
/// and std of the L2 norm, all to four decimals.
pub fn format_table(reports: &[ExperimentReport]) -> String {
    let mut s = format!(
        "{:<10} {:<9} {:>12} {:>10} {:>10}\n",
        "classifier", "algorithm", "success rate", "mean L2", "std L2"
    );
    for r in reports {
        s += &format!(
            "{:<10} {:<9} {:>12.4} {:>10} {:>10}\n",
            r.config.mode.as_str(),
            r.config.attack.algorithm.as_str(),
            r.success_rate,
            fmt_stat(r.mean_l2),
            fmt_stat(r.std_l2)
        );
    }
    s
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> std::result::Result<(), CliError> {
    if args.reports.is_empty() {
        return Err(CliError::Usage(
            "at least one report file is required".into(),
        ));
    }
    let mut reports = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report = ExperimentReport::from_json(&text).map_err(|e| {
            CliError::Runtime(Error::format("report", format!("{}: {e}", path.display())))
        })?;
        reports.push(report);
    }
    write!(out, "{}", format_table(&reports)).ok();
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if e.use_stderr() {
                write!(err, "{}", e.render()).ok();
            } else {
                write!(out, "{}", e.render()).ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Attack(a) => cmd_attack(a, out),
        Command::Report(a) => cmd_report(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "{e}").ok();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attack_args(extra: &[&str]) -> AttackArgs {
        let mut argv = vec![
            "capsule-evasion",
            "attack",
            "--data",
            "d",
            "--model",
            "m",
            "--out",
            "o",
        ];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Attack(a) => a,
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn attack_defaults_per_algorithm() {
        let gdu = resolve_attack(
            &attack_args(&["--algorithm", "gdu"]),
            &ConfigFile::default(),
        );
        assert_eq!(gdu.attack.alpha, 0.05);
        assert!(describe(&gdu).contains("alpha 0.05"));
        let psc = resolve_attack(
            &attack_args(&["--algorithm", "psc"]),
            &ConfigFile::default(),
        );
        assert!(describe(&psc).contains("alpha 0.5, n_iter 200"));
        let opt = resolve_attack(
            &attack_args(&["--algorithm", "opt"]),
            &ConfigFile::default(),
        );
        assert!(describe(&opt).contains("alpha 100, alpha bounds [0, inf], outer 9, inner 300"));
        assert_eq!(opt.n, DEFAULT_SAMPLES);
    }

    #[test]
    fn flags_override_config_file() {
        let file = ConfigFile {
            algorithm: Some(Algorithm::Psc),
            alpha: Some(0.25),
            n: Some(5),
            mask: Some(false),
            ..ConfigFile::default()
        };
        let c = resolve_attack(&attack_args(&["--alpha", "0.75"]), &file);
        assert_eq!(c.attack.algorithm, Algorithm::Psc);
        assert_eq!(c.attack.alpha, 0.75);
        assert_eq!(c.n, 5);
        assert!(!c.attack.mask);
        let c = resolve_attack(&attack_args(&["--mask", "on"]), &file);
        assert!(c.attack.mask);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"alpah": 1.0}"#).is_err());
        let c: ConfigFile =
            serde_json::from_str(r#"{"algorithm": "opt", "mode": "posterior"}"#).unwrap();
        assert_eq!(c.algorithm, Some(Algorithm::Opt));
        assert_eq!(c.mode, Some(PresenceMode::Posterior));
    }

    #[test]
    fn invalid_algorithm_is_a_usage_error() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            [
                "capsule-evasion",
                "attack",
                "--data",
                "d",
                "--model",
                "m",
                "--out",
                "o",
                "--algorithm",
                "fgsm",
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 2);
        assert!(String::from_utf8(err).unwrap().contains("fgsm"));
    }

    #[test]
    fn validation_runs_before_any_file_access() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            [
                "capsule-evasion",
                "attack",
                "--data",
                "missing",
                "--model",
                "m",
                "--out",
                "o",
                "--alpha",
                "-1",
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 2);
        assert!(String::from_utf8(err).unwrap().contains("alpha"));
    }

    #[test]
    fn table_has_four_decimals() {
        let report = ExperimentReport {
            config: ExperimentConfig {
                attack: AttackConfig::defaults(Algorithm::Opt),
                mode: PresenceMode::Prior,
                n: 1,
                seed: 0,
            },
            attempted: 1,
            shortfall: 0,
            per_sample: vec![],
            success_rate: 0.979,
            mean_l2: Some(2.62918),
            std_l2: None,
            l2_basis: "successes".into(),
            runtime_seconds: 0.0,
        };
        let table = format_table(&[report]);
        assert_eq!(table.lines().count(), 2);
        let row = table.lines().nth(1).unwrap();
        assert!(
            row.contains("0.9790") && row.contains("2.6292") && row.contains('-'),
            "{row}"
        );
    }
}
