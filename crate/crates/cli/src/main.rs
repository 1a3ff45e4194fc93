use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use engage_core::config::PipelineConfig;
use engage_core::eval::{default_regimes, parse_families, parse_regimes, train_final, CvSettings};
use engage_core::features::{assemble_dataset, Family, FeatureTable, Target};
use engage_core::ingest::{cross_reference, parse_env_csv, parse_schedule_csv, parse_surveys_csv};
use engage_core::pipeline::{
    boundaries_csv, decomposition_csv, hrv_csv, load_session, quality_csv, run_pipeline, run_screening, session_hrv,
    DirSource,
};
use engage_core::report::{evaluate_bundle, write_report_files, ReportBundle};
use engage_core::synth::{generate_cohort, SynthConfig};
use engage_core::types::ClassInfo;
use engage_core::{Error, Result};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "engage",
    version,
    about = "Engagement regression from wearable and classroom sensors"
)]
struct Cli {
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides ENGAGE_SEED and the configuration.
    #[arg(long, env = "ENGAGE_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Directory with `<date>/<participant>/` recordings.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Class schedule; defaults to `<data>/schedule.csv`.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known latent engagement.
    Synth {
        /// Generator configuration (TOML), or `default`.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, env = "ENGAGE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen every session and write the acceptance decisions.
    Clean {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate actual class start and end times.
    Segment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tonic/phasic decomposition of one session.
    Eda {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// `<participant_id>/<class_id>`.
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HRV features of one session.
    Hrv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-session feature table.
    Features {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Room sensors; defaults to `<data>/env.csv` when present.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Survey answers; defaults to `<data>/surveys.csv` when present.
        #[arg(long)]
        surveys: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the final model for one target.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Comma-separated sensor families, `wearable` or `all`.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested cross-validation, baselines and the regime sweep.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Regime list (TOML); the default sweep is used without it.
        #[arg(long)]
        regimes: Option<PathBuf>,
        /// Path of report.json; the CSV companions go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite the tables of an existing report.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("ENGAGE_LOG")
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_toml(&read_text(path)?)?,
        None => PipelineConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::validation(format!("--{name} is required (or set it in the configuration)")))
}

fn output(flag: Option<PathBuf>, cfg: &PipelineConfig, file: &str) -> PathBuf {
    flag.unwrap_or_else(|| cfg.paths.output.clone().unwrap_or_default().join(file))
}

/// Data directory and parsed schedule.
fn load_schedule(data: DataArgs, cfg: &PipelineConfig) -> Result<(DirSource, PathBuf, Vec<ClassInfo>)> {
    let root = required(data.data, &cfg.paths.data, "data")?;
    let schedule = data
        .schedule
        .or_else(|| cfg.paths.schedule.clone())
        .unwrap_or_else(|| root.join("schedule.csv"));
    let classes = parse_schedule_csv(&schedule.display().to_string(), &read_text(&schedule)?)?;
    let source = DirSource {
        root: root.clone(),
        ingest: cfg.ingest.clone(),
    };
    Ok((source, root, classes))
}

/// An explicitly named table must exist; a default one may be absent.
fn optional_table(flag: Option<PathBuf>, config: &Option<PathBuf>, default: PathBuf) -> Option<PathBuf> {
    flag.or_else(|| config.clone())
        .or_else(|| default.is_file().then_some(default))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, seed, out } => {
            let mut cfg = match config.as_deref() {
                None | Some("default") => SynthConfig::default(),
                Some(path) => SynthConfig::from_toml(&read_text(Path::new(path))?)?,
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.ok_or_else(|| Error::validation("--out is required"))?;
            let cohort = generate_cohort(&cfg, &out)?;
            log::info!(
                "{} classes, {} surveys written to {}",
                cohort.classes.len(),
                cohort.surveys.len(),
                out.display()
            );
            Ok(())
        }
        Command::Clean { common, data, out } => {
            let cfg = load_config(&common)?;
            let (source, _, classes) = load_schedule(data, &cfg)?;
            let result = run_screening(&source, &classes, &cfg)?;
            write_text(&output(out, &cfg, "quality.csv"), &quality_csv(&result.quality))
        }
        Command::Segment { common, data, out } => {
            let cfg = load_config(&common)?;
            let (source, _, classes) = load_schedule(data, &cfg)?;
            let result = run_screening(&source, &classes, &cfg)?;
            write_text(
                &output(out, &cfg, "boundaries.csv"),
                &boundaries_csv(&result.boundaries),
            )
        }
        Command::Eda {
            common,
            data,
            session,
            out,
        } => {
            let cfg = load_config(&common)?;
            let session = session
                .or_else(|| cfg.run.session.clone())
                .ok_or_else(|| Error::validation("--session is required"))?;
            let (source, _, classes) = load_schedule(data, &cfg)?;
            let (signals, _) = load_session(&source, &classes, &session, &cfg)?;
            write_text(
                &output(out, &cfg, "decomp.csv"),
                &decomposition_csv(&signals.decomposition),
            )
        }
        Command::Hrv {
            common,
            data,
            session,
            out,
        } => {
            let cfg = load_config(&common)?;
            let session = session
                .or_else(|| cfg.run.session.clone())
                .ok_or_else(|| Error::validation("--session is required"))?;
            let (source, _, classes) = load_schedule(data, &cfg)?;
            let (signals, _) = load_session(&source, &classes, &session, &cfg)?;
            let hrv = session_hrv(&signals, &cfg)
                .ok_or_else(|| Error::InsufficientData(format!("too few beats in {session}")))?;
            write_text(&output(out, &cfg, "hrv.csv"), &hrv_csv(&hrv))
        }
        Command::Features {
            common,
            data,
            env,
            surveys,
            out,
        } => {
            let cfg = load_config(&common)?;
            let (source, root, classes) = load_schedule(data, &cfg)?;
            let env = match optional_table(env, &cfg.paths.env, root.join("env.csv")) {
                Some(path) => parse_env_csv(&path.display().to_string(), &read_text(&path)?)?,
                None => {
                    log::warn!("no room sensor file; environment features will be missing");
                    Vec::new()
                }
            };
            let surveys = match optional_table(surveys, &cfg.paths.surveys, root.join("surveys.csv")) {
                Some(path) => {
                    let surveys = parse_surveys_csv(&path.display().to_string(), &read_text(&path)?)?;
                    cross_reference(&classes, &surveys)?;
                    surveys
                }
                None => {
                    log::warn!("no survey file; rows will carry no engagement scores");
                    Vec::new()
                }
            };
            let result = run_pipeline(&source, &classes, &env, &surveys, &cfg)?;
            write_text(&output(out, &cfg, "features.csv"), &result.table.to_csv())
        }
        Command::Train {
            common,
            features,
            target,
            families,
            out,
        } => {
            let cfg = load_config(&common)?;
            let target_name = target
                .or_else(|| cfg.run.target.clone())
                .unwrap_or_else(|| "overall".into());
            let targets = Target::parse_list(&target_name)?;
            let [target] = targets[..] else {
                return Err(Error::validation(format!(
                    "train fits one target at a time, got {target_name:?}; valid targets are behavioural, emotional, cognitive, overall"
                )));
            };
            let families = families
                .or_else(|| cfg.run.families.clone())
                .map(|f| parse_families(&f))
                .transpose()?
                .unwrap_or_else(|| Family::ALL.to_vec());
            let path = required(features, &cfg.paths.features, "features")?;
            let table = FeatureTable::read(&path)?;
            let ds = assemble_dataset(&table, &families)?;
            let settings = CvSettings::new(&cfg.model, &cfg.eval, cfg.seed.unwrap_or(DEFAULT_SEED));
            let (model, _) = train_final(&ds, target, &settings)?;
            write_text(
                &out.or_else(|| cfg.paths.model.clone())
                    .unwrap_or_else(|| output(None, &cfg, "model.json")),
                &model.to_json(),
            )
        }
        Command::Eval {
            common,
            features,
            target,
            regimes,
            out,
        } => {
            let cfg = load_config(&common)?;
            let targets = Target::parse_list(
                &target
                    .or_else(|| cfg.run.target.clone())
                    .unwrap_or_else(|| "all".into()),
            )?;
            let path = required(features, &cfg.paths.features, "features")?;
            let table = FeatureTable::read(&path)?;
            let regimes = match regimes.or_else(|| cfg.paths.regimes.clone()) {
                Some(p) => parse_regimes(&read_text(&p)?)?,
                None => default_regimes(&targets),
            };
            let settings = CvSettings::new(&cfg.model, &cfg.eval, cfg.seed.unwrap_or(DEFAULT_SEED));
            let bundle = evaluate_bundle(&table, &targets, &regimes, &settings, cfg.eval.min_subject_sessions)?;
            let report = out
                .or_else(|| cfg.paths.report.clone())
                .unwrap_or_else(|| output(None, &cfg, "report.json"));
            let dir = report.parent().map(Path::to_path_buf).unwrap_or_default();
            write_report_files(&bundle, &dir)?;
            if report.file_name().is_some_and(|n| n != "report.json") {
                write_text(&report, &bundle.to_json())?;
            }
            Ok(())
        }
        Command::Report { common, report, out } => {
            let cfg = load_config(&common)?;
            let path = required(report, &cfg.paths.report, "report")?;
            let bundle = ReportBundle::read(&path)?;
            let dir = out.or_else(|| cfg.paths.output.clone()).unwrap_or_default();
            write_report_files(&bundle, &dir).map(|_| ())
        }
    }
}
