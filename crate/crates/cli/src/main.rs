//! `ckdctx`: runs the pipeline stages against a data directory.

use std::path::PathBuf;
use std::process::ExitCode;

use ckdctx_core::config::PipelineConfig;
use ckdctx_core::context::{route, QuestionKind, Routed};
use ckdctx_core::error::PipelineError;
use ckdctx_core::pipeline::{self, ContextInputs, Loaded, StageReport};
use ckdctx_core::report::{self, Format, ReportSpec, Section};
use ckdctx_core::risk::ModelKind;
use ckdctx_core::store::Store;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ckdctx", version, about = "CKD risk prediction for T2DM cohorts with guideline-backed answers")]
struct Cli {
    /// Pipeline config JSON; built-in defaults when absent.
    #[arg(long, global = true, env = "CKDCTX_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,
    /// Artifact directory (config: service.data_dir).
    #[arg(long, global = true, env = "CKDCTX_DATA_DIR", value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Log filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    #[value(name = "LR", alias = "lr")]
    Lr,
    #[value(name = "MLP", alias = "mlp")]
    Mlp,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Lr => ModelKind::LR,
            Kind::Mlp => ModelKind::MLP,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// Model kind (config: active_model).
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic claims with a planted risk function.
    GenerateData {
        /// Generator seed (config: synth.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Patients to generate (config: synth.n_patients).
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Select the T2DM cohort, label CKD outcomes and build features.
    BuildCohort,
    /// Train a risk model and record its metrics.
    Train {
        /// Model kind.
        #[arg(long, value_enum)]
        kind: Kind,
        /// Initialisation and shuffling seed (config: model.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Training epochs (config: model.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained model on the test split.
    Evaluate {
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Select prototypes from the high-risk pool and attribute them.
    Explain {
        #[command(flatten)]
        model: ModelFlags,
        /// Sampling seed (config: explain.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Prototypes to select (config: explain.k).
        #[arg(long)]
        k: Option<usize>,
    },
    /// List prototypes, or print the prototype summary.
    Prototypes {
        /// Prototypes to list (config: explain.k).
        #[arg(long)]
        k: Option<usize>,
        /// Print the summary table instead of the list.
        #[arg(long)]
        summary: bool,
    },
    /// Parse guideline HTML into the recommendation store.
    IngestGuidelines {
        /// Guideline HTML (config: guidelines.html).
        #[arg(long, value_name = "FILE")]
        html: Option<PathBuf>,
        /// Parse config JSON (config: guidelines.parse_config).
        #[arg(long, value_name = "FILE")]
        parse_config: Option<PathBuf>,
    },
    /// Rank guideline recommendations for a question.
    Ask {
        question: String,
        /// Answers to return (config: qa.default_k).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Answer a question-flow question (Q1..Q6, Q3a) or free text.
    Context {
        /// Question kind, or free text.
        question: String,
        /// Patient the question is about.
        #[arg(long)]
        patient: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Start the HTTP service.
    Serve {
        /// Listen port (config: service.port).
        #[arg(long, env = "CKDCTX_PORT")]
        port: Option<u16>,
        /// Job worker threads (config: service.workers).
        #[arg(long)]
        workers: Option<usize>,
        /// Static files served under /ui (config: service.ui_dir).
        #[arg(long, value_name = "DIR")]
        ui_dir: Option<PathBuf>,
        /// Required bearer token (config: service.bearer_token).
        #[arg(long, env = "CKDCTX_TOKEN", hide_env_values = true)]
        bearer_token: Option<String>,
    },
    /// Render metrics, prototypes, importances and the question flow.
    Report {
        /// Sections, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "metrics,prototypes,aggregate_importance,question_flow"
        )]
        sections: Vec<String>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: ReportFormat,
        /// Patient for the question flow; the first prototype when absent.
        #[arg(long)]
        patient: Option<String>,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Domain(e.to_string())
    }
}

fn print_stage(r: &StageReport) {
    println!("{}", serde_json::to_string_pretty(r).expect("report serialises"));
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serialises"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.service.data_dir = d.clone();
    }

    if let Command::Serve { port, workers, ui_dir, bearer_token } = cli.command {
        if let Some(p) = port {
            cfg.service.port = p;
        }
        if let Some(w) = workers {
            cfg.service.workers = w;
        }
        if ui_dir.is_some() {
            cfg.service.ui_dir = ui_dir;
        }
        if bearer_token.is_some() {
            cfg.service.bearer_token = bearer_token;
        }
        cfg.validate()?;
        return ckdctx_service::run(cfg).map_err(|e| Failure::Domain(e.to_string()));
    }

    let store = Store::open(&cfg.service.data_dir)?;
    match cli.command {
        Command::GenerateData { seed, n_patients } => {
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = n_patients {
                cfg.synth.n_patients = n;
            }
            cfg.validate()?;
            print_stage(&pipeline::generate_data(&store, &cfg)?);
        }
        Command::BuildCohort => print_stage(&pipeline::build_cohort(&store, &cfg)?),
        Command::Train { kind, seed, epochs } => {
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            if let Some(e) = epochs {
                cfg.model.epochs = e;
            }
            cfg.validate()?;
            print_stage(&pipeline::train(&store, &cfg, kind.into())?);
        }
        Command::Evaluate { model } => {
            let kind = model.kind.map_or(cfg.active_model, ModelKind::from);
            let loaded = Loaded::current(&store, &cfg)?;
            let m = pipeline::model_metrics(
                loaded.require_model(kind)?,
                loaded.require_features()?,
                loaded.require_split()?,
                cfg.model.threshold,
            )?;
            print_json(&m);
        }
        Command::Explain { model, seed, k } => {
            if let Some(s) = seed {
                cfg.explain.seed = s;
            }
            if let Some(k) = k {
                cfg.explain.k = k;
            }
            cfg.validate()?;
            let kind = model.kind.map_or(cfg.active_model, ModelKind::from);
            print_stage(&pipeline::explain(&store, &cfg, kind)?);
        }
        Command::Prototypes { k, summary } => {
            let loaded = Loaded::current(&store, &cfg)?;
            if summary {
                print!("{}", loaded.require_explanations()?.summary.render_text());
            } else {
                print_json(&loaded.prototypes(k.unwrap_or(cfg.explain.k))?);
            }
        }
        Command::IngestGuidelines { html, parse_config } => {
            if html.is_some() {
                cfg.guidelines.html = html;
            }
            if parse_config.is_some() {
                cfg.guidelines.parse_config = parse_config;
            }
            print_stage(&pipeline::ingest_guidelines(&store, &cfg)?);
        }
        Command::Ask { question, k, format } => {
            let loaded = Loaded::current(&store, &cfg)?;
            let answers = loaded.ask(&question, k.unwrap_or(cfg.qa.default_k))?;
            match format {
                OutputFormat::Json => print_json(&answers),
                OutputFormat::Text => {
                    for (i, a) in answers.iter().enumerate() {
                        println!(
                            "{}. [{}] grade {}  score {:.3} (lexical {:.3} + numeric {:.3})",
                            i + 1,
                            a.rec_id,
                            a.grade,
                            a.total,
                            a.lexical_score,
                            a.numeric_bonus
                        );
                        println!("   {}", a.answer_text);
                    }
                }
            }
        }
        Command::Context { question, patient, format } => {
            let loaded = Loaded::current(&store, &cfg)?;
            let inputs = ContextInputs::load(&cfg)?;
            let routed = match QuestionKind::parse(&question) {
                Some(QuestionKind::FreeText) => {
                    return Err(Failure::Usage("FreeText takes the question text itself".into()))
                }
                Some(k) => route(k.code()),
                None => Routed {
                    kind: QuestionKind::FreeText,
                    annotation: QuestionKind::FreeText.annotation(),
                    text: Some(question.clone()),
                },
            };
            let bundle = loaded.answer(&cfg, &inputs, &routed, patient.as_deref())?;
            match format {
                OutputFormat::Json => print_json(&bundle),
                OutputFormat::Text => print!("{}", bundle.render_text()),
            }
        }
        Command::Report { sections, format, patient, out } => {
            let sections = sections
                .iter()
                .map(|s| s.trim().parse::<Section>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::Usage)?;
            if sections.is_empty() {
                return Err(Failure::Usage("--sections needs at least one section".into()));
            }
            let format = match format {
                ReportFormat::Markdown => Format::Markdown,
                ReportFormat::Json => Format::Json,
            };
            let mut spec = ReportSpec::new(sections, format);
            spec.patient_id = patient;
            spec.top = cfg.explain.top_n;
            let loaded = Loaded::current(&store, &cfg)?;
            let inputs = ContextInputs::load(&cfg)?;
            let text = report::render(&report::build(&loaded, &cfg, &inputs, &spec)?, format);
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| PipelineError::io(&p, e))?,
                None => print!("{text}"),
            }
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
