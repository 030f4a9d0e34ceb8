//! Command-line entry points.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cheerbots_core::corpus::{Split, DEFAULT_HISTORY};
use cheerbots_core::response::GenConfig;
use cheerbots_core::rl::RlConfig;
use serde::Serialize;

use crate::checkpoint::Bundle;
use crate::error::{AppError, AppResult};
use crate::pipeline::{self, EvalOpts, Metric, TrainOpts};
use crate::service::{ChatEngine, ChatService, ResponderKind, Session};

#[derive(Debug, Parser)]
#[command(name = "cheerbots", version, about = "Empathetic dialogue pipeline with emotion-aware reinforcement learning")]
pub struct Cli {
    /// Bundle directory holding every artifact and its manifest.
    #[arg(long, global = true, default_value = "cheerbots-work")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Turns of dialogue history given to context encoders.
    #[arg(long, default_value_t = DEFAULT_HISTORY)]
    pub history: usize,
}

impl TrainArgs {
    fn opts(&self) -> TrainOpts {
        TrainOpts { seed: self.seed, epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, history: self.history }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Algo {
    Pg,
    Dqn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an ED-style CSV into records and store the label catalog.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// Catalog JSON; defaults to the bundled 29-label table.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Train the emotion detector (seed labels only while VA coordinates are missing).
    TrainDetector {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 1.0)]
        lambda_va: f64,
    },
    /// Fill missing VA coordinates and train the final detector.
    BootstrapVa {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 1.0)]
        lambda_va: f64,
    },
    /// Train the next-emotion predictor on detector labels.
    TrainPredictor {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 512)]
        hidden: usize,
    },
    /// Train the listener and simulated-speaker retrieval encoders.
    TrainRetrieval {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the toy generative responder.
    TrainGen {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = GenConfig::default().emb_dim)]
        emb_dim: usize,
        #[arg(long, default_value_t = GenConfig::default().hidden)]
        gen_hidden: usize,
        #[arg(long, default_value_t = GenConfig::default().window)]
        window: usize,
        #[arg(long, default_value_t = GenConfig::default().max_len)]
        max_len: usize,
    },
    /// Reinforcement learning on the empathy valence reward.
    TrainRl {
        #[arg(long)]
        seed: u64,
        /// JSON run configuration; flags given here take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum, default_value_t = ResponderKind::Retrieval)]
        responder: ResponderKind,
    },
    /// Compute a metric and write JSON and CSV reports.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = ResponderKind::Retrieval)]
        responder: ResponderKind,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// RL configuration whose oracle settings drive the reward metric.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HISTORY)]
        history: usize,
    },
    /// Talk to the bot on stdin; one message per line.
    Chat {
        #[arg(long, value_enum, default_value_t = ResponderKind::Retrieval)]
        responder: ResponderKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the chat REST API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long, value_enum, default_value_t = ResponderKind::Retrieval)]
        responder: ResponderKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1800)]
        idle_timeout_secs: u64,
    },
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> AppResult<()> {
    let bytes = crate::io::to_json_bytes(value)?;
    out.write_all(&bytes).map_err(|e| AppError::io("<stdout>", e))
}

/// Merges the optional config file with the command-line overrides.
pub fn rl_config(path: Option<&std::path::Path>, seed: u64, algo: Option<Algo>, episodes: Option<usize>) -> AppResult<RlConfig> {
    let mut value = match path {
        Some(p) => crate::io::read_json::<serde_json::Value>(p)?,
        None => serde_json::json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| AppError::Invalid("RL config must be a JSON object".into()))?;
    obj.insert("seed".into(), seed.into());
    if let Some(a) = algo {
        let name = match a {
            Algo::Pg => "pg",
            Algo::Dqn => "dqn",
        };
        obj.insert("algorithm".into(), name.into());
    }
    if let Some(n) = episodes {
        obj.insert("episodes".into(), n.into());
    }
    let config: RlConfig = serde_json::from_value(value).map_err(|e| AppError::json("RL config", e))?;
    config.validate()?;
    Ok(config)
}

/// Runs one parsed command, writing human-facing output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> AppResult<()> {
    let mut bundle = Bundle::open(&cli.workdir)?;
    match cli.command {
        Command::Ingest { csv, catalog } => {
            let s = pipeline::ingest(&mut bundle, &csv, catalog.as_deref())?;
            print_json(out, &s)
        }
        Command::TrainDetector { train, lambda_va } => {
            print_json(out, &pipeline::train_detector(&mut bundle, &train.opts(), lambda_va)?)
        }
        Command::BootstrapVa { train, lambda_va } => {
            print_json(out, &pipeline::bootstrap_va(&mut bundle, &train.opts(), lambda_va)?)
        }
        Command::TrainPredictor { train, hidden } => {
            print_json(out, &pipeline::train_predictor(&mut bundle, &train.opts(), hidden)?)
        }
        Command::TrainRetrieval { train } => print_json(out, &pipeline::train_retrieval(&mut bundle, &train.opts())?),
        Command::TrainGen { train, emb_dim, gen_hidden, window, max_len } => {
            let config = GenConfig { emb_dim, hidden: gen_hidden, window, max_len };
            print_json(out, &pipeline::train_gen(&mut bundle, &train.opts(), config)?)
        }
        Command::TrainRl { seed, config, algo, episodes, responder } => {
            let config = rl_config(config.as_deref(), seed, algo, episodes)?;
            print_json(out, &pipeline::train_rl(&mut bundle, &config, responder)?)
        }
        Command::Eval { metric, seed, split, responder, episodes, config, history } => {
            let oracle = match config {
                Some(p) => crate::io::read_json::<serde_json::Value>(&p)?
                    .get("oracle")
                    .cloned()
                    .filter(|v| !v.is_null())
                    .map(|v| serde_json::from_value(v).map_err(|e| AppError::json("oracle config", e)))
                    .transpose()?,
                None => None,
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let opts = EvalOpts { seed, split, history, responder, episodes, oracle };
            let reports = pipeline::eval(&bundle, metric, &opts)?;
            let paths = crate::report::write_reports(&bundle.dir().join("reports"), metric.slug(), &reports)?;
            let mut text = crate::report::summary_table(&reports);
            for p in paths {
                text.push_str(&format!("wrote {}\n", p.display()));
            }
            out.write_all(text.as_bytes()).map_err(|e| AppError::io("<stdout>", e))
        }
        Command::Chat { responder, seed } => {
            let engine = ChatEngine::load(&bundle, responder)?;
            let mut session = Session::new("cli".into(), crate::server::seed_from_env(seed)?);
            let stdin = std::io::stdin();
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| AppError::io("<stdin>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let p = engine.turn(&mut session, &line)?;
                let msg = format!(
                    "[{} ({:.2}, {:.2}) -> {}] {}\n  empathy valence so far: {:+.2}\n",
                    p.detected_emotion,
                    p.detected_va.valence,
                    p.detected_va.arousal,
                    p.predicted_next_emotion,
                    p.reply_text,
                    p.empathy_valence_so_far
                );
                out.write_all(msg.as_bytes()).map_err(|e| AppError::io("<stdout>", e))?;
            }
            Ok(())
        }
        Command::Serve { addr, responder, seed, idle_timeout_secs } => {
            let engine = ChatEngine::load(&bundle, responder)?;
            let seed = crate::server::seed_from_env(seed)?;
            let svc = Arc::new(ChatService::new(engine, seed, Duration::from_secs(idle_timeout_secs)));
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| AppError::io("<runtime>", e))?;
            writeln!(out, "listening on http://{addr}").map_err(|e| AppError::io("<stdout>", e))?;
            rt.block_on(crate::server::serve(svc, addr)).map_err(|e| AppError::io(addr.to_string(), e))
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
