use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dimlink::candgen::generate_candidates;
use dimlink::config::RunConfig;
use dimlink::datastore::{
    compute_stats, load_checkpoint, mock_generate, read_candidates, read_entities, read_samples, save_checkpoint,
    validate_references, write_atomic, write_candidates, write_entities, Dataset, MockConfig,
};
use dimlink::enhance::{enhance_entities, Classifier, HttpProvider, MockProvider, Provider, ProviderConfig, ProviderKind};
use dimlink::rankeval::{evaluate, DEFAULT_KS};
use dimlink::train::{check_inputs, train};
use dimlink::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dimlink", version, about = "Multimodal entity linking pipeline")]
struct Cli {
    #[command(flatten)]
    run: RunFlags,

    #[command(subcommand)]
    command: Command,
}

/// Overrides for the run configuration; these win over the config file and
/// the environment.
#[derive(Args, Debug, Default)]
struct RunFlags {
    /// key=value configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. --set beta2=0.98
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, value_name = "standard|paper")]
    loss_mode: Option<String>,
    #[arg(long, global = true)]
    candidate_k: Option<usize>,
}

impl RunFlags {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("--set {kv}: expected KEY=VALUE")))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        push("heads", self.heads.map(|v| v.to_string()));
        push("learning_rate", self.learning_rate.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("loss_mode", self.loss_mode.clone());
        push("candidate_k", self.candidate_k.map(|v| v.to_string()));
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let overrides = self.overrides()?;
        let pairs: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        RunConfig::resolve(std::env::vars(), self.config.as_deref(), &pairs)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-solution synthetic dataset directory
    Mockgen {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 3)]
        text_len: usize,
        #[arg(long, default_value_t = 2)]
        image_len: usize,
    },
    /// Fuzzy-match mentions against entity names
    Candgen {
        /// Sample records (JSON lines)
        #[arg(long)]
        samples: PathBuf,
        /// Entity records (JSON lines)
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the fusion model; writes final/best checkpoints and a loss curve
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Rank gold entities and report top-k accuracy
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Comma-separated k list
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        /// Dataset name for the report header (defaults to the directory name)
        #[arg(long)]
        name: Option<String>,
        /// Append one line per sample with its gold rank
        #[arg(long)]
        ranks: bool,
        /// Write the report here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Replace entity representations with model-written introductions
    Enhance {
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// One "id<TAB>category<TAB>sha256" line per entity
        #[arg(long, value_name = "FILE")]
        audit: PathBuf,
        /// Raw replies as JSON lines
        #[arg(long, value_name = "FILE")]
        responses: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProviderArg::Mock)]
        provider: ProviderArg,
        /// Mock script: {"id", "response", "failures"} per line
        #[arg(long, value_name = "FILE")]
        script: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "gpt-3.5-turbo")]
        model: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
        /// First retry delay in milliseconds; doubles per attempt
        #[arg(long, default_value_t = 1000)]
        backoff_ms: u64,
        /// Extra classifier phrases, "category=phrase" per line
        #[arg(long, value_name = "FILE")]
        patterns: Option<PathBuf>,
    },
    /// Dataset statistics
    Stats {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        entities: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProviderArg {
    Mock,
    Http,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.run.resolve()?;
    log::info!("resolved config: {}", cfg.to_string().trim_end().replace('\n', " "));
    log::info!("seed {}", cfg.seed);

    match cli.command {
        Command::Mockgen {
            out,
            samples,
            entities,
            noise_sigma,
            text_len,
            image_len,
        } => {
            let ds = mock_generate(&MockConfig {
                seed: cfg.seed,
                samples,
                entities,
                dim: cfg.hidden_dim,
                heads: cfg.heads,
                noise_sigma,
                text_len,
                image_len,
            })?;
            ds.save(&out)?;
            log::info!("wrote {} samples and {} entities to {}", ds.samples.len(), ds.entities.len(), out.display());
        }
        Command::Candgen { samples, entities, out } => {
            let samples = read_samples(&samples)?;
            let entities = read_entities(&entities)?;
            validate_references(&samples, &entities)?;
            let opts = cfg.candidate_options();
            let sets = samples
                .iter()
                .map(|s| generate_candidates(&s.id, &s.mention, &entities, opts, Some(&s.gold_entity_id)))
                .collect::<Result<Vec<_>>>()?;
            write_candidates(&out, &sets)?;
            let hits = sets.iter().filter(|s| s.gold_included).count();
            log::info!("{} candidate sets, gold included in {hits}", sets.len());
        }
        Command::Train { data, candidates, out } => {
            let ds = Dataset::load(&data)?;
            let cands = read_candidates(&candidates)?;
            let tcfg = cfg.train_config();
            check_inputs(&tcfg, &ds, &cands)?;
            fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            write_text(&out.join("config.txt"), &cfg.to_string())?;
            let curve_path = out.join("loss.tsv");
            let mut curve = File::create(&curve_path).map_err(|e| io_error(&curve_path, e))?;
            let mut curve_err = None;
            let outcome = train(&tcfg, &ds, &cands, |epoch, loss| {
                if curve_err.is_none() {
                    if let Err(e) = writeln!(curve, "{epoch}\t{loss:.9}").and_then(|_| curve.flush()) {
                        curve_err = Some(e);
                    }
                }
            })?;
            if let Some(e) = curve_err {
                return Err(io_error(&curve_path, e));
            }
            save_checkpoint(&outcome.last, out.join("final.ckpt"))?;
            save_checkpoint(&outcome.best, out.join("best.ckpt"))?;
            log::info!(
                "trained {} epochs, best epoch {} (loss {:.6})",
                outcome.epoch_losses.len(),
                outcome.best_epoch,
                outcome.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min)
            );
        }
        Command::Eval {
            data,
            candidates,
            checkpoint,
            ks,
            name,
            ranks,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let cands = read_candidates(&candidates)?;
            let params = load_checkpoint(&checkpoint, Some(ds.dim()))?;
            let report = evaluate(&params, &ds, &cands, &ks)?;
            let name = name.unwrap_or_else(|| {
                data.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| data.display().to_string())
            });
            let text = report.render(&name, ranks);
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Enhance {
            entities,
            out,
            audit,
            responses,
            provider,
            script,
            endpoint,
            model,
            concurrency,
            max_retries,
            timeout_secs,
            backoff_ms,
            patterns,
        } => {
            let records = read_entities(&entities)?;
            let mut classifier = Classifier::default();
            if let Some(p) = &patterns {
                let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                classifier.extend_from_str(&text)?;
            }
            let pcfg = ProviderConfig {
                kind: match provider {
                    ProviderArg::Mock => ProviderKind::Mock,
                    ProviderArg::Http => ProviderKind::Http,
                },
                endpoint,
                model,
                max_retries,
                concurrency,
                timeout: Duration::from_secs(timeout_secs),
                backoff_base: Duration::from_millis(backoff_ms),
            };
            pcfg.validate()?;
            let backend: Box<dyn Provider> = match pcfg.kind {
                ProviderKind::Mock => {
                    let script = script.ok_or_else(|| {
                        Error::Configuration("--provider mock requires --script".into())
                    })?;
                    Box::new(MockProvider::from_script_file(&script)?)
                }
                ProviderKind::Http => Box::new(HttpProvider::new(&pcfg, std::env::var("DIMLINK_API_KEY").ok())?),
            };
            let result = enhance_entities(&records, backend.as_ref(), &pcfg, &classifier)?;
            write_entities(&out, &result.entities)?;
            write_text(&audit, &result.audit_log())?;
            if let Some(path) = responses {
                write_text(&path, &result.responses_jsonl()?)?;
            }
            print!("{}", result.report);
        }
        Command::Stats { samples, entities } => {
            let samples = read_samples(&samples)?;
            let entities = read_entities(&entities)?;
            validate_references(&samples, &entities)?;
            print!("{}", compute_stats(&samples, &entities));
        }
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Clap's rendered error folded onto one line, without the usage block.
fn one_line(err: &clap::Error) -> String {
    let rendered = err.render().to_string();
    let mut parts = Vec::new();
    for line in rendered.lines() {
        let line = line.trim();
        if line.starts_with("Usage:") || line.starts_with("For more information") {
            break;
        }
        if !line.is_empty() {
            parts.push(line.trim_start_matches("error:").trim());
        }
    }
    parts.join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error[usage] {}", one_line(&e));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}] {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
