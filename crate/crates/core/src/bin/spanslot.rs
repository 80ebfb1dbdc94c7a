use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spanslot::cli::{self, RunManifest, OUT_ENV};
use spanslot::data::{save_split, DatasetFormat, EndConvention, LoadOptions};
use spanslot::eval::SlotScore;
use spanslot::model::DecodeMask;
use spanslot::synthetic;
use spanslot::trainer::{ConfigOverrides, Fraction};
use spanslot::{EmbeddingMode, Error};

#[derive(Parser)]
#[command(name = "spanslot", version, about = "Span-extraction slot filling: train, evaluate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one extractor per slot.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score trained extractors on the dev split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate over a series of training-set fractions.
    Fewshot {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated fractions, e.g. `1,1/2,1/4`. Defaults to 1 .. 1/128.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<String>,
    },
    /// Predict spans for an input split file with saved extractors.
    Predict {
        /// Extractor containers (`<out>/<slot>/model.json`).
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        embeddings_file: Option<PathBuf>,
        #[arg(long)]
        decode_mask: Option<DecodeMask>,
    },
    /// List errors exclusive to each of two prediction files.
    ErrorReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "restaurants8k")]
        format: DatasetFormat,
        #[arg(long, default_value = "exclusive")]
        end_convention: EndConvention,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Show at most this many errors per listing, sampled with `--seed`.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the synthetic digit-run dataset as train.json / dev.json.
    SynthDigits {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        dev: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run manifest (JSON). Flags given on the command line override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<DatasetFormat>,
    #[arg(long)]
    end_convention: Option<EndConvention>,
    /// Comma-separated slot names; defaults to every slot in the data.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    slots: Option<Vec<String>>,
    #[arg(long)]
    mode: Option<EmbeddingMode>,
    #[arg(long)]
    embeddings_file: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    decode_mask: Option<DecodeMask>,
    /// JSON file of overrides for the training and encoder defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest, Error> {
        let mut m = match &self.manifest {
            Some(p) => RunManifest::load(p)?,
            None => {
                let data = self
                    .data
                    .clone()
                    .ok_or_else(|| Error::Config("--data or --manifest is required".into()))?;
                let out = self
                    .out
                    .clone()
                    .ok_or_else(|| Error::Config(format!("--out, {OUT_ENV} or --manifest is required")))?;
                RunManifest::new(data, self.format.unwrap_or(DatasetFormat::Restaurants8k), out)
            }
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    m.$field = v.clone();
                }
            };
        }
        take!(data);
        take!(format);
        take!(end_convention);
        take!(mode);
        take!(fraction);
        take!(seed);
        take!(out);
        take!(decode_mask);
        if self.slots.is_some() {
            m.slots = self.slots.clone();
        }
        if self.embeddings_file.is_some() {
            m.embeddings_file = self.embeddings_file.clone();
        }
        if self.vocab.is_some() {
            m.vocab = self.vocab.clone();
        }
        if let Some(p) = &self.config {
            let body = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            m.config = serde_json::from_str::<ConfigOverrides>(&body).map_err(|e| Error::Parse {
                path: p.clone(),
                record: None,
                message: e.to_string(),
            })?;
        }
        m.fraction()?;
        Ok(m)
    }
}

fn print_scores<'a>(rows: impl Iterator<Item = (&'a str, &'a str, usize, &'a SlotScore)>) {
    println!("{:<20} {:>8} {:>8} {:>7} {:>7} {:>7}", "slot", "fraction", "train", "P", "R", "F1");
    for (slot, fraction, n, s) in rows {
        println!(
            "{slot:<20} {fraction:>8} {n:>8} {:>7.4} {:>7.4} {:>7.4}{}",
            s.precision,
            s.recall,
            s.f1,
            if s.vacuous { "  (vacuous)" } else { "" }
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { run } => {
            let m = run.manifest()?;
            let summary = cli::cmd_train(&m, run.workers)?;
            for (slot, log) in &summary.logs {
                let best = log.epochs.iter().find(|r| r.epoch == log.best_epoch);
                println!(
                    "{slot}: {} epochs, best epoch {} (dev F1 {})",
                    log.epochs.len(),
                    log.best_epoch,
                    best.and_then(|r| r.dev_f1).map(|f| format!("{f:.4}")).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("wrote {}", m.out.display());
        }
        Command::Eval { run } => {
            let m = run.manifest()?;
            let evals = cli::cmd_eval(&m)?;
            print_scores(evals.iter().map(|e| (e.slot.as_str(), e.row.fraction.as_str(), e.row.train_size, &e.row.score)));
            if !evals.is_empty() {
                let avg = evals.iter().map(|e| e.row.score.f1).sum::<f64>() / evals.len() as f64;
                println!("average F1 {avg:.4}");
            }
        }
        Command::Fewshot { run, fractions } => {
            let m = run.manifest()?;
            let fractions = if fractions.is_empty() {
                Fraction::halvings(7)
            } else {
                fractions.iter().map(|f| f.parse()).collect::<Result<Vec<Fraction>, _>>()?
            };
            let rows = cli::cmd_fewshot(&m, &fractions, run.workers)?;
            print_scores(rows.iter().map(|r| (r.slot.as_str(), r.fraction.as_str(), r.train_size, &r.score)));
            println!("wrote {}", m.out.join("fewshot.csv").display());
        }
        Command::Predict {
            models,
            input,
            output,
            embeddings_file,
            decode_mask,
        } => {
            let preds = cli::cmd_predict(&models, &input, &output, embeddings_file.as_deref(), decode_mask)?;
            println!("wrote {} predictions to {}", preds.len(), output.display());
        }
        Command::ErrorReport {
            data,
            format,
            end_convention,
            a,
            b,
            sample,
            seed,
        } => {
            let options = LoadOptions {
                format,
                end_convention,
            };
            print!("{}", cli::cmd_error_report(&data, options, &a, &b, sample.map(|n| (n, seed)))?);
        }
        Command::SynthDigits { out, train, dev, seed } => {
            let ds = synthetic::digit_dataset(train, dev, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            save_split(&out.join("train.json"), &ds.train)?;
            save_split(&out.join("dev.json"), &ds.dev)?;
            println!("wrote {} train / {} dev to {}", ds.train.len(), ds.dev.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
