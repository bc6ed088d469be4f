//! Command-line interface: train, eval, decode, diagnose, synth.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use copymtl::data::{self, SynthConfig};
use copymtl::decoder::{DecoderMode, Scorer};
use copymtl::error::Error;
use copymtl::extraction::EvalMode;
use copymtl::train::{self, Preset, TrainConfig};
use copymtl::checkpoint;

const USAGE: &str = "\
copymtl <command> [flags]

commands:
  train     --train FILE [--test FILE] [--out-dir DIR] [--metrics FILE]
            [--preset desk|paper] [--lambda F] [--lr F] [--batch-size N]
            [--epochs N] [--seed N] [--scorer linear|fused]
            [--use-mask true|false] [--decoder-mode one|multi]
            [--max-triplets N] [--eval-every N] [--embeddings FILE]
  eval      --checkpoint STEM --data FILE [--mode strict|relaxed]
            [--no-complete true|false]
  decode    --checkpoint STEM --data FILE
  diagnose  --checkpoint STEM --data FILE [--trials N] [--seed N]
  synth     --out DIR [--seed N] [--sentences N] [--vocab N] [--relations N]
            [--max-triplets N] [--multi-token F] [--overlap F]
            [--label-style generic|nyt|webnlg]

data files are JSONL: {\"tokens\": [..], \"triplets\": [{\"relation\": R,
\"head\": [s,e], \"tail\": [s,e]}, ..]} with inclusive token spans.
";

enum CliError {
    Usage(String),
    App(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::App(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Flags {
    values: BTreeMap<String, String>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> CliResult<Flags> {
        let mut values = BTreeMap::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(key) = arg.strip_prefix("--") else {
                return Err(usage(format!("unexpected argument {arg:?}")));
            };
            if !allowed.contains(&key) {
                return Err(usage(format!("unknown flag --{key}")));
            }
            let value = it
                .next()
                .ok_or_else(|| usage(format!("flag --{key} needs a value")))?;
            if values.insert(key.to_string(), value.clone()).is_some() {
                return Err(usage(format!("flag --{key} given twice")));
            }
        }
        Ok(Flags { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| usage(format!("missing required flag --{key}")))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| usage(format!("bad value for --{key}: {v:?}"))),
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::from(0),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            ExitCode::from(1)
        }
        Err(CliError::App(err)) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Numeric(_) => 3,
                Error::InvalidArgument(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(args: &[String]) -> CliResult<()> {
    let Some(command) = args.first() else {
        return Err(usage("no command given"));
    };
    let rest = &args[1..];
    match command.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "decode" => cmd_decode(rest),
        "diagnose" => cmd_diagnose(rest),
        "synth" => cmd_synth(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(usage(format!("unknown command {other:?}"))),
    }
}

fn cmd_train(args: &[String]) -> CliResult<()> {
    let flags = Flags::parse(
        args,
        &[
            "train", "test", "out-dir", "metrics", "preset", "lambda", "lr", "batch-size",
            "epochs", "seed", "scorer", "use-mask", "decoder-mode", "max-triplets",
            "eval-every", "embeddings",
        ],
    )?;
    let train_path = PathBuf::from(flags.require("train")?);
    let train_data = data::parse_dataset(&train_path)?;
    let test_data = match flags.get("test") {
        Some(p) => data::parse_dataset(Path::new(p))?,
        None => Vec::new(),
    };

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        preset: match flags.get("preset").unwrap_or("desk") {
            "desk" => Preset::Desk,
            "paper" => Preset::Paper,
            other => return Err(usage(format!("bad preset {other:?}"))),
        },
        lambda: flags.parse_num("lambda", defaults.lambda)?,
        learning_rate: flags.parse_num("lr", defaults.learning_rate)?,
        batch_size: flags.parse_num("batch-size", defaults.batch_size)?,
        epochs: flags.parse_num("epochs", defaults.epochs)?,
        seed: flags.parse_num("seed", defaults.seed)?,
        scorer: match flags.get("scorer").unwrap_or("fused") {
            "linear" => Scorer::Linear,
            "fused" => Scorer::Fused,
            other => return Err(usage(format!("bad scorer {other:?}"))),
        },
        use_mask: flags.parse_num("use-mask", defaults.use_mask)?,
        decoder_mode: match flags.get("decoder-mode").unwrap_or("one") {
            "one" => DecoderMode::One,
            "multi" => DecoderMode::Multi,
            other => return Err(usage(format!("bad decoder mode {other:?}"))),
        },
        max_triplets: flags.parse_num("max-triplets", defaults.max_triplets)?,
        eval_every: flags.parse_num("eval-every", defaults.eval_every)?,
        max_train_len: defaults.max_train_len,
    };
    if config.lambda < 0.0 {
        return Err(usage("--lambda must be >= 0"));
    }

    let out_dir = flags.get("out-dir").map(PathBuf::from);
    let embeddings = flags.get("embeddings").map(PathBuf::from);
    let outcome = train::train_with_embeddings(
        &config,
        &train_data,
        &test_data,
        out_dir.as_deref(),
        true,
        embeddings.as_deref(),
    )?;

    if let Some(path) = flags.get("metrics") {
        std::fs::write(path, &outcome.csv).map_err(Error::from)?;
    }
    if let Some(dir) = &out_dir {
        checkpoint::save(&dir.join("final"), &outcome.model, &outcome.vocab, &outcome.relations)?;
        eprintln!("checkpoint written to {}", dir.join("final").display());
    }
    if let Some(last) = outcome.rows.last() {
        println!(
            "final: split={} f1={:.4} precision={:.4} recall={:.4}",
            last.split, last.f1, last.precision, last.recall
        );
    }
    Ok(())
}

fn cmd_eval(args: &[String]) -> CliResult<()> {
    let flags = Flags::parse(args, &["checkpoint", "data", "mode", "no-complete"])?;
    let (model, vocab, relations) = checkpoint::load(Path::new(flags.require("checkpoint")?))?;
    let instances = data::parse_dataset(Path::new(flags.require("data")?))?;
    let mode = match flags.get("mode").unwrap_or("strict") {
        "strict" => EvalMode::Strict,
        "relaxed" => EvalMode::Relaxed,
        other => return Err(usage(format!("bad mode {other:?}"))),
    };
    let complete = !flags.parse_num("no-complete", false)?;
    let report = train::evaluate_instances(&model, &instances, &vocab, &relations, mode, complete)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Checkpoint(e.to_string()))?
    );
    Ok(())
}

fn cmd_decode(args: &[String]) -> CliResult<()> {
    let flags = Flags::parse(args, &["checkpoint", "data"])?;
    let (model, vocab, relations) = checkpoint::load(Path::new(flags.require("checkpoint")?))?;
    let instances = data::parse_dataset(Path::new(flags.require("data")?))?;
    for inst in &instances {
        let ids = vocab.encode(&inst.tokens);
        let extracted = model.predict(&ids, true)?;
        let triplets: Vec<data::Triplet> = extracted
            .iter()
            .map(|t| data::Triplet {
                relation: relations.label(t.relation).to_string(),
                head: t.head,
                tail: t.tail,
            })
            .collect();
        let out = data::Instance {
            tokens: inst.tokens.clone(),
            triplets,
        };
        println!(
            "{}",
            serde_json::to_string(&out).map_err(|e| Error::Checkpoint(e.to_string()))?
        );
    }
    Ok(())
}

fn cmd_diagnose(args: &[String]) -> CliResult<()> {
    let flags = Flags::parse(args, &["checkpoint", "data", "trials", "seed"])?;
    let (model, vocab, relations) = checkpoint::load(Path::new(flags.require("checkpoint")?))?;
    let instances = data::parse_dataset(Path::new(flags.require("data")?))?;
    let trials = flags.parse_num("trials", 100usize)?;
    let seed = flags.parse_num("seed", 0u64)?;
    let report = train::diagnose(&model, &instances, &vocab, &relations, trials, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Checkpoint(e.to_string()))?
    );
    Ok(())
}

fn cmd_synth(args: &[String]) -> CliResult<()> {
    let flags = Flags::parse(
        args,
        &[
            "out", "seed", "sentences", "vocab", "relations", "max-triplets", "multi-token",
            "overlap", "label-style",
        ],
    )?;
    let out = PathBuf::from(flags.require("out")?);
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        seed: flags.parse_num("seed", defaults.seed)?,
        num_sentences: flags.parse_num("sentences", defaults.num_sentences)?,
        vocab_size: flags.parse_num("vocab", defaults.vocab_size)?,
        relation_count: flags.parse_num("relations", defaults.relation_count)?,
        max_triplets: flags.parse_num("max-triplets", defaults.max_triplets)?,
        multi_token_fraction: flags.parse_num("multi-token", defaults.multi_token_fraction)?,
        overlap_fraction: flags.parse_num("overlap", defaults.overlap_fraction)?,
    };
    let style = flags.get("label-style").unwrap_or("generic");
    let mut corpus = data::synth_generate(&config)?;
    match style {
        "generic" => {}
        "nyt" => data::relabel(&mut corpus, &data::nyt_style_labels(config.relation_count)),
        "webnlg" => data::relabel(&mut corpus, &data::webnlg_style_labels(config.relation_count)),
        other => return Err(usage(format!("bad label style {other:?}"))),
    }
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    data::write_dataset(&out.join("train.jsonl"), &corpus.train)?;
    data::write_dataset(&out.join("test.jsonl"), &corpus.test)?;
    println!(
        "wrote {} train / {} test sentences to {}",
        corpus.train.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}
