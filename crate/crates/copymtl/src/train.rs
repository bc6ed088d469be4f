//! Multi-task training loop, evaluation driver, and diagnostics.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{
    build_relations, build_vocab, prepare, Instance, Prepared, Relations, Vocab,
};
use crate::decoder::{reduction_check, DecoderConfig, DecoderMode, Scorer};
use crate::error::{Error, Result};
use crate::extraction::{assemble, evaluate, gold_set, EvalMode, EvalReport};
use crate::model::{Model, ModelConfig};
use crate::numerics::{AdamState, Rng, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Small dimensions for single-core experiments (d_e 32, hidden 64).
    Desk,
    /// The published dimensions (d_e 100, hidden 1000, T = 5).
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Weight of the tagging loss in the joint objective.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub scorer: Scorer,
    pub use_mask: bool,
    pub decoder_mode: DecoderMode,
    pub max_triplets: usize,
    /// Evaluate train/test every this many epochs (the final epoch is
    /// always evaluated).
    pub eval_every: usize,
    /// Sentences longer than this are skipped during training (kept
    /// for evaluation).
    pub max_train_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: Preset::Desk,
            lambda: 1.0,
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            scorer: Scorer::Fused,
            use_mask: false,
            decoder_mode: DecoderMode::One,
            max_triplets: 5,
            eval_every: 1,
            max_train_len: 100,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, vocab_size: usize, rel_count: usize) -> ModelConfig {
        let (embed_dim, hidden) = match self.preset {
            Preset::Desk => (32, 64),
            Preset::Paper => (100, 1000),
        };
        let max_triplets = match self.preset {
            Preset::Desk => self.max_triplets,
            Preset::Paper => 5,
        };
        ModelConfig {
            embed_dim,
            hidden,
            vocab_size,
            rel_count,
            decoder: DecoderConfig {
                scorer: self.scorer,
                use_mask: self.use_mask,
                max_triplets,
                mode: self.decoder_mode,
                fused_width: hidden,
            },
        }
    }

    fn effective_lr(&self) -> f64 {
        match self.preset {
            Preset::Desk => self.learning_rate,
            Preset::Paper => 0.001,
        }
    }

    fn effective_lambda(&self) -> f64 {
        match self.preset {
            Preset::Desk => self.lambda,
            Preset::Paper => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rel_f1: f64,
    pub ent_f1: f64,
    pub loss_d: f64,
    pub loss_e: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,precision,recall,f1,rel_f1,ent_f1,loss_d,loss_e";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.split, r.precision, r.recall, r.f1, r.rel_f1, r.ent_f1, r.loss_d, r.loss_e
        ));
    }
    out
}

pub struct TrainOutcome {
    pub model: Model,
    pub vocab: Vocab,
    pub relations: Relations,
    pub rows: Vec<MetricsRow>,
    pub csv: String,
    /// Training sentences dropped for exceeding max_train_len.
    pub skipped_long: usize,
}

fn prepare_corpus(
    instances: &[Instance],
    vocab: &Vocab,
    relations: &Relations,
    t_max: usize,
    max_len: Option<usize>,
) -> Result<(Vec<Prepared>, usize)> {
    let mut out = Vec::with_capacity(instances.len());
    let mut skipped = 0;
    for inst in instances {
        if let Some(limit) = max_len {
            if inst.tokens.len() > limit {
                skipped += 1;
                continue;
            }
        }
        out.push(prepare(inst, vocab, relations, t_max)?);
    }
    Ok((out, skipped))
}

/// Full training run. Deterministic for a given (config, corpus) pair.
pub fn train(
    config: &TrainConfig,
    train_data: &[Instance],
    test_data: &[Instance],
    checkpoint_dir: Option<&Path>,
    verbose: bool,
) -> Result<TrainOutcome> {
    train_with_embeddings(config, train_data, test_data, checkpoint_dir, verbose, None)
}

/// [`train`] with pretrained embedding rows loaded over the initialized
/// table before the first update.
pub fn train_with_embeddings(
    config: &TrainConfig,
    train_data: &[Instance],
    test_data: &[Instance],
    checkpoint_dir: Option<&Path>,
    verbose: bool,
    pretrained_embeddings: Option<&Path>,
) -> Result<TrainOutcome> {
    let vocab = build_vocab(train_data, 1);
    let relations = build_relations(train_data);
    if relations.is_empty() {
        return Err(Error::invalid("training corpus has no relations"));
    }
    let model_config = self_config(config, &vocab, &relations);
    let t_max = model_config.decoder.max_triplets;

    let (train_prep, skipped_long) = prepare_corpus(
        train_data,
        &vocab,
        &relations,
        t_max,
        Some(config.max_train_len),
    )?;
    if verbose {
        if skipped_long > 0 {
            eprintln!("warning: skipped {skipped_long} over-length training sentences");
        }
        let truncated = train_prep.iter().filter(|p| p.truncated).count();
        if truncated > 0 {
            eprintln!(
                "warning: {truncated} sentences had more than {t_max} triplets; keeping the first {t_max}"
            );
        }
    }
    let (test_prep, _) = prepare_corpus(test_data, &vocab, &relations, t_max, None)?;
    if train_prep.is_empty() {
        return Err(Error::invalid("no usable training sentences"));
    }

    let mut master = Rng::new(config.seed);
    let model_seed = master.next_u64();
    let mut shuffle_rng = master.fork();
    let mut model = Model::new(model_config, model_seed);
    if let Some(path) = pretrained_embeddings {
        let hits = crate::encoder::load_embeddings(
            path,
            &vocab,
            &mut model.store,
            model.encoder.word_emb,
        )?;
        if verbose {
            eprintln!("loaded {hits} pretrained embedding rows (vocab {})", vocab.len());
        }
    }
    let mut adam = AdamState::new(&model.store, config.effective_lr());
    let lambda = config.effective_lambda();

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut order: Vec<usize> = (0..train_prep.len()).collect();

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for batch in order.chunks(config.batch_size.max(1)) {
            model.store.zero_grads();
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            let mut total = 0.0;
            for &idx in batch {
                let jl = model.joint_loss(&mut tape, &train_prep[idx], lambda)?;
                total += jl.total;
                losses.push(jl.node);
            }
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite batch loss at epoch {epoch} (grad norm {:.3e}); aborting",
                    model.store.grad_norm()
                )));
            }
            let summed = tape.add_all(&losses);
            let mean = tape.scale(summed, 1.0 / batch.len() as f64);
            tape.backward(mean, &mut model.store)?;
            model.store.clip_grad_norm(5.0);
            adam.step(&mut model.store);
            epoch_loss += total / batch.len() as f64;
            batches += 1.0;
        }

        if let Some(dir) = checkpoint_dir {
            checkpoint::save(&dir.join(format!("epoch_{epoch:03}")), &model, &vocab, &relations)?;
        }

        let is_eval_epoch = epoch % config.eval_every.max(1) == 0 || epoch == config.epochs;
        if is_eval_epoch {
            for (split, prep) in [("train", &train_prep), ("test", &test_prep)] {
                if prep.is_empty() {
                    continue;
                }
                let (report, loss_d, loss_e) =
                    eval_with_gold(&model, prep, &relations, EvalMode::Strict, true)?;
                rows.push(MetricsRow {
                    epoch,
                    split,
                    precision: report.precision,
                    recall: report.recall,
                    f1: report.f1,
                    rel_f1: report.relation_f1,
                    ent_f1: report.entity_f1,
                    loss_d,
                    loss_e,
                });
            }
            if verbose {
                let last = rows.last().expect("just pushed");
                eprintln!(
                    "epoch {epoch:3}: batch loss {:.4}, {} f1 {:.3}",
                    epoch_loss / batches.max(1.0),
                    last.split,
                    last.f1
                );
            }
        } else if verbose {
            eprintln!("epoch {epoch:3}: batch loss {:.4}", epoch_loss / batches.max(1.0));
        }
    }

    let csv = metrics_csv(&rows);
    Ok(TrainOutcome {
        model,
        vocab,
        relations,
        rows,
        csv,
        skipped_long,
    })
}

fn self_config(config: &TrainConfig, vocab: &Vocab, relations: &Relations) -> ModelConfig {
    config.model_config(vocab.len(), relations.len())
}

/// Evaluate prepared instances against gold triplet sets.
pub fn eval_with_gold(
    model: &Model,
    prepared: &[Prepared],
    relations: &Relations,
    mode: EvalMode,
    complete_spans: bool,
) -> Result<(EvalReport, f64, f64)> {
    let mut predictions = Vec::with_capacity(prepared.len());
    let mut gold = Vec::with_capacity(prepared.len());
    let mut sum_d = 0.0;
    let mut sum_e = 0.0;
    for p in prepared {
        predictions.push(model.predict(&p.token_ids, complete_spans)?);
        gold.push(gold_set(&p.instance, relations));
        let mut tape = Tape::inference();
        let jl = model.joint_loss(&mut tape, p, 1.0)?;
        sum_d += jl.decoder_loss;
        sum_e += jl.tagging_loss;
    }
    let report = evaluate(&predictions, &gold, mode)?;
    let n = prepared.len().max(1) as f64;
    Ok((report, sum_d / n, sum_e / n))
}

/// Evaluate a checkpointed model on a raw instance list.
pub fn evaluate_instances(
    model: &Model,
    instances: &[Instance],
    vocab: &Vocab,
    relations: &Relations,
    mode: EvalMode,
    complete_spans: bool,
) -> Result<EvalReport> {
    let t_max = model.config.decoder.max_triplets;
    let (prepared, _) = prepare_corpus(instances, vocab, relations, t_max, None)?;
    let (report, _, _) = eval_with_gold(model, &prepared, relations, mode, complete_spans)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    /// Max TV distance of the copy distribution across random decoder
    /// states (first sentences of the corpus).
    pub reduction_max_tv: f64,
    pub f1_masked: f64,
    pub f1_unmasked: f64,
    /// Fraction of predicted entity pairs matching gold only when
    /// reversed (masked decode).
    pub swap_rate: f64,
    /// Fraction of non-NA raw decodes with head == tail (unmasked).
    pub head_eq_tail_rate: f64,
}

pub fn diagnose(
    model: &Model,
    instances: &[Instance],
    vocab: &Vocab,
    relations: &Relations,
    trials: usize,
    seed: u64,
) -> Result<DiagnoseReport> {
    let t_max = model.config.decoder.max_triplets;
    let (prepared, _) = prepare_corpus(instances, vocab, relations, t_max, None)?;
    if prepared.is_empty() {
        return Err(Error::invalid("diagnose: empty corpus"));
    }

    // (a) state dependence of the copy distribution
    let mut rng = Rng::new(seed);
    let mut reduction_max_tv = 0.0f64;
    for p in prepared.iter().take(5) {
        let mut tape = Tape::inference();
        let enc = model.encoder.encode(&mut tape, &model.store, &p.token_ids)?;
        let report = reduction_check(&mut tape, &model.store, &model.decoder, &enc, trials, &mut rng)?;
        reduction_max_tv = reduction_max_tv.max(report.max_tv);
    }

    // (b) strict F1 with and without the head mask
    let masked = model.with_use_mask(true);
    let unmasked = model.with_use_mask(false);
    let (masked_report, _, _) = eval_with_gold(&masked, &prepared, relations, EvalMode::Strict, true)?;
    let (unmasked_report, _, _) =
        eval_with_gold(&unmasked, &prepared, relations, EvalMode::Strict, true)?;

    // (c) swap rate under the masked decode
    let mut swapped = 0usize;
    let mut pair_total = 0usize;
    // (d) head == tail rate under the unmasked decode
    let mut eq = 0usize;
    let mut eq_total = 0usize;
    for p in prepared.iter() {
        let gold = gold_set(&p.instance, relations);
        let gold_pairs: BTreeSet<_> = gold.iter().map(|t| (t.head, t.tail)).collect();
        let (tags, trace) = masked.decode_instance(&p.token_ids)?;
        for t in assemble(&trace.triplets, &tags, true) {
            pair_total += 1;
            let pair = (t.head, t.tail);
            let reversed = (t.tail, t.head);
            if !gold_pairs.contains(&pair) && gold_pairs.contains(&reversed) {
                swapped += 1;
            }
        }
        let (_, trace) = unmasked.decode_instance(&p.token_ids)?;
        for raw in &trace.raw {
            if let (Some(h), Some(t)) = (raw.head, raw.tail) {
                eq_total += 1;
                if h == t {
                    eq += 1;
                }
            }
        }
    }

    Ok(DiagnoseReport {
        reduction_max_tv,
        f1_masked: masked_report.f1,
        f1_unmasked: unmasked_report.f1,
        swap_rate: if pair_total > 0 {
            swapped as f64 / pair_total as f64
        } else {
            0.0
        },
        head_eq_tail_rate: if eq_total > 0 {
            eq as f64 / eq_total as f64
        } else {
            0.0
        },
    })
}
