//! Attention LSTM decoder that emits one (relation, head, tail) triplet
//! every three time steps, by pointing into the source sentence.
//!
//! Two copy scorers are provided. The linear scorer collapses
//! algebraically: `[h_t; h_i] . w` splits into a position-independent
//! offset plus a per-position term, so after softmax the copy
//! distribution does not depend on the decoder state at all: head and
//! tail steps see the same distribution and only the head mask keeps
//! them apart. The fused scorer inserts a selu layer before the output
//! projection, which breaks that reduction and makes the mask optional.

use crate::data::{TargetSequence, UNK};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::numerics::{LstmWeights, NodeId, ParamId, ParamStore, Rng, Tape};

/// Additive logit for positions that must not win a softmax.
pub const NEG_INF: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Scorer {
    /// `q_i = [h_t; h_i] . w_e`, the defective original.
    Linear,
    /// `q_i = selu([h_t; h_i] . w_f) . w_o`, the fix.
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DecoderMode {
    /// One decoder shared by all triplet slots.
    One,
    /// Per-slot decoder LSTM, relation head, NA head, and copy scorer;
    /// the hidden state and input feedback still chain across slots.
    Multi,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub scorer: Scorer,
    pub use_mask: bool,
    pub max_triplets: usize,
    pub mode: DecoderMode,
    /// Width of the fused scorer's hidden layer (defaults to the
    /// decoder hidden size).
    pub fused_width: usize,
}

/// Role of time step `t`, counted from 1: R, H, T, R, H, T, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRole {
    Relation,
    HeadCopy,
    TailCopy,
}

impl StepRole {
    pub fn of(t: usize) -> StepRole {
        debug_assert!(t >= 1, "time steps count from 1");
        match t % 3 {
            1 => StepRole::Relation,
            2 => StepRole::HeadCopy,
            _ => StepRole::TailCopy,
        }
    }
}

/// Decoder output for one slot before span completion: relation id and
/// last-token pointers, or all-NA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawTriplet {
    pub relation: Option<usize>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
}

impl RawTriplet {
    pub const NA: RawTriplet = RawTriplet {
        relation: None,
        head: None,
        tail: None,
    };

    pub fn is_na(&self) -> bool {
        self.relation.is_none() && self.head.is_none() && self.tail.is_none()
    }
}

/// Per-step argmax picks of one greedy decode, before NA normalization.
#[derive(Debug, Clone, Copy)]
pub struct SlotPrediction {
    pub relation: Option<usize>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DecodeTrace {
    /// Exactly `max_triplets` entries; slots with any NA symbol are
    /// normalized to all-NA.
    pub triplets: Vec<RawTriplet>,
    /// Raw per-slot picks (NA not normalized) for diagnostics.
    pub raw: Vec<SlotPrediction>,
}

// ── Weights ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub enum ScorerWeights {
    Linear { w_e: ParamId },
    Fused { w_f: ParamId, w_o: ParamId },
}

/// Weights owned by one decoder slot (all of them for OneDecoder).
#[derive(Debug, Clone, Copy)]
pub struct SlotWeights {
    pub lstm: LstmWeights,
    /// `[hidden, rel]` relation output projection.
    pub w_r: ParamId,
    /// `[hidden]` shared NA head for relations and both copy steps.
    pub w_na: ParamId,
    pub scorer: ScorerWeights,
}

#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub config: DecoderConfig,
    /// `[(d_e + hidden), d_e]` projection of [input embedding; context].
    pub w_u: ParamId,
    /// `[2*hidden, hidden]` additive attention projection.
    pub attn_w: ParamId,
    /// `[hidden]` additive attention probe.
    pub attn_v: ParamId,
    /// `[rel+1, d_e]` relation embeddings; last row is the NA relation.
    pub rel_emb: ParamId,
    /// `[d_e]` GO embedding fed at t = 1.
    pub go: ParamId,
    /// Shared with the encoder; supplies copy-step feedback embeddings.
    pub word_emb: ParamId,
    pub slots: Vec<SlotWeights>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub rel_count: usize,
}

impl DecoderWeights {
    pub fn init(
        store: &mut ParamStore,
        config: DecoderConfig,
        word_emb: ParamId,
        embed_dim: usize,
        hidden: usize,
        rel_count: usize,
        rng: &mut Rng,
    ) -> Self {
        let w_u = store.register_uniform(
            "dec.w_u",
            vec![embed_dim + hidden, embed_dim],
            embed_dim + hidden,
            rng,
        );
        let attn_w = store.register_uniform("dec.attn_w", vec![2 * hidden, hidden], 2 * hidden, rng);
        let attn_v = store.register_uniform("dec.attn_v", vec![hidden], hidden, rng);
        let rel_emb =
            store.register_uniform("dec.rel_emb", vec![rel_count + 1, embed_dim], embed_dim, rng);
        let go = store.register_uniform("dec.go", vec![embed_dim], embed_dim, rng);

        let slot_count = match config.mode {
            DecoderMode::One => 1,
            DecoderMode::Multi => config.max_triplets,
        };
        let slots = (0..slot_count)
            .map(|s| {
                let prefix = format!("dec.slot{s}");
                let lstm = LstmWeights::init(store, &format!("{prefix}.lstm"), embed_dim, hidden, rng);
                let w_r = store.register_uniform(
                    format!("{prefix}.w_r"),
                    vec![hidden, rel_count],
                    hidden,
                    rng,
                );
                let w_na =
                    store.register_uniform(format!("{prefix}.w_na"), vec![hidden], hidden, rng);
                let scorer = match config.scorer {
                    Scorer::Linear => ScorerWeights::Linear {
                        w_e: store.register_uniform(
                            format!("{prefix}.w_e"),
                            vec![2 * hidden],
                            2 * hidden,
                            rng,
                        ),
                    },
                    Scorer::Fused => ScorerWeights::Fused {
                        w_f: store.register_uniform(
                            format!("{prefix}.w_f"),
                            vec![2 * hidden, config.fused_width],
                            2 * hidden,
                            rng,
                        ),
                        w_o: store.register_uniform(
                            format!("{prefix}.w_o"),
                            vec![config.fused_width],
                            config.fused_width,
                            rng,
                        ),
                    },
                };
                SlotWeights {
                    lstm,
                    w_r,
                    w_na,
                    scorer,
                }
            })
            .collect();

        DecoderWeights {
            config,
            w_u,
            attn_w,
            attn_v,
            rel_emb,
            go,
            word_emb,
            slots,
            embed_dim,
            hidden,
            rel_count,
        }
    }

    fn slot(&self, index: usize) -> &SlotWeights {
        match self.config.mode {
            DecoderMode::One => &self.slots[0],
            DecoderMode::Multi => &self.slots[index],
        }
    }

    /// Index of the NA symbol in relation logits.
    pub fn rel_na(&self) -> usize {
        self.rel_count
    }
}

// ── Forward pieces ───────────────────────────────────────────────────

/// Attentive context: softmax over additive scores of the previous
/// decoder state against every encoder state; PAD positions score
/// `NEG_INF`.
pub fn attention(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    h_prev: NodeId,
    enc: &EncoderOutput,
) -> NodeId {
    let w = tape.param(store, dec.attn_w);
    let v = tape.param(store, dec.attn_v);
    let scores = tape.attn_scores(h_prev, enc.matrix, w, v);
    let masked = tape.mask_fill(scores, enc.valid.clone(), NEG_INF);
    let alpha = tape.softmax(masked);
    tape.vecmat(alpha, enc.matrix)
}

/// One decoder LSTM step on the projected [embedding; context] input.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    slot: &SlotWeights,
    input_emb: NodeId,
    context: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let w_u = tape.param(store, dec.w_u);
    let u = tape.concat_matmul(input_emb, context, w_u);
    slot.lstm.step(tape, store, u, h_prev, c_prev)
}

/// Copy confidence for every source position under the configured scorer.
pub fn copy_scores(
    tape: &mut Tape,
    store: &ParamStore,
    slot: &SlotWeights,
    h_t: NodeId,
    enc: &EncoderOutput,
) -> NodeId {
    match slot.scorer {
        ScorerWeights::Linear { w_e } => {
            let w = tape.param(store, w_e);
            tape.copy_scores_linear(h_t, enc.matrix, w)
        }
        ScorerWeights::Fused { w_f, w_o } => {
            let wf = tape.param(store, w_f);
            let wo = tape.param(store, w_o);
            tape.copy_scores_fused(h_t, enc.matrix, wf, wo)
        }
    }
}

/// NA confidence; the same head serves relation and both copy steps.
pub fn na_score(tape: &mut Tape, store: &ParamStore, slot: &SlotWeights, h_t: NodeId) -> NodeId {
    let w = tape.param(store, slot.w_na);
    tape.dot(h_t, w)
}

/// Head position recorded within the current triplet, for the tail mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaskState {
    /// `None` until the head step of the current triplet has run;
    /// `Some(None)` after an NA head.
    head: Option<Option<usize>>,
}

impl MaskState {
    pub fn reset(&mut self) {
        self.head = None;
    }

    pub fn record_head(&mut self, position: Option<usize>) {
        self.head = Some(position);
    }

    pub fn recorded(&self) -> Result<Option<usize>> {
        self.head
            .ok_or_else(|| Error::invalid("tail mask requested before any head step"))
    }
}

/// Logits for one time step per its role. Relation steps produce
/// `rel + 1` logits, copy steps `n + 1`, with the NA score appended and
/// PAD positions at `NEG_INF`. With the mask on, the tail step drives
/// the recorded head position to `NEG_INF`.
#[allow(clippy::too_many_arguments)]
pub fn step_logits(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    slot: &SlotWeights,
    role: StepRole,
    h_t: NodeId,
    enc: &EncoderOutput,
    mask: &MaskState,
) -> Result<NodeId> {
    let q_na = na_score(tape, store, slot, h_t);
    match role {
        StepRole::Relation => {
            let w_r = tape.param(store, slot.w_r);
            let rel_logits = tape.vecmat(h_t, w_r);
            Ok(tape.concat(rel_logits, q_na))
        }
        StepRole::HeadCopy => {
            let q = copy_scores(tape, store, slot, h_t, enc);
            let masked = tape.mask_fill(q, enc.valid.clone(), NEG_INF);
            Ok(tape.concat(masked, q_na))
        }
        StepRole::TailCopy => {
            let q = copy_scores(tape, store, slot, h_t, enc);
            let mut keep = enc.valid.clone();
            if dec.config.use_mask {
                if let Some(head_pos) = mask.recorded()? {
                    keep[head_pos] = false;
                }
            }
            let masked = tape.mask_fill(q, keep, NEG_INF);
            Ok(tape.concat(masked, q_na))
        }
    }
}

// ── Teacher-forced loss ──────────────────────────────────────────────

/// Cross-entropy decoder loss over the 3T teacher-forced steps; gold
/// symbols are fed back as the next inputs.
pub fn decoder_nll(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    enc: &EncoderOutput,
    target: &TargetSequence,
) -> Result<NodeId> {
    if target.slots().len() != dec.config.max_triplets {
        return Err(Error::invalid(format!(
            "target has {} slots, decoder expects {}",
            target.slots().len(),
            dec.config.max_triplets
        )));
    }
    let n = enc.len();
    for slot in target.slots() {
        for ptr in [slot.head, slot.tail].into_iter().flatten() {
            if ptr >= n {
                return Err(Error::invalid(format!(
                    "target pointer {ptr} out of range for {n} tokens"
                )));
            }
        }
    }

    let mut h = enc.init_h;
    let mut c = enc.init_c;
    let mut input = tape.param(store, dec.go);
    let mut mask = MaskState::default();
    let mut losses = Vec::with_capacity(3 * dec.config.max_triplets);

    for (s, gold) in target.slots().iter().enumerate() {
        let slot = dec.slot(s);

        // relation step
        mask.reset();
        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::Relation, h, enc, &mask)?;
        let rel_target = gold.relation.unwrap_or(dec.rel_na());
        losses.push(tape.cross_entropy(logits, rel_target));
        let rel_row = gold.relation.unwrap_or(dec.rel_count);
        input = tape.param_row(store, dec.rel_emb, rel_row);

        // head copy step
        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::HeadCopy, h, enc, &mask)?;
        let head_target = gold.head.unwrap_or(n);
        losses.push(tape.cross_entropy(logits, head_target));
        // a gold tail equal to the head position would be masked to
        // NEG_INF; leave the mask unarmed for such degenerate gold
        let mask_head = match (gold.head, gold.tail) {
            (Some(hp), Some(tp)) if hp == tp => None,
            (head, _) => head,
        };
        mask.record_head(mask_head);
        input = feedback_word(tape, store, dec, enc, gold.head);

        // tail copy step
        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::TailCopy, h, enc, &mask)?;
        let tail_target = gold.tail.unwrap_or(n);
        losses.push(tape.cross_entropy(logits, tail_target));
        input = feedback_word(tape, store, dec, enc, gold.tail);
    }

    Ok(tape.add_all(&losses))
}

/// Word embedding of the token at a copied position; UNK row after NA.
fn feedback_word(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    enc: &EncoderOutput,
    position: Option<usize>,
) -> NodeId {
    let token_id = position.map_or(UNK, |p| enc.token_ids[p]);
    tape.param_row(store, dec.word_emb, token_id)
}

// ── Greedy decoding ──────────────────────────────────────────────────

/// First maximum wins; deterministic under ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decode: argmax at every step, predictions fed back as inputs.
/// Always emits exactly `max_triplets` slots; there is no end-of-sequence
/// symbol, padding decodes as all-NA.
pub fn greedy_decode(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    enc: &EncoderOutput,
) -> Result<DecodeTrace> {
    let n = enc.len();
    let mut h = enc.init_h;
    let mut c = enc.init_c;
    let mut input = tape.param(store, dec.go);
    let mut mask = MaskState::default();
    let mut triplets = Vec::with_capacity(dec.config.max_triplets);
    let mut raw = Vec::with_capacity(dec.config.max_triplets);

    for s in 0..dec.config.max_triplets {
        let slot = dec.slot(s);

        mask.reset();
        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::Relation, h, enc, &mask)?;
        let pick = argmax(tape.value(logits).values());
        let relation = (pick < dec.rel_na()).then_some(pick);
        input = tape.param_row(store, dec.rel_emb, relation.unwrap_or(dec.rel_count));

        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::HeadCopy, h, enc, &mask)?;
        let pick = argmax(tape.value(logits).values());
        let head = (pick < n).then_some(pick);
        mask.record_head(head);
        input = feedback_word(tape, store, dec, enc, head);

        let ctx = attention(tape, store, dec, h, enc);
        let (nh, nc) = decoder_step(tape, store, dec, slot, input, ctx, h, c)?;
        h = nh;
        c = nc;
        let logits = step_logits(tape, store, dec, slot, StepRole::TailCopy, h, enc, &mask)?;
        let pick = argmax(tape.value(logits).values());
        let tail = (pick < n).then_some(pick);
        input = feedback_word(tape, store, dec, enc, tail);

        raw.push(SlotPrediction {
            relation,
            head,
            tail,
        });
        // any NA symbol normalizes the whole slot to all-NA
        triplets.push(match (relation, head, tail) {
            (Some(r), Some(hp), Some(tp)) => RawTriplet {
                relation: Some(r),
                head: Some(hp),
                tail: Some(tp),
            },
            _ => RawTriplet::NA,
        });
    }

    Ok(DecodeTrace { triplets, raw })
}

// ── Reduction diagnostic ─────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ReductionReport {
    /// Max total-variation distance between NA-excluded copy
    /// distributions across the sampled decoder states.
    pub max_tv: f64,
    pub trials: usize,
}

/// Probe whether the copy distribution depends on the decoder state:
/// sample random states in (-1, 1), compute each one's NA-excluded copy
/// distribution over the sentence, and report the largest pairwise
/// total-variation distance. The linear scorer provably yields 0 (up to
/// rounding); the fused scorer does not.
pub fn reduction_check(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderWeights,
    enc: &EncoderOutput,
    trials: usize,
    rng: &mut Rng,
) -> Result<ReductionReport> {
    if trials < 1 {
        return Err(Error::invalid("reduction_check: trials must be >= 1"));
    }
    let slot = dec.slot(0);
    let mut dists: Vec<Vec<f64>> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let state: Vec<f64> = (0..dec.hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let h = tape.constant(crate::numerics::DenseArray::vector(state));
        let q = copy_scores(tape, store, slot, h, enc);
        let masked = tape.mask_fill(q, enc.valid.clone(), NEG_INF);
        let p = tape.softmax(masked);
        dists.push(tape.value(p).values().to_vec());
    }
    let mut max_tv = 0.0f64;
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            let tv = 0.5
                * dists[i]
                    .iter()
                    .zip(&dists[j])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            if tv > max_tv {
                max_tv = tv;
            }
        }
    }
    Ok(ReductionReport { max_tv, trials })
}
