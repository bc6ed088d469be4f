//! Token embeddings plus a bidirectional LSTM encoder whose two
//! directions are averaged per position. The averaged final states
//! initialize the decoder.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::{Vocab, PAD};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, LstmWeights, NodeId, ParamId, ParamStore, Rng, Tape};

#[derive(Debug, Clone, Copy)]
pub struct EncoderWeights {
    /// `[vocab, d_e]` word embedding table.
    pub word_emb: ParamId,
    pub fwd: LstmWeights,
    pub bwd: LstmWeights,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl EncoderWeights {
    pub fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        // embedding rows use the embedding width as fan-in
        let word_emb =
            store.register_uniform("emb.word", vec![vocab_size, embed_dim], embed_dim, rng);
        let fwd = LstmWeights::init(store, "enc.fwd", embed_dim, hidden, rng);
        let bwd = LstmWeights::init(store, "enc.bwd", embed_dim, hidden, rng);
        EncoderWeights {
            word_emb,
            fwd,
            bwd,
            embed_dim,
            hidden,
        }
    }

    /// Embedding lookup, one `[d_e]` node per token id.
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Result<Vec<NodeId>> {
        let vocab_rows = store.value(self.word_emb).rows();
        token_ids
            .iter()
            .map(|&id| {
                if id >= vocab_rows {
                    return Err(Error::invalid(format!(
                        "token id {id} out of range for vocab of {vocab_rows}"
                    )));
                }
                Ok(tape.param_row(store, self.word_emb, id))
            })
            .collect()
    }

    /// Full encode: embeddings, both LSTM directions, per-position
    /// averaging. PAD ids are marked invalid in the output mask.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Result<EncoderOutput> {
        if token_ids.is_empty() {
            return Err(Error::invalid("encode: empty sentence"));
        }
        let embeddings = self.embed(tape, store, token_ids)?;
        let n = embeddings.len();

        let zero_h = tape.constant(DenseArray::zeros(vec![self.hidden]));
        let zero_c = tape.constant(DenseArray::zeros(vec![self.hidden]));

        let mut fwd_states = Vec::with_capacity(n);
        let (mut h, mut c) = (zero_h, zero_c);
        for &e in &embeddings {
            let (nh, nc) = self.fwd.step(tape, store, e, h, c)?;
            fwd_states.push(nh);
            h = nh;
            c = nc;
        }
        let (fwd_final_h, fwd_final_c) = (h, c);

        let mut bwd_states = vec![zero_h; n];
        let (mut h, mut c) = (zero_h, zero_c);
        for (i, &e) in embeddings.iter().enumerate().rev() {
            let (nh, nc) = self.bwd.step(tape, store, e, h, c)?;
            bwd_states[i] = nh;
            h = nh;
            c = nc;
        }
        let (bwd_final_h, bwd_final_c) = (h, c);

        let states: Vec<NodeId> = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| {
                let s = tape.add(f, b);
                tape.scale(s, 0.5)
            })
            .collect();
        let matrix = tape.stack_rows(&states);

        let ih = tape.add(fwd_final_h, bwd_final_h);
        let init_h = tape.scale(ih, 0.5);
        let ic = tape.add(fwd_final_c, bwd_final_c);
        let init_c = tape.scale(ic, 0.5);

        Ok(EncoderOutput {
            states,
            matrix,
            init_h,
            init_c,
            valid: token_ids.iter().map(|&id| id != PAD).collect(),
            token_ids: token_ids.to_vec(),
        })
    }
}

/// Per-token encoder states plus the state used to start the decoder.
pub struct EncoderOutput {
    /// One averaged `[hidden]` node per input token.
    pub states: Vec<NodeId>,
    /// The same states stacked into an `[n, hidden]` node.
    pub matrix: NodeId,
    pub init_h: NodeId,
    pub init_c: NodeId,
    /// False at PAD positions; attention and copy logits mask these out.
    pub valid: Vec<bool>,
    pub token_ids: Vec<usize>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

// ── Pretrained embedding files ───────────────────────────────────────

/// Load pretrained embeddings in text format (token followed by
/// `embed_dim` floats per line) into the table rows of matching vocab
/// tokens. Returns the number of rows overwritten.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    store: &mut ParamStore,
    word_emb: ParamId,
) -> Result<usize> {
    load_embeddings_reader(BufReader::new(File::open(path)?), vocab, store, word_emb)
}

/// Reader-based variant of [`load_embeddings`].
pub fn load_embeddings_reader<R: BufRead>(
    reader: R,
    vocab: &Vocab,
    store: &mut ParamStore,
    word_emb: ParamId,
) -> Result<usize> {
    let embed_dim = store.value(word_emb).cols();
    let mut hits = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| Error::data(line_no, "missing token"))?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::data(line_no, format!("bad float {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != embed_dim {
            return Err(Error::data(
                line_no,
                format!("expected {embed_dim} dims, got {}", values.len()),
            ));
        }
        if vocab.contains(token) {
            let id = vocab.id(token);
            store
                .get_mut(word_emb)
                .value
                .row_mut(id)
                .copy_from_slice(&values);
            hits += 1;
        }
    }
    Ok(hits)
}

/// Write the whole table in the same text format; floats use Rust's
/// shortest round-trip formatting, so save/load is bit-exact.
pub fn save_embeddings(
    path: &Path,
    vocab: &Vocab,
    store: &ParamStore,
    word_emb: ParamId,
) -> Result<()> {
    let mut file = File::create(path)?;
    let table = store.value(word_emb);
    for (id, token) in vocab.tokens().iter().enumerate() {
        write!(file, "{token}")?;
        for v in table.row(id) {
            write!(file, " {v}")?;
        }
        file.write_all(b"\n")?;
    }
    Ok(())
}
