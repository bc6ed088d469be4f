//! Linear-chain CRF tagging head over encoder states.
//!
//! Three tags (B, I, O) plus a virtual START row in the transition
//! matrix for the first token; there is no terminal transition. The
//! partition function runs the forward recursion in log space on the
//! tape, so its gradients come out of the same reverse sweep as
//! everything else. Viterbi and the exhaustive enumeration oracles work
//! on plain values.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Rng, Tape};

pub const NUM_TAGS: usize = 3;
/// Row index of the virtual START state in the transition matrix.
pub const START: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    B = 0,
    I = 1,
    O = 2,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Tag> {
        match i {
            0 => Ok(Tag::B),
            1 => Ok(Tag::I),
            2 => Ok(Tag::O),
            _ => Err(Error::invalid(format!("invalid tag id {i}"))),
        }
    }
}

/// Emission projection and transition scores.
#[derive(Debug, Clone, Copy)]
pub struct CrfParams {
    /// `[hidden, 3]` projection from encoder states to tag scores.
    pub emit_w: ParamId,
    /// `[3]` emission bias.
    pub emit_b: ParamId,
    /// `[4, 3]` transition scores; row 3 is the virtual START row.
    pub trans: ParamId,
}

impl CrfParams {
    pub fn init(store: &mut ParamStore, hidden: usize, rng: &mut Rng) -> Self {
        CrfParams {
            emit_w: store.register_uniform("crf.emit_w", vec![hidden, NUM_TAGS], hidden, rng),
            emit_b: store.register_zeros("crf.emit_b", vec![NUM_TAGS]),
            trans: store.register_uniform("crf.trans", vec![START + 1, NUM_TAGS], NUM_TAGS, rng),
        }
    }

    /// Per-token tag scores `phi[i] = h_i . emit_w + emit_b`, one `[3]`
    /// node per token.
    pub fn emissions(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: &[NodeId],
    ) -> Vec<NodeId> {
        let w = tape.param(store, self.emit_w);
        let b = tape.param(store, self.emit_b);
        states
            .iter()
            .map(|&h| {
                let lin = tape.vecmat(h, w);
                tape.add(lin, b)
            })
            .collect()
    }

    /// Transition matrix as plain values (for Viterbi and the oracles).
    pub fn trans_values(&self, store: &ParamStore) -> [[f64; NUM_TAGS]; START + 1] {
        let t = store.value(self.trans);
        let mut out = [[0.0; NUM_TAGS]; START + 1];
        for (r, row) in out.iter_mut().enumerate() {
            row.copy_from_slice(t.row(r));
        }
        out
    }
}

/// Unnormalized score of one tag path: emissions along the path plus
/// transitions, with the START row covering the first token.
pub fn path_score(
    tape: &mut Tape,
    phi: &[NodeId],
    trans: NodeId,
    tags: &[Tag],
) -> Result<NodeId> {
    if tags.len() != phi.len() {
        return Err(Error::invalid(format!(
            "path_score: {} tags for {} tokens",
            tags.len(),
            phi.len()
        )));
    }
    if phi.is_empty() {
        return Err(Error::invalid("path_score: empty sequence"));
    }
    let mut terms = Vec::with_capacity(2 * tags.len());
    let mut prev = START;
    for (i, &tag) in tags.iter().enumerate() {
        terms.push(tape.pick(phi[i], tag.index()));
        terms.push(tape.pick(trans, prev * NUM_TAGS + tag.index()));
        prev = tag.index();
    }
    Ok(tape.add_all(&terms))
}

/// log of the partition function via the forward recursion in log space.
pub fn log_partition(tape: &mut Tape, phi: &[NodeId], trans: NodeId) -> Result<NodeId> {
    if phi.is_empty() {
        return Err(Error::invalid("log_partition: empty sequence"));
    }
    let start_row = tape.row(trans, START);
    let mut alpha = tape.add(phi[0], start_row);
    for phi_i in &phi[1..] {
        let mut next = Vec::with_capacity(NUM_TAGS);
        for k in 0..NUM_TAGS {
            let col = tape.col(trans, k);
            // only the first NUM_TAGS entries (real tags) feed the recursion
            let col_real = tape.slice(col, 0, NUM_TAGS);
            let scores = tape.add(alpha, col_real);
            next.push(tape.logsumexp(scores));
        }
        let stacked = tape.stack(&next);
        alpha = tape.add(stacked, *phi_i);
    }
    Ok(tape.logsumexp(alpha))
}

/// Negative log-likelihood of the gold path: `logZ - score(gold)`.
pub fn crf_nll(
    tape: &mut Tape,
    phi: &[NodeId],
    trans: NodeId,
    gold: &[Tag],
) -> Result<NodeId> {
    let log_z = log_partition(tape, phi, trans)?;
    let gold_score = path_score(tape, phi, trans, gold)?;
    Ok(tape.sub(log_z, gold_score))
}

/// Max-product decoding over plain values. Ties break toward the lowest
/// tag id at each backtrack step, i.e. the returned path is minimal in
/// reversed-sequence lexicographic order among all maximum-score paths.
pub fn viterbi(phi: &[[f64; NUM_TAGS]], trans: &[[f64; NUM_TAGS]; START + 1]) -> Vec<Tag> {
    assert!(!phi.is_empty(), "viterbi: empty sequence");
    let n = phi.len();
    let mut delta = [0.0f64; NUM_TAGS];
    for k in 0..NUM_TAGS {
        delta[k] = phi[0][k] + trans[START][k];
    }
    let mut backptr = vec![[0usize; NUM_TAGS]; n];
    for i in 1..n {
        let mut next = [f64::NEG_INFINITY; NUM_TAGS];
        for k in 0..NUM_TAGS {
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..NUM_TAGS {
                let s = delta[j] + trans[j][k];
                if s > best {
                    best = s;
                    best_j = j;
                }
            }
            next[k] = best + phi[i][k];
            backptr[i][k] = best_j;
        }
        delta = next;
    }
    let mut best_k = 0;
    for k in 1..NUM_TAGS {
        if delta[k] > delta[best_k] {
            best_k = k;
        }
    }
    let mut path = vec![Tag::B; n];
    path[n - 1] = Tag::from_index(best_k).expect("in range");
    for i in (1..n).rev() {
        best_k = backptr[i][best_k];
        path[i - 1] = Tag::from_index(best_k).expect("in range");
    }
    path
}

fn score_of(path: &[Tag], phi: &[[f64; NUM_TAGS]], trans: &[[f64; NUM_TAGS]; START + 1]) -> f64 {
    let mut s = 0.0;
    let mut prev = START;
    for (i, tag) in path.iter().enumerate() {
        s += phi[i][tag.index()] + trans[prev][tag.index()];
        prev = tag.index();
    }
    s
}

fn enumerate_paths(n: usize) -> impl Iterator<Item = Vec<Tag>> {
    let total = NUM_TAGS.pow(n as u32);
    (0..total).map(move |mut code| {
        let mut path = Vec::with_capacity(n);
        for _ in 0..n {
            path.push(Tag::from_index(code % NUM_TAGS).expect("in range"));
            code /= NUM_TAGS;
        }
        path
    })
}

/// Exhaustive log-partition over all 3^n paths (test oracle, n <= 10).
pub fn brute_force_partition(
    phi: &[[f64; NUM_TAGS]],
    trans: &[[f64; NUM_TAGS]; START + 1],
) -> Result<f64> {
    if phi.is_empty() || phi.len() > 10 {
        return Err(Error::invalid("brute_force_partition: need 1 <= n <= 10"));
    }
    let scores: Vec<f64> = enumerate_paths(phi.len())
        .map(|p| score_of(&p, phi, trans))
        .collect();
    Ok(crate::numerics::array::logsumexp_slice(&scores))
}

/// Exhaustive argmax path under the same tie rule as [`viterbi`]
/// (test oracle, n <= 10).
pub fn brute_force_best_path(
    phi: &[[f64; NUM_TAGS]],
    trans: &[[f64; NUM_TAGS]; START + 1],
) -> Result<Vec<Tag>> {
    if phi.is_empty() || phi.len() > 10 {
        return Err(Error::invalid("brute_force_best_path: need 1 <= n <= 10"));
    }
    let mut best: Option<(f64, Vec<Tag>)> = None;
    for path in enumerate_paths(phi.len()) {
        let s = score_of(&path, phi, trans);
        let replace = match &best {
            None => true,
            Some((bs, bp)) => {
                if s > *bs {
                    true
                } else if s == *bs {
                    // reversed-sequence lexicographic minimum
                    let rev_new = path.iter().rev().map(|t| t.index());
                    let rev_old = bp.iter().rev().map(|t| t.index());
                    rev_new.cmp(rev_old) == std::cmp::Ordering::Less
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some((s, path));
        }
    }
    Ok(best.expect("non-empty enumeration").1)
}
