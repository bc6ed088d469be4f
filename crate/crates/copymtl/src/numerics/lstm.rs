//! LSTM cell weights and the single-step API.
//!
//! Standard gated cell: input/forget/candidate/output gates with
//! sigmoid/tanh activations, forget-gate bias initialized to 1.0.

use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmWeights {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        let wx = store.register_uniform(format!("{prefix}.wx"), vec![in_dim, 4 * hidden], in_dim, rng);
        let wh = store.register_uniform(format!("{prefix}.wh"), vec![hidden, 4 * hidden], hidden, rng);
        let bias = store.register_zeros(format!("{prefix}.bias"), vec![4 * hidden]);
        // forget gate bias at 1.0 (layout [i | f | g | o])
        {
            let b = store.get_mut(bias).value.values_mut();
            for v in &mut b[hidden..2 * hidden] {
                *v = 1.0;
            }
        }
        LstmWeights {
            wx,
            wh,
            bias,
            in_dim,
            hidden,
        }
    }

    /// One step. Returns `(h', c')` nodes of the configured hidden size.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: NodeId,
        prev_hidden: NodeId,
        prev_cell: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        if tape.value(input).len() != self.in_dim {
            return Err(Error::invalid(format!(
                "lstm step: input dim {} != configured {}",
                tape.value(input).len(),
                self.in_dim
            )));
        }
        if tape.value(prev_hidden).len() != self.hidden
            || tape.value(prev_cell).len() != self.hidden
        {
            return Err(Error::invalid("lstm step: state dim mismatch"));
        }
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.bias);
        let hc = tape.lstm_cell(input, prev_hidden, prev_cell, wx, wh, b);
        let h = tape.slice(hc, 0, self.hidden);
        let c = tape.slice(hc, self.hidden, self.hidden);
        Ok((h, c))
    }
}
