//! The assembled model: encoder + CRF tagging head + copy decoder, the
//! joint loss of both heads, and the end-to-end predict pipeline.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Prepared;
use crate::decoder::{self, DecodeTrace, DecoderConfig, DecoderWeights};
use crate::encoder::EncoderWeights;
use crate::error::Result;
use crate::extraction::{assemble, ExtractedTriplet};
use crate::numerics::{NodeId, ParamStore, Rng, Tape};
use crate::tagger::{self, CrfParams, Tag, NUM_TAGS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub rel_count: usize,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// Small dimensions for CPU experiments.
    pub fn desk(vocab_size: usize, rel_count: usize, decoder: DecoderConfig) -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden: 64,
            vocab_size,
            rel_count,
            decoder,
        }
    }

    /// The dimensions reported with the original experiments
    /// (hidden 1000, embeddings 100, five triplet slots).
    pub fn paper(vocab_size: usize, rel_count: usize, decoder: DecoderConfig) -> Self {
        ModelConfig {
            embed_dim: 100,
            hidden: 1000,
            vocab_size,
            rel_count,
            decoder,
        }
    }
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderWeights,
    pub crf: CrfParams,
    pub decoder: DecoderWeights,
}

/// Joint loss value with its two components (values, for logging).
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub node: NodeId,
    pub total: f64,
    pub decoder_loss: f64,
    pub tagging_loss: f64,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderWeights::init(
            &mut store,
            config.vocab_size,
            config.embed_dim,
            config.hidden,
            &mut rng,
        );
        let crf = CrfParams::init(&mut store, config.hidden, &mut rng);
        let decoder = DecoderWeights::init(
            &mut store,
            config.decoder.clone(),
            encoder.word_emb,
            config.embed_dim,
            config.hidden,
            config.rel_count,
            &mut rng,
        );
        Model {
            config,
            store,
            encoder,
            crf,
            decoder,
        }
    }

    /// Weighted multi-task loss `lambda * L_tagging + L_decoder` for one
    /// prepared instance, recorded on `tape`.
    pub fn joint_loss(
        &self,
        tape: &mut Tape,
        prepared: &Prepared,
        lambda: f64,
    ) -> Result<JointLoss> {
        let enc = self.encoder.encode(tape, &self.store, &prepared.token_ids)?;
        let phi = self.crf.emissions(tape, &self.store, &enc.states);
        let trans = tape.param(&self.store, self.crf.trans);
        let tagging = tagger::crf_nll(tape, &phi, trans, &prepared.tags)?;
        let dec_loss = decoder::decoder_nll(tape, &self.store, &self.decoder, &enc, &prepared.target)?;
        let node = if lambda == 0.0 {
            dec_loss
        } else {
            let scaled = tape.scale(tagging, lambda);
            tape.add(scaled, dec_loss)
        };
        Ok(JointLoss {
            node,
            total: tape.scalar(node),
            decoder_loss: tape.scalar(dec_loss),
            tagging_loss: tape.scalar(tagging),
        })
    }

    /// Tags via Viterbi plus a greedy decode, on a throwaway tape.
    pub fn decode_instance(&self, token_ids: &[usize]) -> Result<(Vec<Tag>, DecodeTrace)> {
        let mut tape = Tape::inference();
        let enc = self.encoder.encode(&mut tape, &self.store, token_ids)?;
        let phi_nodes = self.crf.emissions(&mut tape, &self.store, &enc.states);
        let phi: Vec<[f64; NUM_TAGS]> = phi_nodes
            .iter()
            .map(|&n| {
                let v = tape.value(n).values();
                [v[0], v[1], v[2]]
            })
            .collect();
        let trans = self.crf.trans_values(&self.store);
        let tags = tagger::viterbi(&phi, &trans);
        let trace = decoder::greedy_decode(&mut tape, &self.store, &self.decoder, &enc)?;
        Ok((tags, trace))
    }

    /// Full prediction pipeline: encode, Viterbi tags, greedy decode,
    /// span completion (unless disabled), set assembly.
    pub fn predict(
        &self,
        token_ids: &[usize],
        complete_spans: bool,
    ) -> Result<BTreeSet<ExtractedTriplet>> {
        let (tags, trace) = self.decode_instance(token_ids)?;
        Ok(assemble(&trace.triplets, &tags, complete_spans))
    }

    /// Same model with the decode-time head mask toggled.
    pub fn with_use_mask(&self, use_mask: bool) -> Model {
        let mut config = self.config.clone();
        config.decoder.use_mask = use_mask;
        let mut decoder = self.decoder.clone();
        decoder.config.use_mask = use_mask;
        Model {
            config,
            store: self.store.clone(),
            encoder: self.encoder,
            crf: self.crf,
            decoder,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }
}
