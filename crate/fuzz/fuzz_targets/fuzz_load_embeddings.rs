#![no_main]

use copymtl::data::Vocab;
use copymtl::encoder::load_embeddings_reader;
use copymtl::numerics::{DenseArray, ParamStore};
use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

// The embedding text loader over arbitrary bytes: errors are fine,
// panics and out-of-bounds writes are not.
fuzz_target!(|data: &[u8]| {
    let vocab = Vocab::from_tokens(
        ["<pad>", "<unk>", "<go>", "alpha", "beta"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .unwrap();
    let mut store = ParamStore::new();
    let table = store.register("emb", DenseArray::zeros(vec![vocab.len(), 4]));
    let _ = load_embeddings_reader(Cursor::new(data), &vocab, &mut store, table);
});
