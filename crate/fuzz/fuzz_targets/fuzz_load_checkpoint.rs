#![no_main]

use copymtl::checkpoint::{manifest_from_slice, values_from_blob};
use libfuzzer_sys::fuzz_target;

// Checkpoint manifests are JSON from disk and blobs are raw bytes; both
// must be rejected cleanly when malformed. A manifest that parses must
// also gate mismatched blobs.
fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = manifest_from_slice(data) {
        // feed the manifest's own bytes back as a (usually wrong) blob
        let _ = values_from_blob(&manifest, data);
        let _ = values_from_blob(&manifest, &[]);
    }
});
