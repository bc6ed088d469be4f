#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

// The JSONL dataset parser must reject arbitrary input with an error,
// never a panic, and spans in accepted instances must be in range.
fuzz_target!(|data: &[u8]| {
    if let Ok(instances) = copymtl::data::parse_reader(Cursor::new(data)) {
        for inst in &instances {
            let n = inst.tokens.len();
            for t in &inst.triplets {
                assert!(t.head.0 <= t.head.1 && t.head.1 < n);
                assert!(t.tail.0 <= t.tail.1 && t.tail.1 < n);
            }
        }
    }
});
