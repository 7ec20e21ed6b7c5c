#![no_main]
use libfuzzer_sys::fuzz_target;

use disperc::model::{decode_probabilities, encode_probabilities};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_probabilities(data, 16) {
        assert_eq!(v.probs.len(), 1 << v.n_sites);
        assert_eq!(encode_probabilities(&v.probs).unwrap(), data);
    }
});
