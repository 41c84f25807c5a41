#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sig) = freeop::parse_signature(text) {
        let again = freeop::parse_signature(&sig.to_json()).expect("printed signature must reparse");
        assert_eq!(again.to_json(), sig.to_json());
        let _ = freeop::build_hypergraph(&sig, 3);
    }
});
