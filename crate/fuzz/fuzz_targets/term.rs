#![no_main]

use std::sync::OnceLock;

use freeop::signature::Signature;
use freeop::term::{parse_term, print_term};
use libfuzzer_sys::fuzz_target;

const ARITH: &str = r#"{
  "base_types": ["R"],
  "objects": [["R"], ["R", "R"]],
  "generators": [
    {"name": "inc", "dom": ["R"], "cod": ["R"]},
    {"name": "dbl", "dom": ["R"], "cod": ["R"]},
    {"name": "add", "dom": ["R", "R"], "cod": ["R"]},
    {"name": "dup", "dom": ["R"], "cod": ["R", "R"]}
  ]
}"#;

fn sig() -> &'static Signature {
    static S: OnceLock<Signature> = OnceLock::new();
    S.get_or_init(|| freeop::parse_signature(ARITH).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_term(text, sig()) {
        let back = parse_term(&print_term(&t), sig()).expect("printed term must reparse");
        assert_eq!(back, t);
        let c = t.canonical();
        assert_eq!(c.canonical(), c);
        assert_eq!((c.dom(), c.cod()), (t.dom(), t.cod()));
    }
});
