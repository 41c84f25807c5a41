#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = freeop::parse_diagram(text) {
        let _ = freeop::validate_wiring(&d);
    }
});
