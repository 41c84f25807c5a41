#![no_main]

use freeop::tasks::read_dataset;
use freeop::Ty;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let r: Ty = "[R]".parse().unwrap();
    let rr: Ty = "[R*R]".parse().unwrap();
    if let Ok(d) = read_dataset(data, &r, &r) {
        assert!(d.records().iter().all(|rec| rec.inputs.iter().chain(&rec.outputs).all(|v| v.is_finite())));
    }
    let _ = read_dataset(data, &rr, &r);
});
