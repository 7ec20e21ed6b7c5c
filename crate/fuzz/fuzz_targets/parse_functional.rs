#![no_main]
use libfuzzer_sys::fuzz_target;

use disperc::expr::parse_functional;
use disperc::lattice::enumerate_box;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(expr) = parse_functional(src) {
        // Resolution must reject out-of-range sites rather than panic.
        let lattice = enumerate_box(2, 9).unwrap();
        let _ = expr.resolve(&lattice);
    }
});
