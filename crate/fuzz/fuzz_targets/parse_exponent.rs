#![no_main]

use libfuzzer_sys::fuzz_target;
use varexp::exponents::VariableExponent;
use varexp::funcspec::Interval;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(p) = VariableExponent::parse(s, Interval::unit()) else {
        return;
    };
    for x in [0.0, 1e-9, 0.3, 0.5, 1.0] {
        let _ = p.at(x);
    }
    let _ = p.breakpoints(0.0, 1.0);
});
