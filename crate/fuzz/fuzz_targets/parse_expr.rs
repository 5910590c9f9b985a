#![no_main]

use libfuzzer_sys::fuzz_target;
use varexp::funcspec::parse_expr;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(e) = parse_expr(s) else { return };
    // The printed form must parse back to an expression with the same values.
    let again = parse_expr(&e.to_string()).expect("printed expression reparses");
    for x in [-3.5, -1.0, 0.0, 0.25, 1.0, 7.0] {
        let (a, b) = (e.eval(x), again.eval(x));
        if let (Ok(a), Ok(b)) = (a, b) {
            assert!(a == b || (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
});
