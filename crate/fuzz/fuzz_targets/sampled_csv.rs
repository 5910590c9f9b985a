#![no_main]

use libfuzzer_sys::fuzz_target;
use varexp::funcspec::{ColumnSpec, Interpolation, SampledData};

fuzz_target!(|data: &[u8]| {
    let (step, body) = match data.split_first() {
        Some((b, rest)) => (b & 1 == 1, rest),
        None => return,
    };
    let spec = ColumnSpec {
        interpolation: if step {
            Interpolation::Step
        } else {
            Interpolation::Linear
        },
        ..ColumnSpec::default()
    };
    let Ok(s) = SampledData::from_csv_reader(body, &spec) else {
        return;
    };
    let d = s.domain();
    for w in [0.0, 0.37, 0.5, 1.0] {
        let x = ((1.0 - w) * d.lo + w * d.hi).clamp(d.lo, d.hi);
        let v = s.eval(x).expect("points inside the grid evaluate");
        assert!(v.is_finite());
    }
});
