#![no_main]

use libfuzzer_sys::fuzz_target;
use varexp_cli::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(s) {
        for (k, _) in cfg.global.iter().chain(cfg.sections.values().flat_map(|m| m.iter())) {
            assert!(!k.contains('_'));
        }
    }
});
