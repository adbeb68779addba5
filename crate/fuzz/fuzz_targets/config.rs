#![no_main]

use holofol::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let dumped = cfg.dump();
        let back = RunConfig::parse(&dumped).expect("dump parses");
        assert_eq!(back, cfg);
        assert_eq!(back.dump(), dumped);
    }
});
