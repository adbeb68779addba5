#![no_main]

use holofol::complex::{format_complex_list, parse_complex_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(zs) = parse_complex_list(text) {
        let again = parse_complex_list(&format_complex_list(&zs)).expect("formatted list parses");
        assert_eq!(zs, again);
    }
});
