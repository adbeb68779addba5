#![no_main]

use holofol::brownian::{read_paths_csv, write_paths_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(paths) = read_paths_csv(data) {
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &paths).expect("write");
        assert_eq!(read_paths_csv(buf.as_slice()).expect("reread"), paths);
    }
});
