#![no_main]

use dsse::sparse::{parse_coordinate, write_coordinate};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(a) = parse_coordinate(text) {
        assert_eq!(
            parse_coordinate(&write_coordinate(&a)).expect("written matrix parses"),
            a
        );
    }
});
