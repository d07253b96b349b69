#![no_main]

use dsse::network::io::{parse_matpower, parse_native_json, to_native_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = parse_matpower(text) {
        let again = parse_native_json(&to_native_json(&g)).expect("exported case parses");
        assert_eq!(again.bus_count(), g.bus_count());
    }
});
