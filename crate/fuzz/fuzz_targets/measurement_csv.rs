#![no_main]

use dsse::measurement::{read_measurement_csv, write_measurement_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ms) = read_measurement_csv(data) {
        let mut buf = Vec::new();
        write_measurement_csv(&mut buf, &ms).expect("write to memory");
        let again = read_measurement_csv(buf.as_slice()).expect("written rows parse");
        assert_eq!(again.len(), ms.len());
    }
});
