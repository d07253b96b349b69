#![no_main]

use dsse::partition::{read_pmu_csv, write_pmu_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_pmu_csv(data) {
        let mut buf = Vec::new();
        write_pmu_csv(&mut buf, records.values()).expect("write to memory");
        let again = read_pmu_csv(buf.as_slice()).expect("written records parse");
        assert_eq!(again.len(), records.len());
    }
});
