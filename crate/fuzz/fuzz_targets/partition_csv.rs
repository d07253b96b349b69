#![no_main]

use dsse::partition::{read_partition_csv, write_partition_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = read_partition_csv(data) {
        let mut buf = Vec::new();
        write_partition_csv(&mut buf, &spec).expect("write to memory");
        assert_eq!(read_partition_csv(buf.as_slice()).expect("written spec parses"), spec);
    }
});
