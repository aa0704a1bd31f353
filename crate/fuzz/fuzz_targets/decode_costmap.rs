#![no_main]

use libfuzzer_sys::fuzz_target;
use planit_core::costmap::CostMap;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = CostMap::decode(data) {
        assert_eq!(map.encode(), data);
    }
});
