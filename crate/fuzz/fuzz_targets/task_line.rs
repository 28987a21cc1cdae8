#![no_main]

use cappy::corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(inst) = corpus::parse_task_line(line) {
            assert!(inst.validate().is_ok());
            let again = serde_json::to_string(&inst).unwrap();
            assert_eq!(corpus::parse_task_line(&again).unwrap(), inst);
        }
    }
});
