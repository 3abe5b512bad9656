//! Prints one PASS/FAIL line per acceptance criterion. Exits non-zero when a
//! criterion outside `KNOWN_FAILURES` fails. Pass criterion ids as arguments
//! to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use lfv_core::acceptance::{run_criterion, CRITERIA, KNOWN_FAILURES};

fn main() -> ExitCode {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u8> = CRITERIA
        .iter()
        .map(|c| c.0)
        .filter(|id| picked.is_empty() || picked.contains(id))
        .collect();
    let mut unexpected = 0;
    for id in ids {
        let t = Instant::now();
        let r = run_criterion(id);
        println!("{r} ({:.1}s)", t.elapsed().as_secs_f64());
        if !r.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected += 1;
        }
        if r.pass && KNOWN_FAILURES.contains(&id) {
            println!("note: criterion {id} is listed as a known failure but passed");
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criterion(s) failed");
        ExitCode::FAILURE
    }
}
