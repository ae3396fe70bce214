//! The finite-difference gradient suite as a command.

use g3singer::gradsuite::{run_suite, SuiteOptions, SUITE_TOLERANCE};
use g3singer::numerics::GradCheckReport;

use crate::failure::{CmdResult, Failure, Kind};

pub fn run(options: &SuiteOptions) -> CmdResult<Vec<GradCheckReport>> {
    let reports = run_suite(options)?;
    let mut failed = 0;
    for r in &reports {
        let ok = r.passes(SUITE_TOLERANCE);
        failed += usize::from(!ok);
        println!("{:<40} {:>10.3e}  {}", r.name, r.max_rel_error(), if ok { "ok" } else { "FAIL" });
    }
    println!("{} checks, {failed} failed (tolerance {SUITE_TOLERANCE:e})", reports.len());
    if failed > 0 {
        return Err(Failure {
            kind: Kind::Numerical,
            error: anyhow::anyhow!("{failed} gradient checks exceeded the tolerance"),
        });
    }
    Ok(reports)
}
