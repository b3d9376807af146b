//! The scripted flood-warning scenario: gauges publish river readings,
//! a monitor maps them into analyses, an engineer writes situation
//! reports, a council raises alerts, and a public feed mirrors them —
//! every stage a standing query, every hand-off ordinary tuples.
//!
//! Runs the bundled script twice to show the trace is byte-stable.

use gin::scenario::run_script_text;

fn main() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/flood_basic.gin-scenario"
    );
    let text = std::fs::read_to_string(path).expect("bundled scenario present");

    let report = run_script_text(&text).expect("script parses and validates");
    print!("{}", report.render());
    assert!(report.all_passed());

    // Alert provenance is also visible in the raw trace: pulls, pushes,
    // and each agent's publications, one JSON object per line.
    println!("\nfirst trace lines:");
    for line in report.trace.lines().take(5) {
        println!("  {line}");
    }
    println!("  … {} line(s) total", report.trace.lines().count());

    let again = run_script_text(&text).expect("second run");
    assert_eq!(report.trace, again.trace);
    println!("\nsecond run produced a byte-identical trace");
}
