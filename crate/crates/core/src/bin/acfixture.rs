//! Synthetic target algorithm driven by a landscape file.

use acharness::synthetic::{plan, run_fixture, FixtureArgs};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let parsed = match FixtureArgs::parse(&args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("acfixture: {e}");
            std::process::exit(2);
        }
    };
    let p = match plan(&parsed) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("acfixture: {e}");
            std::process::exit(2);
        }
    };
    std::process::exit(run_fixture(&p));
}
