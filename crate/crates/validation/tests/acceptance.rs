use std::process::ExitCode;

use mec_offload_validation::criteria;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in criteria() {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let only: Vec<&String> = args.iter().filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for (name, check) in criteria() {
        if !only.is_empty() && !only.iter().any(|o| *o == name) {
            continue;
        }
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{name} {} {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
