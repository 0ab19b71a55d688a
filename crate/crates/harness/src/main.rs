use std::process::ExitCode;

use longjump_harness::cli;
use longjump_harness::output::OUT_ENV;

fn main() -> ExitCode {
    ExitCode::from(cli::run(std::env::args_os(), std::env::var_os(OUT_ENV)))
}
