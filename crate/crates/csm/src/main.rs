use std::process::ExitCode;

fn main() -> ExitCode {
    match csm::dispatch(&csm::cli().get_matches()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
