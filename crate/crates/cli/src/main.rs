use clap::Parser;

fn main() -> std::process::ExitCode {
    match dan_cli::execute(dan_cli::Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
