fn main() -> std::process::ExitCode {
    tuplelab::cli::run(std::env::args_os())
}
