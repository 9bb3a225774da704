fn main() -> std::process::ExitCode {
    tracer_cli::run(std::env::args_os())
}
