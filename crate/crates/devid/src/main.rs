fn main() -> std::process::ExitCode {
    devid::cli::run(std::env::args_os())
}
