fn main() -> std::process::ExitCode {
    somno::cli::main_with_args(std::env::args_os())
}
