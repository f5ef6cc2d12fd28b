fn main() {
    std::process::exit(composability_cli::run_with_args(std::env::args_os()));
}
