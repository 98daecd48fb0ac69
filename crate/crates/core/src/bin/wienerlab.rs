fn main() {
    std::process::exit(wienerlab::cli::main_with_args(std::env::args_os()));
}
