fn main() {
    std::process::exit(acharness::cli::main_with_args(std::env::args_os()));
}
