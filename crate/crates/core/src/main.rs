fn main() {
    std::process::exit(mfplan::cli::main_with_args(std::env::args_os()));
}
