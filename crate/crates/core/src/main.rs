fn main() {
    std::process::exit(l2ends::cli::main_with_args(std::env::args_os()));
}
