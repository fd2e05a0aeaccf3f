fn main() {
    std::process::exit(eoc::cli::main_with_args(std::env::args_os()));
}
