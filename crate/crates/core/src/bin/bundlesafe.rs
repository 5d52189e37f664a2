fn main() {
    std::process::exit(bundlesafe::cli::main_with_args(std::env::args_os()));
}
