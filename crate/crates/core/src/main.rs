fn main() {
    std::process::exit(rvb::cli::main_with_args(std::env::args_os()));
}
