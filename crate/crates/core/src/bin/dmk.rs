fn main() {
    std::process::exit(dmk::cli::main_with_args(std::env::args_os()));
}
