fn main() {
    std::process::exit(lotail::cli::main_with_args(std::env::args_os()));
}
