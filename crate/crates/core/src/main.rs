fn main() {
    std::process::exit(anchored::cli::main_with_args(std::env::args_os()));
}
