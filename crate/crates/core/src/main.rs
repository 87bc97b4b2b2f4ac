fn main() {
    std::process::exit(caltv::cli::main_with_args(std::env::args_os()));
}
