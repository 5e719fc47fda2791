fn main() {
    std::process::exit(nmsim::cli::main_with_args(std::env::args_os()));
}
