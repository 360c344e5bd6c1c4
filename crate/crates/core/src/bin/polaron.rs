fn main() {
    std::process::exit(polaron_core::cli::main_with_args(std::env::args().collect()));
}
