fn main() {
    std::process::exit(dagger_core::cli::main_with_args(std::env::args_os()));
}
