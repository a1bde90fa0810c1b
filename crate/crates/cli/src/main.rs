fn main() {
    std::process::exit(metaphor_cli::cli::main_with(std::env::args_os()));
}
