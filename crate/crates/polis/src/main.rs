fn main() {
    std::process::exit(polis::cli::main_with(std::env::args_os()));
}
