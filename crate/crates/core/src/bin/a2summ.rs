fn main() {
    std::process::exit(a2summ::cli::main_with(std::env::args_os()));
}
