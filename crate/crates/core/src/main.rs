fn main() {
    std::process::exit(phiot::cli::run(std::env::args_os()));
}
