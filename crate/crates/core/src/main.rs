fn main() {
    std::process::exit(hidim::cli::run(std::env::args_os()));
}
