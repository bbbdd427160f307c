fn main() {
    std::process::exit(pdet::cli::run(std::env::args_os()));
}
