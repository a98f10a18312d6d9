fn main() {
    std::process::exit(gslab::cli::run_from(std::env::args_os()));
}
