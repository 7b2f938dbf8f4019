fn main() {
    std::process::exit(acdg::cli::run_cli(std::env::args_os()));
}
