fn main() {
    std::process::exit(cheerbots::cli::run_cli(std::env::args_os()));
}
