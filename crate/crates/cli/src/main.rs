fn main() {
    std::process::exit(qh_cli::run_cli(std::env::args().collect()));
}
