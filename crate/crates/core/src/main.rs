fn main() {
    std::process::exit(contracta::cli::run_cli(std::env::args_os()));
}
