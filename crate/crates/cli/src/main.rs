fn main() {
    std::process::exit(evoskill_cli::run_cli(std::env::args_os()));
}
