fn main() {
    std::process::exit(keratoscan::cli::run_cli(std::env::args_os()));
}
