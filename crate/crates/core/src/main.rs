fn main() {
    std::process::exit(zstar::harness::cli::cli_main(std::env::args_os()));
}
