fn main() {
    std::process::exit(aiperf::cli::cli_main(std::env::args_os()));
}
