fn main() {
    std::process::exit(edain::cli::cli_main(std::env::args_os()));
}
