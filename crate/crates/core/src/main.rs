fn main() {
    std::process::exit(voltmono::cli::cli_main(std::env::args_os()));
}
