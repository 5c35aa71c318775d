fn main() {
    std::process::exit(vsrl_cli::cli_main(std::env::args_os()));
}
