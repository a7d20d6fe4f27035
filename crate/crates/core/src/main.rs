fn main() {
    std::process::exit(dynmatch::cli::run_cli(std::env::args_os()));
}
