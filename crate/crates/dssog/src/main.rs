fn main() {
    std::process::exit(dssog::cli::run_cli(std::env::args_os()));
}
