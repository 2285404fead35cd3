fn main() {
    std::process::exit(dtc_cli::run(std::env::args_os()));
}
