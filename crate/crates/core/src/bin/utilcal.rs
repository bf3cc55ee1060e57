fn main() {
    std::process::exit(utilcal::cli::run(std::env::args_os()));
}
