fn main() {
    std::process::exit(gtmancer::cli::run(std::env::args_os()));
}
