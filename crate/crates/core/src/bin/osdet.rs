fn main() {
    std::process::exit(osdet::cli::run(std::env::args_os()));
}
