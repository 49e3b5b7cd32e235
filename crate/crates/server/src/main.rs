fn main() {
    std::process::exit(breathlens_server::cli::run(std::env::args_os()));
}
