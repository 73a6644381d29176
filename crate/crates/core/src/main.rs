fn main() {
    std::process::exit(hardlab::cli::run(std::env::args_os()));
}
