fn main() {
    std::process::exit(qhead::cli::run(std::env::args_os()));
}
