fn main() {
    std::process::exit(mvfuse::cli::run(std::env::args_os()));
}
