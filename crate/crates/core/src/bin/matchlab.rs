fn main() {
    std::process::exit(matchlab::cli::run(std::env::args_os()));
}
