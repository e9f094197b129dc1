fn main() {
    std::process::exit(sinfuse::cli::run(std::env::args_os()));
}
