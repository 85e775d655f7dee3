fn main() {
    std::process::exit(rulformer::cli::run(std::env::args_os()));
}
