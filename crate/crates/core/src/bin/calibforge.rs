fn main() {
    std::process::exit(calibforge::cli::run(std::env::args_os()));
}
