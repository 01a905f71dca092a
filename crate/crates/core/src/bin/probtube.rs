fn main() {
    std::process::exit(probtube::cli::run(std::env::args_os()));
}
