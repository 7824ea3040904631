fn main() {
    std::process::exit(freeconv::cli::run(std::env::args_os()));
}
