fn main() {
    std::process::exit(litho::cli::run(std::env::args_os()));
}
