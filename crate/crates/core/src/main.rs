fn main() {
    std::process::exit(ugre::cli::run(std::env::args_os()));
}
