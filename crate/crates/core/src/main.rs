fn main() {
    std::process::exit(diffbots::cli::run(std::env::args_os()));
}
