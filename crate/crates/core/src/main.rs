fn main() {
    std::process::exit(spherefdn::cli::run(std::env::args_os()));
}
