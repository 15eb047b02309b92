fn main() {
    std::process::exit(eventpoint_cli::run(std::env::args_os()));
}
