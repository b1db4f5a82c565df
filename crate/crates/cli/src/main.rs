fn main() {
    std::process::exit(prlf_cli::run(std::env::args_os()));
}
