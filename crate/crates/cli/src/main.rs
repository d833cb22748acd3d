fn main() {
    std::process::exit(crnn_cli::run(std::env::args_os()));
}
