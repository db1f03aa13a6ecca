fn main() {
    std::process::exit(sparsereg_cli::run(std::env::args_os()));
}
