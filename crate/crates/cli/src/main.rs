fn main() {
    std::process::exit(fingeo_cli::run(std::env::args_os()));
}
