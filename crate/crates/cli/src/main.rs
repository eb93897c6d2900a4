fn main() {
    std::process::exit(comhe_cli::run(std::env::args_os()));
}
