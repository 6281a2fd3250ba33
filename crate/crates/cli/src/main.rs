fn main() {
    std::process::exit(hspace_cli::run(std::env::args_os()));
}
