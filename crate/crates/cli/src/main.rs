fn main() {
    std::process::exit(sdi_cli::run(std::env::args_os()));
}
