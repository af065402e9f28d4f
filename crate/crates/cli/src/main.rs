fn main() {
    std::process::exit(sparsevox_cli::run(std::env::args_os()));
}
