fn main() {
    std::process::exit(senet_cli::dispatch(std::env::args_os()));
}
