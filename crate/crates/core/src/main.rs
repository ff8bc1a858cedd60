fn main() {
    std::process::exit(qtube::cli::dispatch(std::env::args_os()));
}
