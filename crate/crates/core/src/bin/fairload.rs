fn main() {
    std::process::exit(fairload::cli::dispatch(std::env::args_os()));
}
