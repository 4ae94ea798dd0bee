fn main() {
    std::process::exit(mfmil_cli::dispatch(std::env::args_os()));
}
