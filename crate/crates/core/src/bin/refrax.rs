fn main() {
    std::process::exit(refrax::cli::dispatch(std::env::args_os()));
}
