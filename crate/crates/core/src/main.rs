fn main() {
    std::process::exit(subdeq::cli::main_with_args(std::env::args_os()));
}
