fn main() {
    std::process::exit(nonunion::cli::run_from_args(std::env::args_os()));
}
