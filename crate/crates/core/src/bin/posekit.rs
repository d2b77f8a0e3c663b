fn main() {
    std::process::exit(posekit::cli::main_with_args(std::env::args_os()));
}
