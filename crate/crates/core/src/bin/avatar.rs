fn main() {
    std::process::exit(splat_avatar::cli::main_with_args(std::env::args_os()));
}
