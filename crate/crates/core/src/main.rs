fn main() {
    std::process::exit(freeop::cli::main_with_args(std::env::args_os()));
}
