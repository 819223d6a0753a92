fn main() {
    std::process::exit(isoflow::cli::main_from(std::env::args_os()));
}
