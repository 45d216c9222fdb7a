fn main() {
    std::process::exit(aml::cli::main_with_args(std::env::args_os()));
}
