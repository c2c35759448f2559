fn main() {
    std::process::exit(entfilter_cli::main_with_args(std::env::args_os()));
}
