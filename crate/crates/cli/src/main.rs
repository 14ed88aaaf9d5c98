fn main() {
    std::process::exit(acofi_cli::main_with_args(std::env::args_os()));
}
