fn main() {
    std::process::exit(cxrb::cli::main(std::env::args_os()));
}
