fn main() {
    std::process::exit(voila::cli::main(std::env::args_os()));
}
