fn main() {
    std::process::exit(bnfake::cli::run(std::env::args_os()));
}
