fn main() {
    std::process::exit(fixclr::cli::main());
}
