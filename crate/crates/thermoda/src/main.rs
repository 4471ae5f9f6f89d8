fn main() {
    std::process::exit(thermoda::cli::main());
}
