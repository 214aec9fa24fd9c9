fn main() {
    std::process::exit(htsim::cli::main());
}
