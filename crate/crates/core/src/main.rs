fn main() {
    std::process::exit(sparsewave::cli::run());
}
