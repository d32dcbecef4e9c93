fn main() {
    std::process::exit(dcm::cli::run());
}
