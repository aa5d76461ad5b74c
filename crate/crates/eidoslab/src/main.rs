fn main() {
    std::process::exit(eidoslab::cli::run());
}
