fn main() {
    std::process::exit(coopstyle::cli::run());
}
