fn main() {
    std::process::exit(leash_core::cli::run());
}
