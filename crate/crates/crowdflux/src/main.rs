fn main() {
    std::process::exit(crowdflux::cli::run());
}
