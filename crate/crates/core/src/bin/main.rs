fn main() {
    std::process::exit(cluster_compliance::cli::run());
}
