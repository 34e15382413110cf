fn main() {
    let _ = env_logger::try_init();
    std::process::exit(sawt::cli::run(std::env::args()));
}
