fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NIRREC_LOG", "warn")).init();
    std::process::exit(nirrec::cli::main_with_args(std::env::args().collect()));
}
