fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVENTCUBE_LOG", "warn")).init();
    std::process::exit(eventcube::cli::run(std::env::args_os()));
}
