fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Sequential kernels keep results bitwise reproducible across runs.
    faer::set_global_parallelism(faer::Par::Seq);
    std::process::exit(rkdmd::cli::run_cli(std::env::args_os()));
}
