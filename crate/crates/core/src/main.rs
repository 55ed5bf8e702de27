fn main() {
    let code = timebin_swap::cli::run(
        std::env::args_os(),
        std::env::var(timebin_swap::cli::WORKERS_ENV).ok(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
