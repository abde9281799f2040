fn main() {
    std::process::exit(cmc_glue::cli::run(std::env::args_os()));
}
