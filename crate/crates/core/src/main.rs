fn main() {
    std::process::exit(distill_ner::cli::run(std::env::args_os()));
}
