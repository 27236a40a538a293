fn main() {
    std::process::exit(gene_core::cli::run(std::env::args_os()));
}
