fn main() {
    std::process::exit(lsp_cli::run(std::env::args_os()));
}
