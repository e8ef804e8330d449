fn main() {
    std::process::exit(graph_prompt::cli::run());
}
