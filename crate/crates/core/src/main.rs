fn main() {
    std::process::exit(recipe_edit::cli::main_with_args(std::env::args_os()));
}
