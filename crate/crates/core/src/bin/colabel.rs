fn main() -> std::process::ExitCode {
    colabel::cli::main()
}
