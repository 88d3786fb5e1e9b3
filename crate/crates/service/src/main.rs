fn main() -> std::process::ExitCode {
    intentgate_service::cli::main()
}
