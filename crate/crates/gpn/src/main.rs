use clap::Parser;

fn main() {
    // Die quietly on a closed pipe (e.g. `gpn eval ... | head`) instead of
    // panicking: restore the default SIGPIPE disposition the Rust runtime
    // masks on startup.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = gpn::cli::Cli::parse();
    std::process::exit(gpn::cli::run(cli));
}
