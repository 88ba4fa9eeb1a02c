fn main() {
    // Die quietly on SIGPIPE so `affect inspect ... | head` behaves.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(affect_cli::run(std::env::args_os()));
}
