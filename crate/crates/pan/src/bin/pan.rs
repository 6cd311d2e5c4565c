/// Rust ignores SIGPIPE by default, which turns `pan ... | head` into a
/// broken-pipe panic. Restore the usual unix behavior: die silently.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    std::process::exit(pan::cli::run());
}
