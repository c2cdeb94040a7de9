use std::fs::File;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessOutcome {
    Exited(i32),
    Signaled,
    TimedOut,
    SpawnFailed(String),
}

/// Runs `argv` in `cwd` with stdout/stderr redirected to files.
///
/// The child leads its own process group; on timeout the whole group is
/// killed so solver subprocesses do not outlive the case.
pub fn run_process(
    argv: &[String],
    cwd: &Path,
    env: &[(String, String)],
    timeout: Duration,
    stdout: &Path,
    stderr: &Path,
) -> ProcessOutcome {
    let Some((program, args)) = argv.split_first() else {
        return ProcessOutcome::SpawnFailed("empty command".to_string());
    };
    let open = |p: &Path| File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()));
    let (out, err) = match (open(stdout), open(stderr)) {
        (Ok(o), Ok(e)) => (o, e),
        (Err(e), _) | (_, Err(e)) => return ProcessOutcome::SpawnFailed(e),
    };
    let mut child = match Command::new(program)
        .args(args)
        .current_dir(cwd)
        .envs(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err)
        .process_group(0)
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return ProcessOutcome::SpawnFailed(format!("cannot spawn {program}: {e}")),
    };

    let started = Instant::now();
    let mut pause = Duration::from_millis(1);
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                return match status.code() {
                    Some(code) => ProcessOutcome::Exited(code),
                    None => ProcessOutcome::Signaled,
                };
            }
            Ok(None) => {}
            Err(e) => return ProcessOutcome::SpawnFailed(format!("wait failed: {e}")),
        }
        if started.elapsed() >= timeout {
            let pgid = child.id() as libc::pid_t;
            // SAFETY: plain syscall on the child's own process group.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            return ProcessOutcome::TimedOut;
        }
        thread::sleep(pause);
        pause = (pause * 2).min(Duration::from_millis(50));
    }
}
