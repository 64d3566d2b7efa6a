//! Subprocess execution of generated programs.
//!
//! Every assertion runs in a fresh interpreter process inside a private
//! temporary directory, in its own process group so that a timeout kills any
//! children the program spawned. Nothing is left running after `execute`
//! returns.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    extract_code, rewrite_assertions, AssertionResult, ExecError, ExecutionOutcome,
    ExtractedProgram, ModelResponse, OutcomeRecord, RewrittenSuite, SyntaxChecker,
};
use crate::corpus::{Corpus, Task};

const HARNESS: &str = r#"import sys


def _polyglot_main():
    prog_path, assert_path, result_path = sys.argv[1:4]

    def report(tag):
        with open(result_path, "w") as fh:
            fh.write(tag)

    scope = {"__name__": "__main__"}
    try:
        with open(prog_path, encoding="utf-8") as fh:
            exec(compile(fh.read(), "solution.py", "exec"), scope)
    except BaseException:
        import traceback
        traceback.print_exc()
        report("error")
        sys.exit(2)
    try:
        with open(assert_path, encoding="utf-8") as fh:
            exec(compile(fh.read(), "assertion.py", "exec"), scope)
    except AssertionError:
        import traceback
        traceback.print_exc()
        report("fail")
        sys.exit(1)
    except BaseException:
        import traceback
        traceback.print_exc()
        report("error")
        sys.exit(2)
    report("pass")
    sys.exit(0)


_polyglot_main()
"#;

const CHECKER: &str = r#"import json, sys


def ok(src):
    try:
        compile(src, "<generated>", "exec")
        return True
    except Exception:
        return False


data = json.load(sys.stdin)
if data["mode"] == "parse":
    print(1 if ok(data["code"]) else 0)
else:
    lines = data["lines"]
    for k in range(len(lines), 0, -1):
        if ok("\n".join(lines[:k])):
            print(k)
            break
    else:
        print(0)
"#;

/// Where per-suite scratch directories are created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorkDirPolicy {
    /// A fresh directory under the system temp dir, removed afterwards.
    #[default]
    Temp,
    /// A fresh directory under the given root, removed afterwards.
    Under(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub interpreter_command: String,
    /// Extra interpreter flags placed before the harness path.
    pub interpreter_args: Vec<String>,
    /// Optional command prefix, e.g. `["unshare", "-rn"]` to drop network access.
    pub wrapper: Vec<String>,
    pub per_assertion_timeout_secs: f64,
    pub max_output_bytes: u64,
    /// Address-space cap in bytes; `None` keeps the interpreter default.
    pub memory_limit_bytes: Option<u64>,
    pub working_dir: WorkDirPolicy,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter_command: "python3".into(),
            interpreter_args: vec!["-I".into()],
            wrapper: Vec::new(),
            per_assertion_timeout_secs: 10.0,
            max_output_bytes: 64 * 1024,
            memory_limit_bytes: None,
            working_dir: WorkDirPolicy::Temp,
        }
    }
}

impl SandboxConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.per_assertion_timeout_secs)
    }
}

enum Finished {
    Exited(ExitStatus),
    TimedOut,
}

/// Validated sandbox; also the parse-only checker.
#[derive(Debug, Clone)]
pub struct Sandbox {
    cfg: SandboxConfig,
}

/// Parse-only checks through the interpreter's `compile`.
pub type PythonChecker = Sandbox;

impl Sandbox {
    /// Probe the interpreter so a missing toolchain surfaces as a configuration error.
    pub fn new(cfg: SandboxConfig) -> Result<Self, ExecError> {
        let t = cfg.per_assertion_timeout_secs;
        if !t.is_finite() || t <= 0.0 {
            return Err(ExecError::Infrastructure(
                "per-assertion timeout must be positive".into(),
            ));
        }
        let sandbox = Self { cfg };
        let mut cmd = sandbox.command(&["-c".to_string(), "pass".to_string()]);
        cmd.stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null());
        match cmd.status() {
            Ok(status) if status.success() => Ok(sandbox),
            Ok(status) => Err(ExecError::InterpreterNotFound(format!(
                "{} (probe exited with {status})",
                sandbox.cfg.interpreter_command
            ))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(
                ExecError::InterpreterNotFound(sandbox.program_name().to_string()),
            ),
            Err(e) => Err(e.into()),
        }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.cfg
    }

    fn program_name(&self) -> &str {
        self.cfg
            .wrapper
            .first()
            .unwrap_or(&self.cfg.interpreter_command)
    }

    fn command(&self, args: &[String]) -> Command {
        let mut argv: Vec<&str> = self.cfg.wrapper.iter().map(String::as_str).collect();
        argv.push(&self.cfg.interpreter_command);
        argv.extend(self.cfg.interpreter_args.iter().map(String::as_str));
        argv.extend(args.iter().map(String::as_str));
        let mut cmd = Command::new(argv[0]);
        cmd.args(&argv[1..]);
        cmd.env_clear();
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        cmd.env("LANG", "C.UTF-8")
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1");
        cmd
    }

    fn run_checker(&self, payload: &serde_json::Value) -> Result<usize, ExecError> {
        let dir = self.scratch_dir()?;
        let script = dir.path().join("check.py");
        fs::write(&script, CHECKER)?;
        let mut cmd = self.command(&[script.to_string_lossy().into_owned()]);
        cmd.current_dir(dir.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let mut child = spawn(&mut cmd, self.program_name())?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin.write_all(payload.to_string().as_bytes())?;
        }
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });
        // Parsing is bounded by the same budget as running one assertion, with headroom.
        let limit = self.cfg.timeout() * 3;
        match wait_with_deadline(&mut child, limit)? {
            Finished::TimedOut => {
                return Err(ExecError::Infrastructure("syntax check timed out".into()))
            }
            Finished::Exited(status) if !status.success() => {
                let mut err = String::new();
                if let Some(mut e) = child.stderr.take() {
                    let _ = e.read_to_string(&mut err);
                }
                return Err(ExecError::Infrastructure(format!(
                    "syntax checker failed ({status}): {}",
                    err.trim()
                )));
            }
            Finished::Exited(_) => {}
        }
        let out = reader
            .join()
            .map_err(|_| ExecError::Infrastructure("checker reader panicked".into()))??;
        out.trim()
            .parse()
            .map_err(|_| ExecError::Infrastructure(format!("unexpected checker output `{out}`")))
    }

    fn scratch_dir(&self) -> Result<tempfile::TempDir, ExecError> {
        let builder = {
            let mut b = tempfile::Builder::new();
            b.prefix("polyglot-");
            b
        };
        let dir = match &self.cfg.working_dir {
            WorkDirPolicy::Temp => builder.tempdir(),
            WorkDirPolicy::Under(root) => builder.tempdir_in(root),
        };
        dir.map_err(|e| ExecError::Infrastructure(format!("cannot create sandbox directory: {e}")))
    }

    /// Run the parse check, then each assertion in its own process.
    pub fn execute(&self, suite: &RewrittenSuite) -> Result<ExecutionOutcome, ExecError> {
        let n = suite.assertions.len();
        if !self.parses(&suite.program)? {
            return Ok(ExecutionOutcome::syntax_error(n));
        }
        let dir = self.scratch_dir()?;
        let harness = dir.path().join("harness.py");
        let program = dir.path().join("solution.py");
        fs::write(&harness, HARNESS)?;
        fs::write(&program, &suite.program)?;

        let mut results = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut diagnostics = Vec::with_capacity(n);
        for (i, assertion) in suite.assertions.iter().enumerate() {
            let run_dir = dir.path().join(format!("run{i}"));
            fs::create_dir(&run_dir)?;
            let assertion_path = run_dir.join("assertion.py");
            let result_path = run_dir.join("result");
            fs::write(&assertion_path, assertion)?;
            let (result, secs, stderr) =
                self.run_assertion(&run_dir, &harness, &program, &assertion_path, &result_path)?;
            results.push(result);
            times.push(secs);
            diagnostics.push(stderr);
        }
        let mut outcome = ExecutionOutcome::from_results(results, times);
        outcome.diagnostics = diagnostics;
        Ok(outcome)
    }

    fn run_assertion(
        &self,
        run_dir: &Path,
        harness: &Path,
        program: &Path,
        assertion: &Path,
        result_path: &Path,
    ) -> Result<(AssertionResult, f64, String), ExecError> {
        let stdout = fs::File::create(run_dir.join("stdout"))?;
        let stderr_path = run_dir.join("stderr");
        let stderr = fs::File::create(&stderr_path)?;
        let args: Vec<String> = [harness, program, assertion, result_path]
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        let mut cmd = self.command(&args);
        cmd.current_dir(run_dir)
            .env("HOME", run_dir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr);
        self.apply_limits(&mut cmd);

        let start = Instant::now();
        let mut child = spawn(&mut cmd, self.program_name())?;
        let finished = wait_with_deadline(&mut child, self.cfg.timeout())?;
        let secs = start.elapsed().as_secs_f64();

        let mut tail = Vec::new();
        if let Ok(f) = fs::File::open(&stderr_path) {
            let _ = f.take(self.cfg.max_output_bytes).read_to_end(&mut tail);
        }
        let stderr = String::from_utf8_lossy(&tail).into_owned();

        let result = match finished {
            Finished::TimedOut => AssertionResult::Timeout,
            Finished::Exited(status) => {
                let tag = fs::read_to_string(result_path).unwrap_or_default();
                match (status.success(), tag.as_str()) {
                    (true, "pass") => AssertionResult::Pass,
                    (_, "fail") => AssertionResult::Fail,
                    _ => AssertionResult::Error,
                }
            }
        };
        Ok((result, secs, stderr))
    }

    #[cfg(unix)]
    fn apply_limits(&self, cmd: &mut Command) {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
        let fsize = self.cfg.max_output_bytes.max(4096);
        let mem = self.cfg.memory_limit_bytes;
        // SAFETY: only async-signal-safe setrlimit calls run between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let lim = libc::rlimit {
                    rlim_cur: fsize as libc::rlim_t,
                    rlim_max: fsize as libc::rlim_t,
                };
                libc::setrlimit(libc::RLIMIT_FSIZE, &lim);
                if let Some(bytes) = mem {
                    let lim = libc::rlimit {
                        rlim_cur: bytes as libc::rlim_t,
                        rlim_max: bytes as libc::rlim_t,
                    };
                    libc::setrlimit(libc::RLIMIT_AS, &lim);
                }
                Ok(())
            });
        }
    }

    #[cfg(not(unix))]
    fn apply_limits(&self, _cmd: &mut Command) {}
}

impl SyntaxChecker for Sandbox {
    fn parses(&self, code: &str) -> Result<bool, ExecError> {
        if code.trim().is_empty() {
            return Ok(false);
        }
        let k = self.run_checker(&serde_json::json!({"mode": "parse", "code": code}))?;
        Ok(k == 1)
    }

    fn longest_parsing_prefix(&self, lines: &[&str]) -> Result<usize, ExecError> {
        if lines.is_empty() {
            return Ok(0);
        }
        self.run_checker(&serde_json::json!({"mode": "prefix", "lines": lines}))
    }
}

fn spawn(cmd: &mut Command, program: &str) -> Result<Child, ExecError> {
    cmd.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ExecError::InterpreterNotFound(program.to_string())
        } else {
            ExecError::Infrastructure(format!("spawn failed: {e}"))
        }
    })
}

/// Wait for `child` up to `limit`, then kill its whole process group and reap it.
fn wait_with_deadline(child: &mut Child, limit: Duration) -> Result<Finished, ExecError> {
    let deadline = Instant::now() + limit;
    let mut poll = Duration::from_millis(1);
    let finished = loop {
        if has_exited(child)? {
            break None;
        }
        let now = Instant::now();
        if now >= deadline {
            break Some(Finished::TimedOut);
        }
        thread::sleep(poll.min(deadline - now));
        poll = (poll * 2).min(Duration::from_millis(20));
    };
    kill_group(child);
    let status = child.wait()?;
    Ok(finished.unwrap_or(Finished::Exited(status)))
}

/// Exit check that leaves the child unreaped so its group id stays valid.
#[cfg(unix)]
fn has_exited(child: &mut Child) -> Result<bool, ExecError> {
    let mut info: libc::siginfo_t = unsafe { std::mem::zeroed() };
    // SAFETY: `info` is a valid out-pointer; WNOWAIT leaves the child waitable.
    let rc = unsafe {
        libc::waitid(
            libc::P_PID,
            child.id() as libc::id_t,
            &mut info,
            libc::WEXITED | libc::WNOHANG | libc::WNOWAIT,
        )
    };
    if rc != 0 {
        return Err(std::io::Error::last_os_error().into());
    }
    // SAFETY: populated by waitid above (zero when nothing changed state).
    Ok(unsafe { info.si_pid() } != 0)
}

#[cfg(not(unix))]
fn has_exited(child: &mut Child) -> Result<bool, ExecError> {
    Ok(child.try_wait()?.is_some())
}

#[cfg(unix)]
fn kill_group(child: &mut Child) {
    // Harmless when the group is already gone. Our own process never shares
    // this group because every child is started with process_group(0); the
    // checker, which is not, is only killed individually.
    unsafe {
        if libc::getpgid(child.id() as libc::pid_t) == child.id() as libc::pid_t {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        } else {
            libc::kill(child.id() as libc::pid_t, libc::SIGKILL);
        }
    }
}

#[cfg(not(unix))]
fn kill_group(child: &mut Child) {
    let _ = child.kill();
}

/// Execute a suite with a freshly validated sandbox.
pub fn execute_sandboxed(
    suite: &RewrittenSuite,
    cfg: &SandboxConfig,
) -> Result<ExecutionOutcome, ExecError> {
    Sandbox::new(cfg.clone())?.execute(suite)
}

/// Result of running one response through extraction, rewriting and execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub response: ModelResponse,
    pub program: ExtractedProgram,
    pub suite: Option<RewrittenSuite>,
    pub outcome: ExecutionOutcome,
}

impl Classified {
    pub fn record(&self) -> OutcomeRecord {
        OutcomeRecord::new(
            &self.response,
            &self.program,
            &self.outcome,
            self.suite.as_ref().map(|s| s.entry_point.clone()),
        )
    }
}

/// Extract, rewrite and execute one response.
///
/// Unparseable code is a syntax error; no code, or code without a function,
/// is a logical failure with nothing run.
pub fn classify_response(
    response: &ModelResponse,
    task: &Task,
    sandbox: &Sandbox,
) -> Result<Classified, ExecError> {
    let n = task.assertions.len();
    let program = extract_code(response, sandbox)?;
    let (suite, outcome) = if program.complete {
        let suite = rewrite_assertions(&program, task)
            .expect("complete programs always have an entry point");
        let outcome = sandbox.execute(&suite)?;
        (Some(suite), outcome)
    } else if program.has_code() && !program.parses {
        (None, ExecutionOutcome::syntax_error(n))
    } else {
        (None, ExecutionOutcome::no_code(n))
    };
    Ok(Classified {
        response: response.clone(),
        program,
        suite,
        outcome,
    })
}

/// Classify many responses on at most `workers` threads.
///
/// Results come back sorted by (task_id, lang, mode) whatever the completion order.
pub fn classify_batch(
    responses: &[ModelResponse],
    corpus: &Corpus,
    sandbox: &Sandbox,
    workers: usize,
) -> Vec<Result<Classified, ExecError>> {
    let mut order: Vec<usize> = (0..responses.len()).collect();
    order.sort_by(|&a, &b| responses[a].sort_key().cmp(&responses[b].sort_key()));
    let slots: Vec<Mutex<Option<Result<Classified, ExecError>>>> =
        order.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.max(1).min(order.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&idx) = order.get(i) else { break };
                let response = &responses[idx];
                let result = match corpus.task(&response.task_id) {
                    Some(task) => classify_response(response, task, sandbox),
                    None => Err(ExecError::UnknownTask(response.task_id.clone())),
                };
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}
