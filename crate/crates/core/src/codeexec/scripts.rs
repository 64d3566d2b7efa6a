//! Standalone shell scripts mirroring one program + assertions per sample.

use super::ModelResponse;

/// File name `<task>_<lang>_<mode>.sh` with unsafe characters replaced.
pub fn script_file_name(response: &ModelResponse) -> String {
    let task: String = response
        .task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{task}_{}_{}.sh", response.lang, response.mode)
}

/// Bash script that feeds the program followed by the assertions to `interpreter`.
pub fn render_script(
    response: &ModelResponse,
    interpreter: &str,
    program: &str,
    assertions: &[String],
) -> String {
    let mut delimiter = String::from("POLYGLOT_EOF");
    while program.contains(&delimiter) || assertions.iter().any(|a| a.contains(&delimiter)) {
        delimiter.push('_');
    }
    let mut s = String::new();
    s.push_str("#!/usr/bin/env bash\n");
    s.push_str(&format!(
        "# task {} lang {} mode {}\n",
        response.task_id, response.lang, response.mode
    ));
    s.push_str(&format!("{interpreter} - <<'{delimiter}'\n"));
    s.push_str(program.trim_end());
    s.push_str("\n\n");
    for a in assertions {
        s.push_str(a.trim_end());
        s.push('\n');
    }
    s.push_str(&delimiter);
    s.push('\n');
    s
}
