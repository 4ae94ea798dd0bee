use crate::args::ReplayArgs;
use crate::error::{CliError, CliResult};
use crate::io::{read_json, RunManifest};

/// Recorded arguments with `--out` (and optionally `--threads`) replaced.
pub fn replay_args(recorded: &[String], out: &str, threads: Option<usize>) -> Vec<String> {
    let mut args = Vec::with_capacity(recorded.len() + 4);
    let mut it = recorded.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--out" | "--threads" => {
                it.next();
            }
            s if s.starts_with("--out=") || s.starts_with("--threads=") => {}
            _ => args.push(a.clone()),
        }
    }
    args.push("--out".into());
    args.push(out.into());
    if let Some(n) = threads {
        args.push("--threads".into());
        args.push(n.to_string());
    }
    args
}

pub fn run(a: &ReplayArgs) -> CliResult<()> {
    let rm: RunManifest = read_json(&a.manifest)?;
    if !matches!(rm.command.as_str(), "gen" | "train") {
        return Err(CliError::Usage(format!("cannot replay `{}`; only gen and train runs are replayable", rm.command)));
    }
    let out = a.out.to_string_lossy().into_owned();
    let argv = std::iter::once("mfmil".to_string()).chain(replay_args(&rm.args, &out, a.threads));
    match crate::dispatch(argv) {
        0 => Ok(()),
        1 => Err(CliError::Usage("replayed command failed".into())),
        3 => Err(CliError::Numerical("replayed command failed".into())),
        _ => Err(CliError::Data("replayed command failed".into())),
    }
}
