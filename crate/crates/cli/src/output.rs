//! Artifact writing: every file starts with comment lines recording the
//! exact invocation and tolerance settings, and is written to a temporary
//! name then renamed so error paths never leave partial artifacts.

use anyhow::{Context, Result};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub fn invocation_line() -> String {
    let args: Vec<String> = std::env::args().collect();
    format!("# invocation: {}", args.join(" "))
}

/// Write an artifact atomically: header comments, then the body, then a
/// rename onto the final path. A path of "-" streams to stdout instead.
pub fn write_artifact<F>(path: &str, headers: &[String], body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    if path == "-" {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        for h in headers {
            writeln!(lock, "{h}")?;
        }
        body(&mut lock)?;
        return Ok(());
    }
    let target = Path::new(path);
    let tmp = target.with_extension(format!(
        "{}.tmp",
        target
            .extension()
            .map(|e| e.to_string_lossy().to_string())
            .unwrap_or_default()
    ));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        for h in headers {
            writeln!(f, "{h}")?;
        }
        body(&mut f)?;
        f.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, target)
                .with_context(|| format!("cannot rename onto {}", target.display()))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}
