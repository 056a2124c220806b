//! Exit-code classification and atomic file output.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Input = 2,
    Compute = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Display) -> Self {
        Failure {
            kind: ExitKind::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn input(msg: impl Display) -> Self {
        Failure {
            kind: ExitKind::Input,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches an exit class and a context line to any error.
pub trait Classify<T> {
    fn input(self, context: impl Display) -> CliResult<T>;
    fn compute(self, context: impl Display) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn input(self, context: impl Display) -> CliResult<T> {
        self.map_err(|e| Failure {
            kind: ExitKind::Input,
            error: anyhow::Error::new(e).context(context.to_string()),
        })
    }

    fn compute(self, context: impl Display) -> CliResult<T> {
        self.map_err(|e| Failure {
            kind: ExitKind::Compute,
            error: anyhow::Error::new(e).context(context.to_string()),
        })
    }
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .input(format!("cannot open {}", path.display()))
}

/// Writes `path` through a temporary file in the same directory, renamed into
/// place only after `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).compute(format!("cannot create a temporary file in {}", dir.display()))?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w
        .into_inner()
        .map_err(io::IntoInnerError::into_error)
        .compute(format!("cannot write {}", path.display()))?;
    tmp.as_file()
        .sync_all()
        .compute(format!("cannot sync {}", path.display()))?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .compute(format!("cannot move output into {}", path.display()))?;
    Ok(())
}

/// Same as [`write_atomic`] for serializers that fail with `io::Error`.
pub fn write_io<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let label = path.display().to_string();
    write_atomic(path, |w| fill(w).compute(format!("cannot write {label}")))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).compute("cannot serialize JSON")?;
    s.push('\n');
    Ok(s)
}

/// Writes JSON to `path`, or to stdout when no path is given.
pub fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = to_json(value)?;
    match path {
        Some(p) => write_io(p, |w| w.write_all(text.as_bytes())),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .compute("cannot write to stdout"),
    }
}
