//! Artifacts are assembled in memory and written only once a run finishes,
//! so a failing run never leaves partial files behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// `# seed=<seed>` followed by a header row and one row per record.
pub fn csv_rows<T: Serialize>(name: &str, seed: u64, rows: &[T]) -> Result<Artifact, String> {
    let mut bytes = seed_line(seed);
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut bytes);
        for r in rows {
            w.serialize(r).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    Ok(Artifact { name: name.to_string(), bytes })
}

/// Wraps a writer that emits its own header.
pub fn csv_with<F>(name: &str, seed: u64, write: F) -> Result<Artifact, String>
where
    F: FnOnce(&mut Vec<u8>) -> poisson_chaos::error::Result<()>,
{
    let mut bytes = seed_line(seed);
    write(&mut bytes).map_err(|e| e.to_string())?;
    Ok(Artifact { name: name.to_string(), bytes })
}

fn seed_line(seed: u64) -> Vec<u8> {
    format!("# seed={seed}\n").into_bytes()
}

pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            let mut f = std::fs::File::create(&path)?;
            f.write_all(&a.bytes)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: String,
    pub seed: u64,
    pub reps: usize,
    pub config: &'a C,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    pub checks: &'a [crate::checks::CheckResult],
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self { cli: env!("CARGO_PKG_VERSION"), core: poisson_chaos::VERSION }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: &'static str,
    }

    #[test]
    fn seed_comment_then_header() {
        let art = csv_rows("x.csv", 7, &[Row { a: 1.5, b: "q" }]).unwrap();
        assert_eq!(String::from_utf8(art.bytes).unwrap(), "# seed=7\na,b\n1.5,q\n");
    }
}
