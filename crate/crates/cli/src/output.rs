//! Output plumbing: CSV and JSON files under the chosen directory, each
//! stamped with the configuration digest and the tolerances in force.
//! All writes happen on the calling thread.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::Failure;

/// Writes reports for one command run.
pub struct Reporter {
    dir: PathBuf,
    digest: String,
    tolerances: Vec<(String, f64)>,
}

impl Reporter {
    /// Creates the output directory if needed.
    pub fn new(
        dir: &Path,
        digest: String,
        tolerances: Vec<(String, f64)>,
    ) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| {
            Failure::Config(format!("cannot create output dir {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            digest,
            tolerances,
        })
    }

    fn tolerance_line(&self) -> String {
        if self.tolerances.is_empty() {
            "none".into()
        } else {
            let mut s = String::new();
            for (i, (name, value)) in self.tolerances.iter().enumerate() {
                if i > 0 {
                    s.push(';');
                }
                let _ = write!(s, "{name}={value:e}");
            }
            s
        }
    }

    /// Writes a CSV file: digest and tolerance comment lines, a header
    /// row, then the data rows. UTF-8, `\n` line endings, `.` decimals.
    pub fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf, Failure> {
        let mut text = String::new();
        let _ = writeln!(text, "# config_digest: {}", self.digest);
        let _ = writeln!(text, "# tolerances: {}", self.tolerance_line());
        let _ = writeln!(text, "{header}");
        for row in rows {
            let _ = writeln!(text, "{row}");
        }
        let path = self.dir.join(name);
        std::fs::write(&path, text)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes a JSON report with the digest and tolerances injected at
    /// the top level.
    pub fn write_json(
        &self,
        name: &str,
        mut value: serde_json::Value,
    ) -> Result<PathBuf, Failure> {
        if let Some(map) = value.as_object_mut() {
            map.insert(
                "config_digest".into(),
                serde_json::Value::String(self.digest.clone()),
            );
            map.insert(
                "tolerances".into(),
                serde_json::Value::Object(
                    self.tolerances
                        .iter()
                        .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                        .collect(),
                ),
            );
        }
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&value)
            .map_err(|e| Failure::Config(format!("cannot serialize {name}: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_carries_digest_and_header() {
        let dir = std::env::temp_dir().join(format!("bergman-out-{}", std::process::id()));
        let rep = Reporter::new(
            &dir,
            "abc123".into(),
            vec![("x".into(), 1e-8)],
        )
        .unwrap();
        let path = rep
            .write_csv("t.csv", "a,b", &["1,2".into(), "3,4".into()])
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_digest: abc123\n# tolerances: x=1e-8\n"));
        assert!(text.contains("a,b\n1,2\n3,4\n"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
