use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cod,
    Sod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cod => "cod",
            Task::Sod => "sod",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cod" => Ok(Task::Cod),
            "sod" => Ok(Task::Sod),
            other => Err(format!("unknown task tag {other:?} (expected cod or sod)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag {other:?} (expected train or test)")),
        }
    }
}

/// One manifest line. Paths are stored as written; relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub task: Task,
    pub split: Split,
}

/// Parses manifest text. Blank lines are skipped; every other line must hold
/// four tab-separated fields: image, mask, task, split.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<SampleRecord>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let task = fields[2].parse::<Task>().map_err(err)?;
        let split = fields[3].parse::<Split>().map_err(err)?;
        let image_path = base.join(fields[0]);
        let mask_path = base.join(fields[1]);
        for p in [&image_path, &mask_path] {
            if !p.is_file() {
                return Err(err(format!("referenced file {} does not exist", p.display())));
            }
        }
        out.push(SampleRecord {
            image_path,
            mask_path,
            task,
            split,
        });
    }
    Ok(out)
}

/// Reads a manifest, preserving line order.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    parse_manifest(&text, path)
}

/// Writes records with paths relative to the manifest directory when possible.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::new();
    for r in records {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            rel(&r.image_path),
            rel(&r.mask_path),
            r.task,
            r.split
        ));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn empty_file_gives_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn order_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["c", "a", "b"] {
            touch(dir.path(), &format!("{n}.ppm"));
            touch(dir.path(), &format!("{n}.pgm"));
        }
        let p = dir.path().join("m.tsv");
        fs::write(
            &p,
            "c.ppm\tc.pgm\tcod\ttrain\na.ppm\ta.pgm\tsod\ttest\nb.ppm\tb.pgm\tcod\ttest\n",
        )
        .unwrap();
        let recs = load_manifest(&p).unwrap();
        let names: Vec<_> = recs
            .iter()
            .map(|r| r.image_path.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["c.ppm", "a.ppm", "b.ppm"]);
        assert_eq!(recs[1].task, Task::Sod);
        assert_eq!(recs[0].split, Split::Train);
    }

    #[test]
    fn unknown_task_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        touch(dir.path(), "a.pgm");
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a.ppm\ta.pgm\tcod\ttrain\na.ppm\ta.pgm\tseg\ttrain\n").unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("seg"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_image_and_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "nope.ppm\tnope.pgm\tcod\ttrain\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "only two\tfields\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            load_manifest(&dir.path().join("absent.tsv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        touch(dir.path(), "a.pgm");
        let rec = SampleRecord {
            image_path: dir.path().join("a.ppm"),
            mask_path: dir.path().join("a.pgm"),
            task: Task::Cod,
            split: Split::Test,
        };
        let p = dir.path().join("m.tsv");
        write_manifest(&p, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a.ppm\ta.pgm\tcod\ttest\n");
        assert_eq!(load_manifest(&p).unwrap(), vec![rec]);
    }
}
