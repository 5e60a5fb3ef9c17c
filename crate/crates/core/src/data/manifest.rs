//! Dataset manifests: one tab-separated record per image.
//!
//! ```text
//! path    format  label      probe  mask             split  subject  group
//! a.png   png     authentic  3      -                train  s017     female
//! b.png   png     tampered   3      masks/b.png      test   s017     female
//! ```
//!
//! The header line is mandatory; `subject` and `group` may be omitted as a
//! pair. `-` marks an absent optional field. Relative paths resolve against
//! the manifest's directory. Lines starting with `#` are comments.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

pub const MAX_PROBE: u8 = 7;
const COLUMNS: [&str; 8] = ["path", "format", "label", "probe", "mask", "split", "subject", "group"];
const REQUIRED_COLUMNS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpeg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "jpeg" | "jpg" => Some(Self::Jpeg),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val" => Some(Self::Val),
            "test" => Some(Self::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub format: ImageFormat,
    pub label: Label,
    pub probe: Option<u8>,
    pub mask: Option<PathBuf>,
    pub split: Option<Split>,
    /// Identity shared by images of the same person; keeps splits subject-disjoint.
    pub subject: Option<String>,
    /// Demographic stratum used to balance test composition.
    pub group: Option<String>,
}

impl ImageRecord {
    pub fn new(path: impl Into<PathBuf>, format: ImageFormat, label: Label) -> Self {
        Self { path: path.into(), format, label, probe: None, mask: None, split: None, subject: None, group: None }
    }

    /// Subject id, falling back to the path so unrelated images never share one.
    pub fn subject_key(&self) -> String {
        self.subject.clone().unwrap_or_else(|| format!("path:{}", self.path.display()))
    }

    pub fn id(&self) -> String {
        self.path.display().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative record paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
}

fn opt(field: &str) -> Option<&str> {
    (field != "-" && !field.is_empty()).then_some(field)
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ImageRecord>) -> Result<Self> {
        let m = Self { root: root.into(), records };
        m.validate()?;
        Ok(m)
    }

    /// Record index `i` is reported as data line `i + 1` (the header is line 1).
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let probed = self.records.iter().filter(|r| r.probe.is_some()).count();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            if !seen.insert(&r.path) {
                return Err(Error::Manifest { line, reason: format!("duplicate path {}", r.path.display()) });
            }
            if let Some(p) = r.probe {
                if !(1..=MAX_PROBE).contains(&p) {
                    return Err(Error::Manifest { line, reason: format!("probe {p} outside 1..={MAX_PROBE}") });
                }
            } else if probed > 0 {
                return Err(Error::Manifest { line, reason: "probe id missing while other records carry one".into() });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn is_probe_structured(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.probe.is_some())
    }

    pub fn in_split(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Manifest { line: 1, reason: "empty manifest".into() })?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let ncols = cols.len();
        if !(ncols == REQUIRED_COLUMNS || ncols == COLUMNS.len()) || cols[..] != COLUMNS[..ncols] {
            return Err(Error::Manifest {
                line: hline + 1,
                reason: format!("header must be `{}` (last two optional), got `{header}`", COLUMNS.join("\\t")),
            });
        }
        let mut records = Vec::new();
        let mut line_of = Vec::new();
        for (i, l) in lines {
            let line = i + 1;
            let bad = |reason: String| Error::Manifest { line, reason };
            let f: Vec<&str> = l.split('\t').map(str::trim).collect();
            if f.len() != ncols {
                return Err(bad(format!("expected {ncols} fields, found {}", f.len())));
            }
            let format = ImageFormat::parse(f[1]).ok_or_else(|| bad(format!("unknown format `{}`", f[1])))?;
            let label = Label::parse(f[2]).ok_or_else(|| bad(format!("unknown label `{}`", f[2])))?;
            let probe = opt(f[3])
                .map(|p| p.parse::<u8>().map_err(|_| bad(format!("probe `{p}` is not an integer"))))
                .transpose()?;
            let split =
                opt(f[5]).map(|s| Split::parse(s).ok_or_else(|| bad(format!("unknown split `{s}`")))).transpose()?;
            let (subject, group) = if ncols == COLUMNS.len() {
                (opt(f[6]).map(String::from), opt(f[7]).map(String::from))
            } else {
                (None, None)
            };
            if f[0].is_empty() || f[0] == "-" {
                return Err(bad("path is empty".into()));
            }
            records.push(ImageRecord {
                path: PathBuf::from(f[0]),
                format,
                label,
                probe,
                mask: opt(f[4]).map(PathBuf::from),
                split,
                subject,
                group,
            });
            line_of.push(line);
        }
        let m = Self { root: root.into(), records };
        // report validation failures against real file lines
        m.validate().map_err(|e| match e {
            Error::Manifest { line, reason } => Error::Manifest { line: line_of[line - 2], reason },
            other => other,
        })?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let extended = self.records.iter().any(|r| r.subject.is_some() || r.group.is_some());
        let ncols = if extended { COLUMNS.len() } else { REQUIRED_COLUMNS };
        let mut out = COLUMNS[..ncols].join("\t");
        out.push('\n');
        let dash = |s: Option<String>| s.unwrap_or_else(|| "-".into());
        for r in &self.records {
            let mut fields = vec![
                r.path.display().to_string(),
                r.format.as_str().to_string(),
                r.label.as_str().to_string(),
                dash(r.probe.map(|p| p.to_string())),
                dash(r.mask.as_ref().map(|m| m.display().to_string())),
                dash(r.split.map(|s| s.as_str().to_string())),
            ];
            if extended {
                fields.push(dash(r.subject.clone()));
                fields.push(dash(r.group.clone()));
            }
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Copy whose image and mask paths are absolute, so it can be stored anywhere.
    pub fn with_absolute_paths(&self) -> Result<Self> {
        let abs = |p: &Path| std::path::absolute(self.resolve(p));
        let mut records = self.records.clone();
        for r in &mut records {
            r.path = abs(&r.path)?;
            r.mask = r.mask.as_deref().map(abs).transpose()?;
        }
        Ok(Self { root: std::path::absolute(&self.root)?, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
