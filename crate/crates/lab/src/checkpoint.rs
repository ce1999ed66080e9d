//! Plain-text model checkpoints.
//!
//! ```text
//! edl-checkpoint 1
//! input_dim 2
//! classes 3
//! hidden 64 64 64
//! dropout 0
//! head direct
//! logit_clamp 15
//! params 8771
//! <one parameter per line>
//! ```
//!
//! A density head replaces `logit_clamp` with `latent_dim`, `alpha0`,
//! `class_counts`, `log_budget` and `log_evidence_clamp` lines. Floats use
//! shortest round-trip formatting, so loading restores every bit.

use std::fmt::Write as _;
use std::path::Path;

use edl_core::{Architecture, HeadSpec, MetaModel};

use crate::csvio::write_bytes;
use crate::error::{LabError, Result};

pub const MAGIC: &str = "edl-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn to_text(model: &MetaModel) -> String {
    let a = model.architecture();
    let mut s = String::new();
    let hidden = a.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "input_dim {}", a.input_dim).unwrap();
    writeln!(s, "classes {}", a.classes).unwrap();
    writeln!(s, "hidden {hidden}").unwrap();
    writeln!(s, "dropout {}", a.dropout).unwrap();
    match &a.head {
        HeadSpec::Direct { logit_clamp } => {
            writeln!(s, "head direct").unwrap();
            writeln!(s, "logit_clamp {logit_clamp}").unwrap();
        }
        HeadSpec::Density { latent_dim, alpha0, class_counts, log_budget, log_evidence_clamp } => {
            writeln!(s, "head density").unwrap();
            writeln!(s, "latent_dim {latent_dim}").unwrap();
            writeln!(s, "alpha0 {}", join(alpha0)).unwrap();
            writeln!(s, "class_counts {}", join(class_counts)).unwrap();
            writeln!(s, "log_budget {log_budget}").unwrap();
            writeln!(s, "log_evidence_clamp {log_evidence_clamp}").unwrap();
        }
    }
    writeln!(s, "params {}", model.param_count()).unwrap();
    for p in model.params() {
        writeln!(s, "{p}").unwrap();
    }
    s
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, msg: impl std::fmt::Display) -> LabError {
        LabError::format(self.path, format!("line {}: {msg}", line + 1))
    }

    /// The value part of the next `key value...` line.
    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (i, line) = self.iter.next().ok_or_else(|| LabError::format(self.path, format!("missing `{key}`")))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((i, v)),
            _ => Err(self.err(i, format!("expected `{key} ...`"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let (i, v) = self.field(key)?;
        v.split_whitespace().map(|t| t.parse::<T>().map_err(|_| self.err(i, format!("bad value `{t}`")))).collect()
    }

    fn one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (i, v) = self.field(key)?;
        v.trim().parse::<T>().map_err(|_| self.err(i, format!("bad value `{v}`")))
    }
}

pub fn from_text(path: &Path, text: &str) -> Result<MetaModel> {
    let mut lines = Lines { path, iter: text.lines().enumerate() };
    let version: u32 = lines.one(MAGIC).map_err(|_| LabError::format(path, "not an edl checkpoint"))?;
    if version != FORMAT_VERSION {
        return Err(LabError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let input_dim = lines.one("input_dim")?;
    let classes = lines.one("classes")?;
    let hidden = lines.list::<usize>("hidden")?;
    let dropout = lines.one("dropout")?;
    let head = match lines.one::<String>("head")?.as_str() {
        "direct" => HeadSpec::Direct { logit_clamp: lines.one("logit_clamp")? },
        "density" => HeadSpec::Density {
            latent_dim: lines.one("latent_dim")?,
            alpha0: lines.list("alpha0")?,
            class_counts: lines.list("class_counts")?,
            log_budget: lines.one("log_budget")?,
            log_evidence_clamp: lines.one("log_evidence_clamp")?,
        },
        other => return Err(LabError::format(path, format!("unknown head `{other}`"))),
    };
    let count: usize = lines.one("params")?;
    let mut params = Vec::with_capacity(count);
    for (i, line) in lines.iter.by_ref() {
        let v: f64 = line.trim().parse().map_err(|_| LabError::format(path, format!("line {}: bad parameter", i + 1)))?;
        params.push(v);
    }
    if params.len() != count {
        return Err(LabError::format(path, format!("expected {count} parameters, found {}", params.len())));
    }
    let arch = Architecture { input_dim, hidden, classes, head, dropout };
    MetaModel::from_params(arch, params).map_err(|e| LabError::format(path, e.to_string()))
}

pub fn save(path: &Path, model: &MetaModel) -> Result<()> {
    write_bytes(path, to_text(model).as_bytes())
}

pub fn load(path: &Path) -> Result<MetaModel> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    from_text(path, &text)
}
