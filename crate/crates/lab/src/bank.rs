//! Teacher banks on disk: a directory of member checkpoints plus a manifest.
//!
//! The manifest is written before any member trains and records everything
//! that determines the members. A later run with the same identity reuses
//! every member checkpoint already present and trains only the missing ones;
//! a run with a different identity is refused rather than mixing banks.

use std::path::{Path, PathBuf};

use edl_core::teachers::MemberJob;
use edl_core::{LabeledSet, MetaModel, TeacherBank, TeacherConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::csvio::write_bytes;
use crate::error::{LabError, Result};
use crate::runner::Pool;

pub const MANIFEST: &str = "manifest.toml";
pub const BANK_FORMAT: u32 = 1;

/// TOML integers are signed 64-bit, so seeds are stored as hex strings.
mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#018x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        let digits = text.strip_prefix("0x").ok_or_else(|| D::Error::custom("seed must start with 0x"))?;
        u64::from_str_radix(digits, 16).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankIdentity {
    pub kind: String,
    /// Bank size M; a dropout bank has one model and M mask sets.
    pub members: usize,
    #[serde(with = "hex_u64")]
    pub seed: u64,
    pub ratio: f64,
    pub dropout_rate: f64,
    pub hidden: Vec<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    /// SHA-256 of the training data as `x0,x1,y` CSV.
    pub data_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    pub index: usize,
    #[serde(with = "hex_u64")]
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub format: u32,
    pub identity: BankIdentity,
    /// Empty until every member has trained.
    #[serde(default)]
    pub member: Vec<MemberEntry>,
}

impl BankIdentity {
    pub fn new(config: &TeacherConfig, seed: u64, data_sha256: String) -> Self {
        let s = &config.schedule;
        BankIdentity {
            kind: config.kind.name().to_string(),
            members: config.members,
            seed,
            ratio: config.ratio,
            dropout_rate: config.dropout_rate,
            hidden: config.hidden.clone(),
            max_epochs: s.max_epochs,
            batch_size: s.batch_size,
            patience: s.patience,
            learning_rate: s.learning_rate,
            val_fraction: s.val_fraction,
            data_sha256,
        }
    }
}

fn member_file(index: usize) -> String {
    format!("member_{index:03}.ckpt")
}

pub fn read_manifest(dir: &Path) -> Result<Option<BankManifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let m: BankManifest = toml::from_str(&text).map_err(|e| LabError::format(&path, e.to_string()))?;
    if m.format != BANK_FORMAT {
        return Err(LabError::format(&path, format!("unsupported bank format {}", m.format)));
    }
    Ok(Some(m))
}

fn write_manifest(dir: &Path, m: &BankManifest) -> Result<()> {
    let text = toml::to_string(m).expect("manifest serializes");
    write_bytes(&dir.join(MANIFEST), text.as_bytes())
}

/// What [`build`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub trained: usize,
    pub reused: usize,
}

/// Trains (or resumes) the bank in `dir` and returns it with the member
/// checkpoint paths.
pub fn build(
    dir: &Path,
    config: &TeacherConfig,
    set: &LabeledSet,
    seed: u64,
    data_sha256: String,
    pool: &Pool,
) -> Result<(TeacherBank, BuildReport)> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let identity = BankIdentity::new(config, seed, data_sha256);
    match read_manifest(dir)? {
        Some(existing) if existing.identity != identity => {
            return Err(LabError::config(format!(
                "{} holds a bank built with a different configuration; choose another output directory",
                dir.display()
            )))
        }
        Some(_) => {}
        None => write_manifest(dir, &BankManifest { format: BANK_FORMAT, identity: identity.clone(), member: vec![] })?,
    }

    let jobs = config.member_jobs(set, seed)?;
    let paths: Vec<PathBuf> = jobs.iter().map(|j| dir.join(member_file(j.index))).collect();
    let reused = paths.iter().filter(|p| p.exists()).count();
    let train_one = |(job, path): (&MemberJob, &PathBuf)| -> Result<MetaModel> {
        if path.exists() {
            return checkpoint::load(path);
        }
        let (model, _) = config.train_member(set, job)?;
        checkpoint::save(path, &model)?;
        Ok(model)
    };
    let members = pool.map(jobs.iter().zip(&paths).collect(), train_one)?;
    let bank = config.assemble(members, seed)?;

    let entries = jobs
        .iter()
        .map(|j| MemberEntry { index: j.index, seed: j.seed, file: member_file(j.index) })
        .collect();
    write_manifest(dir, &BankManifest { format: BANK_FORMAT, identity, member: entries })?;
    Ok((bank, BuildReport { trained: jobs.len() - reused, reused }))
}

/// Loads a complete bank written by [`build`].
pub fn load(dir: &Path) -> Result<TeacherBank> {
    let m = read_manifest(dir)?.ok_or_else(|| LabError::config(format!("no bank manifest in {}", dir.display())))?;
    if m.member.is_empty() {
        return Err(LabError::config(format!("bank in {} is incomplete", dir.display())));
    }
    let id = &m.identity;
    let mut config = TeacherConfig::new(id.kind.parse()?, id.members);
    config.ratio = id.ratio;
    config.dropout_rate = id.dropout_rate;
    config.hidden = id.hidden.clone();
    let members = m.member.iter().map(|e| checkpoint::load(&dir.join(&e.file))).collect::<Result<Vec<_>>>()?;
    Ok(config.assemble(members, id.seed)?)
}
