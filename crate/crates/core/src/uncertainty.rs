//! Per-sample uncertainty scores of a meta distribution.

use alloc::vec::Vec;

use crate::dirichlet::{shannon_entropy, Dirichlet, ProbVector};
use crate::error::{Error, Result};

/// Epistemic, aleatoric and total uncertainty of one prediction, in nats.
///
/// `dent` and `energy` exist only for Dirichlet predictions; reports built
/// from a bank of teachers leave them empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UqReport {
    pub mi: f64,
    pub dent: Option<f64>,
    pub ent: f64,
    pub maxp: f64,
    pub aleatoric: f64,
    pub energy: Option<f64>,
}

impl UqReport {
    pub const CSV_HEADER: &'static str = "sample_id,mi,dent,ent,maxp,aleatoric,energy";
}

/// Report of a Dirichlet; `ent` is the sum of `mi` and `aleatoric`.
pub fn report(d: &Dirichlet) -> UqReport {
    let mean = d.mean();
    let aleatoric = d.expected_cat_entropy();
    let mi = d.mutual_info();
    UqReport {
        mi,
        dent: Some(d.diff_entropy()),
        ent: mi + aleatoric,
        maxp: mean.max(),
        aleatoric,
        energy: Some(d.energy()),
    }
}

/// Monte-Carlo report of an empirical set of categorical predictions.
pub fn empirical_report(members: &[ProbVector]) -> Result<UqReport> {
    let first = members.first().ok_or_else(|| Error::InsufficientData("no member predictions".into()))?;
    let c = first.len();
    let mut mean = alloc::vec![0.0; c];
    let mut aleatoric = 0.0;
    for p in members {
        if p.len() != c {
            return Err(Error::LengthMismatch { expected: c, found: p.len() });
        }
        for (m, v) in mean.iter_mut().zip(p.as_slice()) {
            *m += v;
        }
        aleatoric += p.entropy();
    }
    let m = members.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    aleatoric /= m;
    let total = shannon_entropy(&mean);
    let mi = (total - aleatoric).max(0.0);
    let maxp = mean.iter().copied().fold(0.0, f64::max);
    Ok(UqReport { mi, dent: None, ent: mi + aleatoric, maxp, aleatoric, energy: None })
}

/// Reports for a batch of Dirichlets.
pub fn reports<'a>(ds: impl IntoIterator<Item = &'a Dirichlet>) -> Vec<UqReport> {
    ds.into_iter().map(report).collect()
}
