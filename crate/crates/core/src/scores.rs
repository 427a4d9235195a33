//! Per-utterance dialect scores and their TSV serialization. Every back-end
//! (CNN softmax posteriors, SVM margins) emits this shape; every metric
//! consumes it.

use std::fs;
use std::path::Path;

use crate::corpus::Domain;

#[derive(Debug, thiserror::Error)]
pub enum ScoresError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt score file: {0}")]
    Corrupt(String),
}

/// One utterance's per-dialect scores plus evaluation metadata.
#[derive(Clone, Debug)]
pub struct TrialScores {
    pub utt_id: String,
    pub scores: Vec<f64>,
    pub label: Option<usize>,
    pub domain: Domain,
}

/// Writes scores as TSV: utt_id, label, domain, s0..s{K−1}. Floats use full
/// precision so files round-trip exactly.
pub fn write_scores(path: &Path, scores: &[TrialScores]) -> Result<(), ScoresError> {
    let k = scores.first().map_or(0, |s| s.scores.len());
    let mut out = String::from("utt_id\tlabel\tdomain");
    for j in 0..k {
        out.push_str(&format!("\ts{j}"));
    }
    out.push('\n');
    for s in scores {
        let label = s.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        out.push_str(&format!("{}\t{}\t{}", s.utt_id, label, s.domain));
        for v in &s.scores {
            out.push_str(&format!("\t{v:.17e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<TrialScores>, ScoresError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("utt_id\t") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(ScoresError::Corrupt(format!(
                "{}:{}: too few columns",
                path.display(),
                lineno + 1
            )));
        }
        let label = if cols[1] == "-" {
            None
        } else {
            Some(
                cols[1]
                    .parse()
                    .map_err(|_| ScoresError::Corrupt(format!("bad label {:?}", cols[1])))?,
            )
        };
        let domain = Domain::parse(cols[2])
            .ok_or_else(|| ScoresError::Corrupt(format!("bad domain {:?}", cols[2])))?;
        let scores = cols[3..]
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| ScoresError::Corrupt(format!("bad score {v:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        out.push(TrialScores {
            utt_id: cols[0].to_string(),
            scores,
            label,
            domain,
        });
    }
    Ok(out)
}
