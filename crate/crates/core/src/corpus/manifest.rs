//! Utterance manifests: the TSV files that tie features, labels, and domain
//! tags together, plus named partitions of a corpus.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::CorpusError;

/// Recording-channel domain of an utterance.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum Domain {
    /// broadcast-style channel of the large training pool
    Train,
    /// the matched dev/test channel
    Test,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Train => "train-domain",
            Domain::Test => "test-domain",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "train-domain" => Some(Domain::Train),
            "test-domain" => Some(Domain::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest row. `dialect = None` renders as "-" (label stripped).
#[derive(Clone, Debug)]
pub struct ManifestRow {
    pub utt_id: String,
    pub path: PathBuf,
    pub dialect: Option<usize>,
    pub domain: Domain,
    pub n_frames: usize,
}

/// Ordered collection of utterances.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.utt_id.clone()) {
                return Err(CorpusError::DuplicateUtt(row.utt_id.clone()));
            }
        }
        Ok(Manifest { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_frames(&self) -> u64 {
        self.rows.iter().map(|r| r.n_frames as u64).sum()
    }

    pub fn dialect_histogram(&self, n_dialects: usize) -> Vec<usize> {
        let mut h = vec![0; n_dialects];
        for row in &self.rows {
            if let Some(d) = row.dialect {
                h[d] += 1;
            }
        }
        h
    }

    /// Rows restricted to one domain.
    pub fn filter_domain(&self, domain: Domain) -> Manifest {
        Manifest {
            rows: self
                .rows
                .iter()
                .filter(|r| r.domain == domain)
                .cloned()
                .collect(),
        }
    }

    /// Concatenation; duplicate ids are an error.
    pub fn union(&self, other: &Manifest) -> Result<Manifest, CorpusError> {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Manifest::new(rows)
    }

    /// Copy with every dialect label replaced by "-".
    pub fn stripped(&self) -> Manifest {
        Manifest {
            rows: self
                .rows
                .iter()
                .map(|r| ManifestRow {
                    dialect: None,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::from("utt_id\tpath\tdialect\tdomain\tn_frames\n");
        for r in &self.rows {
            let dialect = r
                .dialect
                .map_or_else(|| "-".to_string(), |d| d.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.utt_id,
                r.path.display(),
                dialect,
                r.domain,
                r.n_frames
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Manifest, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && line.starts_with("utt_id\t") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(CorpusError::Corrupt(format!(
                    "{}:{}: expected 5 columns, got {}",
                    path.display(),
                    lineno + 1,
                    cols.len()
                )));
            }
            let dialect = if cols[2] == "-" {
                None
            } else {
                Some(cols[2].parse().map_err(|_| {
                    CorpusError::Corrupt(format!("bad dialect index {:?}", cols[2]))
                })?)
            };
            let domain = Domain::parse(cols[3])
                .ok_or_else(|| CorpusError::Corrupt(format!("bad domain tag {:?}", cols[3])))?;
            let n_frames = cols[4]
                .parse()
                .map_err(|_| CorpusError::Corrupt(format!("bad frame count {:?}", cols[4])))?;
            rows.push(ManifestRow {
                utt_id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                dialect,
                domain,
                n_frames,
            });
        }
        Manifest::new(rows)
    }
}

/// Named, disjoint sub-manifests of one corpus.
#[derive(Clone, Debug, Default)]
pub struct PartitionSet {
    pub subsets: BTreeMap<String, Manifest>,
}

impl PartitionSet {
    pub fn get(&self, name: &str) -> Result<&Manifest, CorpusError> {
        self.subsets
            .get(name)
            .ok_or_else(|| CorpusError::UnknownSubset(name.to_string()))
    }

    /// Replaces dialect labels with "-" in the named subset only.
    pub fn strip_labels(&mut self, name: &str) -> Result<(), CorpusError> {
        let m = self
            .subsets
            .get_mut(name)
            .ok_or_else(|| CorpusError::UnknownSubset(name.to_string()))?;
        *m = m.stripped();
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        for (name, m) in &self.subsets {
            m.write_tsv(&dir.join(format!("{name}.tsv")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, dialect: Option<usize>, domain: Domain) -> ManifestRow {
        ManifestRow {
            utt_id: id.to_string(),
            path: PathBuf::from(format!("features/{id}.seqf")),
            dialect,
            domain,
            n_frames: 100,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Manifest::new(vec![
            row("a", Some(0), Domain::Train),
            row("a", Some(1), Domain::Test)
        ])
        .is_err());
    }

    #[test]
    fn tsv_round_trip_preserves_stripped_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let m = Manifest::new(vec![
            row("a", Some(3), Domain::Train),
            row("b", None, Domain::Test),
        ])
        .unwrap();
        m.write_tsv(&path).unwrap();
        let back = Manifest::read_tsv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.rows[0].dialect, Some(3));
        assert_eq!(back.rows[1].dialect, None);
        assert_eq!(back.rows[1].domain, Domain::Test);
    }

    #[test]
    fn strip_labels_targets_one_subset_and_is_idempotent() {
        let mut set = PartitionSet::default();
        set.subsets.insert(
            "train".into(),
            Manifest::new(vec![row("a", Some(0), Domain::Train)]).unwrap(),
        );
        set.subsets.insert(
            "dev".into(),
            Manifest::new(vec![row("b", Some(1), Domain::Test)]).unwrap(),
        );
        set.strip_labels("dev").unwrap();
        assert_eq!(set.get("dev").unwrap().rows[0].dialect, None);
        assert_eq!(set.get("train").unwrap().rows[0].dialect, Some(0));
        set.strip_labels("dev").unwrap(); // idempotent
        assert_eq!(set.get("dev").unwrap().rows[0].dialect, None);
        assert!(set.strip_labels("nope").is_err());
    }
}
