//! Durable on-disk storage for prediction matrices.
//!
//! One CSV per matrix with header `sample_id,label,logit_0..logit_{K-1}`
//! plus a JSON sidecar carrying the metadata. Probabilities are recomputed
//! from the logits on load, so the softmax stays single-sourced and the
//! files remain human-inspectable.

use std::path::{Path, PathBuf};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::model::Matrix;

use super::{MemberMeta, PredictionMatrix};

/// A directory of prediction matrices keyed by `(model_id, split)`.
#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
}

/// Optional metadata filters for [`Registry::list`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RegistryFilter {
    pub hypothesis: Option<crate::model::Hypothesis>,
    pub group: Option<crate::groups::GroupId>,
    pub split: Option<Split>,
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Full => "full",
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

impl Registry {
    /// Opens (creating if needed) a registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)
            .map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn base_name(model_id: &str, split: Split) -> String {
        format!("{model_id}__{}", split_name(split))
    }

    fn csv_path(&self, model_id: &str, split: Split) -> PathBuf {
        self.root
            .join(format!("{}.csv", Self::base_name(model_id, split)))
    }

    fn sidecar_path(&self, model_id: &str, split: Split) -> PathBuf {
        self.root
            .join(format!("{}.json", Self::base_name(model_id, split)))
    }

    /// Stores a matrix; a second put with the same `(model_id, split)` is an
    /// error.
    pub fn put(&self, pm: &PredictionMatrix) -> Result<()> {
        validate_model_id(&pm.meta.model_id)?;
        let csv = self.csv_path(&pm.meta.model_id, pm.meta.split);
        if csv.exists() {
            return Err(Error::DuplicateEntry(format!(
                "{} ({})",
                pm.meta.model_id,
                split_name(pm.meta.split)
            )));
        }
        let mut out = String::new();
        out.push_str("sample_id,label");
        for k in 0..pm.class_count() {
            out.push_str(&format!(",logit_{k}"));
        }
        out.push('\n');
        for i in 0..pm.sample_count() {
            out.push_str(&format!("{i},{}", pm.labels()[i]));
            for &v in pm.logits().row(i) {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(&csv, out).map_err(|e| Error::io(csv.display().to_string(), e))?;
        let sidecar = self.sidecar_path(&pm.meta.model_id, pm.meta.split);
        let json = serde_json::to_string_pretty(&pm.meta)
            .map_err(|e| Error::InvalidArgument(format!("sidecar serialization: {e}")))?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar.display().to_string(), e))
    }

    /// Removes an entry if present, so a pipeline stage can be re-run with
    /// identical results. Returns whether something was deleted.
    pub fn remove(&self, model_id: &str, split: Split) -> Result<bool> {
        let csv = self.csv_path(model_id, split);
        let sidecar = self.sidecar_path(model_id, split);
        let mut removed = false;
        for path in [csv, sidecar] {
            if path.exists() {
                std::fs::remove_file(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                removed = true;
            }
        }
        Ok(removed)
    }

    /// Loads one matrix, recomputing probabilities from the stored logits.
    pub fn get(&self, model_id: &str, split: Split) -> Result<PredictionMatrix> {
        let sidecar = self.sidecar_path(model_id, split);
        if !sidecar.exists() {
            return Err(Error::UnknownEntry(format!(
                "{model_id} ({})",
                split_name(split)
            )));
        }
        let meta_raw = std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::io(sidecar.display().to_string(), e))?;
        let meta: MemberMeta = serde_json::from_str(&meta_raw).map_err(|e| Error::Format {
            path: sidecar.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        })?;
        let csv = self.csv_path(model_id, split);
        let raw = std::fs::read_to_string(&csv)
            .map_err(|e| Error::io(csv.display().to_string(), e))?;
        parse_csv(&raw, &csv.display().to_string(), meta)
    }

    /// All matrices matching the filter, ordered by model id then split.
    pub fn list(&self, filter: &RegistryFilter) -> Result<Vec<PredictionMatrix>> {
        let mut names: Vec<String> = Vec::new();
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| Error::io(self.root.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(self.root.display().to_string(), e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(stripped) = name.strip_suffix(".json") {
                names.push(stripped.to_string());
            }
        }
        names.sort();
        let mut out = Vec::new();
        for name in names {
            let Some((model_id, split_str)) = name.rsplit_once("__") else {
                continue;
            };
            let split = match split_str {
                "full" => Split::Full,
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                _ => continue,
            };
            if let Some(want) = filter.split {
                if split != want {
                    continue;
                }
            }
            let pm = self.get(model_id, split)?;
            if let Some(h) = filter.hypothesis {
                if pm.meta.hypothesis != h {
                    continue;
                }
            }
            if let Some(g) = filter.group {
                if pm.meta.group != g {
                    continue;
                }
            }
            out.push(pm);
        }
        Ok(out)
    }
}

fn validate_model_id(id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
    {
        return Err(Error::InvalidArgument(format!(
            "model id '{id}' must be non-empty and use only [A-Za-z0-9_.-]"
        )));
    }
    Ok(())
}

fn parse_csv(raw: &str, path: &str, meta: MemberMeta) -> Result<PredictionMatrix> {
    let mut lines = raw.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        path: path.to_string(),
        offset: 0,
        reason: "empty file".to_string(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "sample_id" || columns[1] != "label" {
        return Err(Error::Format {
            path: path.to_string(),
            offset: 0,
            reason: format!("unexpected header '{header}'"),
        });
    }
    let k = columns.len() - 2;
    let mut labels = Vec::new();
    let mut logits = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 2 {
            return Err(Error::Format {
                path: path.to_string(),
                offset: line_no as u64 + 1,
                reason: format!("expected {} fields, found {}", k + 2, fields.len()),
            });
        }
        let label: usize = fields[1].parse().map_err(|_| Error::Format {
            path: path.to_string(),
            offset: line_no as u64 + 1,
            reason: format!("bad label '{}'", fields[1]),
        })?;
        labels.push(label);
        for field in &fields[2..] {
            let v: f64 = field.parse().map_err(|_| Error::Format {
                path: path.to_string(),
                offset: line_no as u64 + 1,
                reason: format!("bad logit '{field}'"),
            })?;
            logits.push(v);
        }
    }
    let n = labels.len();
    PredictionMatrix::from_logits(meta, labels, Matrix::from_vec(n, k, logits))
}

#[cfg(test)]
mod tests {
    use super::super::pm_from_rows;
    use super::*;
    use crate::model::Hypothesis;

    #[test]
    fn put_get_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        let pm = pm_from_rows(
            "member-a",
            Hypothesis::Equivariant,
            &[vec![0.8125, 0.1875], vec![0.25, 0.75]],
            &[0, 1],
        );
        registry.put(&pm).unwrap();
        let loaded = registry.get("member-a", Split::Val).unwrap();
        assert_eq!(loaded.meta, pm.meta);
        assert_eq!(loaded.labels(), pm.labels());
        assert_eq!(loaded.logits().data(), pm.logits().data());
        assert_eq!(loaded.probs().data(), pm.probs().data());
    }

    #[test]
    fn duplicate_and_unknown_ids_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        let pm = pm_from_rows("dup", Hypothesis::Invariant, &[vec![0.5, 0.5]], &[0]);
        registry.put(&pm).unwrap();
        assert!(matches!(
            registry.put(&pm),
            Err(Error::DuplicateEntry(_))
        ));
        assert!(matches!(
            registry.get("missing", Split::Val),
            Err(Error::UnknownEntry(_))
        ));
    }

    #[test]
    fn list_filters_by_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        for (id, hyp) in [
            ("eq-0", Hypothesis::Equivariant),
            ("eq-1", Hypothesis::Equivariant),
            ("inv-0", Hypothesis::Invariant),
        ] {
            registry
                .put(&pm_from_rows(id, hyp, &[vec![0.5, 0.5]], &[0]))
                .unwrap();
        }
        let eq_only = registry
            .list(&RegistryFilter {
                hypothesis: Some(Hypothesis::Equivariant),
                ..RegistryFilter::default()
            })
            .unwrap();
        let ids: Vec<&str> = eq_only.iter().map(|pm| pm.meta.model_id.as_str()).collect();
        assert_eq!(ids, vec!["eq-0", "eq-1"]);
        let all = registry.list(&RegistryFilter::default()).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn rejects_hostile_model_ids() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        let pm = pm_from_rows("../evil", Hypothesis::Invariant, &[vec![1.0, 0.0]], &[0]);
        assert!(registry.put(&pm).is_err());
    }
}
