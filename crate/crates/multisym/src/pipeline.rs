//! The experiment harness: reproducible stages from dataset generation to
//! the final report, all driven by an [`ExperimentConfig`].
//!
//! Every stage is a deterministic function of (config, seeds); re-running a
//! stage with unchanged inputs reproduces its output files byte-for-byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, PoolMemberSpec};
use crate::dataset::{self, Dataset, Split, SymmetryTag};
use crate::ensemble::registry::{Registry, RegistryFilter};
use crate::ensemble::{
    average_predictions, greedy_ensemble, leading_hypothesis, random_ensemble,
    GreedyScore, MemberMeta, PredictionMatrix, SelectionConstraint,
};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::metrics::{self, MetricsReport};
use crate::model::{
    self, fit_classifier, load_checkpoint, predict_proba, pretrain, rotation_probe,
    save_checkpoint, Classifier, Hypothesis, TrainConfig, TrainLog,
};

/// Directory layout under the output root.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn dataset_path(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Full => "full",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        self.dataset_dir().join(format!("{name}.mseds"))
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_path(&self, model_id: &str) -> PathBuf {
        self.checkpoints_dir().join(format!("{model_id}.msemd"))
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn log_path(&self, model_id: &str) -> PathBuf {
        self.logs_dir().join(format!("{model_id}.train.json"))
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.root.join("registry")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn ensure(&self, dir: PathBuf) -> Result<PathBuf> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(dir)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Derives a stage-specific seed from a member seed.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x0100_0000_01B3).wrapping_add(salt)
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// What `gen-data` reports about the dataset it wrote.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSummary {
    pub class_count: usize,
    pub train_items: usize,
    pub val_items: usize,
    pub test_items: usize,
    pub symmetric_classes: Vec<usize>,
    pub oriented_classes: Vec<usize>,
}

/// Generates and splits the dataset, writing one file per split.
pub fn stage_gen_data(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<DatasetSummary> {
    cfg.validate()?;
    layout.ensure(layout.dataset_dir())?;
    let full = dataset::generate(&cfg.dataset)?;
    let (train, val, test) = dataset::split(&full, cfg.split_fractions, cfg.split_seed)?;
    dataset::save(&train, &layout.dataset_path(Split::Train))?;
    dataset::save(&val, &layout.dataset_path(Split::Val))?;
    dataset::save(&test, &layout.dataset_path(Split::Test))?;
    let summary = DatasetSummary {
        class_count: full.class_count(),
        train_items: train.len(),
        val_items: val.len(),
        test_items: test.len(),
        symmetric_classes: tag_classes(&full, SymmetryTag::Symmetric),
        oriented_classes: tag_classes(&full, SymmetryTag::Oriented),
    };
    write_json(&layout.dataset_dir().join("summary.json"), &summary)?;
    Ok(summary)
}

fn tag_classes(data: &Dataset, tag: SymmetryTag) -> Vec<usize> {
    data.symmetry_profile()
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == tag)
        .map(|(c, _)| c)
        .collect()
}

/// Loads the three split files written by [`stage_gen_data`].
pub fn load_splits(layout: &OutputLayout) -> Result<(Dataset, Dataset, Dataset)> {
    let train = dataset::load(&layout.dataset_path(Split::Train))?.with_split(Split::Train);
    let val = dataset::load(&layout.dataset_path(Split::Val))?.with_split(Split::Val);
    let test = dataset::load(&layout.dataset_path(Split::Test))?.with_split(Split::Test);
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

/// Pretrains every pool member that passes the filter; members run in
/// parallel and each is a deterministic function of its own seed.
pub fn stage_pretrain(
    cfg: &ExperimentConfig,
    layout: &OutputLayout,
    filter: Option<Hypothesis>,
) -> Result<Vec<String>> {
    cfg.validate()?;
    layout.ensure(layout.checkpoints_dir())?;
    layout.ensure(layout.logs_dir())?;
    let (train, _, _) = load_splits(layout)?;
    let members: Vec<&PoolMemberSpec> = cfg.members_of(filter, None);
    let results: Vec<Result<String>> = members
        .par_iter()
        .map(|member| {
            let train_cfg = TrainConfig {
                seed: member.seed,
                ..cfg.pretrain.clone()
            };
            let (params, log) = pretrain(
                &train,
                member.hypothesis,
                member.group,
                &cfg.arch,
                &cfg.augment,
                &train_cfg,
            )?;
            let id = member.model_id();
            save_checkpoint(&params, &layout.checkpoint_path(&id))?;
            write_json(&layout.log_path(&id), &log)?;
            Ok(id)
        })
        .collect();
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// fit-predict
// ---------------------------------------------------------------------------

/// Converts every pretrained member into a classifier and writes validation
/// and test prediction matrices into the registry.
pub fn stage_fit_predict(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<Vec<String>> {
    cfg.validate()?;
    let (train, val, test) = load_splits(layout)?;
    let registry = Registry::open(layout.registry_dir())?;
    let results: Vec<Result<String>> = cfg
        .pool
        .par_iter()
        .map(|member| {
            let id = member.model_id();
            let checkpoint = layout.checkpoint_path(&id);
            if !checkpoint.exists() {
                return Err(Error::UnknownEntry(format!(
                    "missing checkpoint {}",
                    checkpoint.display()
                )));
            }
            let backbone = load_checkpoint(&checkpoint)?;
            let fit_cfg = TrainConfig {
                seed: derive_seed(member.seed, 0x51),
                ..cfg.finetune.clone()
            };
            let (classifier, _log) =
                fit_classifier(&backbone, &train, &val, cfg.classifier_mode, &fit_cfg)?;
            for (split, data) in [(Split::Val, &val), (Split::Test, &test)] {
                let pm = predictions_for(&classifier, member, data, split)?;
                registry.remove(&id, split)?;
                registry.put(&pm)?;
            }
            Ok(id)
        })
        .collect();
    results.into_iter().collect()
}

fn predictions_for(
    classifier: &Classifier,
    member: &PoolMemberSpec,
    data: &Dataset,
    split: Split,
) -> Result<PredictionMatrix> {
    let refs: Vec<&crate::image::Image> = data.items().iter().map(|it| &it.image).collect();
    let (_, logits) = predict_proba(classifier, &refs)?;
    PredictionMatrix::from_logits(
        MemberMeta {
            model_id: member.model_id(),
            hypothesis: member.hypothesis,
            group: member.group,
            split,
            seed: member.seed,
        },
        data.labels(),
        logits,
    )
}

// ---------------------------------------------------------------------------
// probes
// ---------------------------------------------------------------------------

/// Frozen-backbone transformation probes, evaluated on the oriented-class
/// subset of the test split (symmetric-class images carry no information
/// about the applied element, so they are excluded from the probe set).
pub fn stage_probes(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<Vec<ProbeResult>> {
    let (_, _, test) = load_splits(layout)?;
    let oriented = test.filter_by_tag(SymmetryTag::Oriented);
    let results: Vec<Result<ProbeResult>> = cfg
        .pool
        .par_iter()
        .map(|member| {
            let id = member.model_id();
            let backbone = load_checkpoint(&layout.checkpoint_path(&id))?;
            let accuracy = rotation_probe(&backbone, &oriented, member.group, &cfg.probe)?;
            Ok(ProbeResult {
                model_id: id,
                hypothesis: member.hypothesis,
                group: member.group,
                accuracy,
            })
        })
        .collect();
    let mut probes: Vec<ProbeResult> = results.into_iter().collect::<Result<_>>()?;
    probes.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    Ok(probes)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeResult {
    pub model_id: String,
    pub hypothesis: Hypothesis,
    pub group: GroupId,
    pub accuracy: f64,
}

// ---------------------------------------------------------------------------
// ensembles
// ---------------------------------------------------------------------------

/// One greedy pool row of the ensemble table: test metrics of every prefix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GreedyRow {
    pub pool: String,
    pub sizes: Vec<usize>,
    pub test_accuracy: Vec<f64>,
    pub nll: Vec<f64>,
    pub auuqc: Vec<f64>,
    /// Member selection order at the largest size.
    pub sequence: Vec<String>,
}

/// One random-strategy row: mean and std of test accuracy over repeats.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RandomRow {
    pub pool: String,
    pub sizes: Vec<usize>,
    pub mean_accuracy: Vec<f64>,
    pub std_accuracy: Vec<f64>,
}

/// The ensemble-construction report for one experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleReport {
    pub config_hash: String,
    pub leading: Hypothesis,
    pub greedy: Vec<GreedyRow>,
    pub random: Vec<RandomRow>,
}

struct PoolRow {
    name: String,
    constraint: SelectionConstraint,
    member_filter: Box<dyn Fn(&PredictionMatrix) -> bool + Sync>,
}

fn pool_rows(cfg: &ExperimentConfig, leading: Hypothesis) -> Vec<PoolRow> {
    let mut rows = vec![
        PoolRow {
            name: "inv".to_string(),
            constraint: SelectionConstraint::Only(Hypothesis::Invariant),
            member_filter: Box::new(|pm| pm.meta.hypothesis == Hypothesis::Invariant),
        },
        PoolRow {
            name: "eq".to_string(),
            constraint: SelectionConstraint::Only(Hypothesis::Equivariant),
            member_filter: Box::new(|pm| pm.meta.hypothesis == Hypothesis::Equivariant),
        },
        PoolRow {
            name: "eq_inv".to_string(),
            constraint: SelectionConstraint::Balanced { leading },
            member_filter: Box::new(|_| true),
        },
    ];
    // Per-group rows appear once the pool spans several groups.
    let mut groups: Vec<GroupId> = cfg.pool.iter().map(|m| m.group).collect();
    groups.sort_by_key(|g| g.name());
    groups.dedup();
    if groups.len() > 1 {
        for group in groups {
            rows.push(PoolRow {
                name: format!("eq_inv-{}", group.name()),
                constraint: SelectionConstraint::Any,
                member_filter: Box::new(move |pm| pm.meta.group == group),
            });
        }
        rows.push(PoolRow {
            name: "all-groups".to_string(),
            constraint: SelectionConstraint::Any,
            member_filter: Box::new(|_| true),
        });
    }
    rows
}

/// Builds greedy and random ensemble tables from the registry.
pub fn stage_ensemble(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<EnsembleReport> {
    cfg.validate()?;
    let registry = Registry::open(layout.registry_dir())?;
    let val_pool = registry.list(&RegistryFilter {
        split: Some(Split::Val),
        ..RegistryFilter::default()
    })?;
    let test_pool = registry.list(&RegistryFilter {
        split: Some(Split::Test),
        ..RegistryFilter::default()
    })?;
    if val_pool.is_empty() {
        return Err(Error::InvalidArgument(
            "registry has no validation predictions; run fit-predict first".into(),
        ));
    }
    let val_refs: Vec<&PredictionMatrix> = val_pool.iter().collect();
    let leading = leading_hypothesis(&val_refs);

    let max_size = *cfg.ensemble_sizes.iter().max().expect("validated sizes");
    let mut greedy_rows = Vec::new();
    let mut random_rows = Vec::new();
    for row in pool_rows(cfg, leading) {
        let row_val: Vec<&PredictionMatrix> = val_pool
            .iter()
            .filter(|pm| (row.member_filter)(pm))
            .collect();
        if row_val.is_empty() {
            continue;
        }
        let m_max = max_size.min(row_val.len());
        let greedy_seed = derive_seed(cfg.seed, 0x97);
        let specs = greedy_ensemble(&row_val, m_max, greedy_seed, GreedyScore::Accuracy)?;
        let sizes: Vec<usize> = cfg
            .ensemble_sizes
            .iter()
            .copied()
            .filter(|&s| s <= m_max)
            .collect();
        let mut accs = Vec::new();
        let mut nlls = Vec::new();
        let mut auuqcs = Vec::new();
        for &size in &sizes {
            let spec = &specs[size - 1];
            let test_refs: Vec<&PredictionMatrix> = spec
                .member_ids
                .iter()
                .map(|id| find_test(&test_pool, id))
                .collect::<Result<_>>()?;
            let ensemble = average_predictions(&test_refs)?;
            let labels = ensemble.labels().to_vec();
            accs.push(metrics::accuracy(&ensemble, &labels)?);
            nlls.push(metrics::nll(&ensemble, &labels)?);
            let (_, auuqc) =
                metrics::rejection_curve(&test_refs, &labels, metrics::UncertaintyScore::Bald)?;
            auuqcs.push(auuqc);
        }
        greedy_rows.push(GreedyRow {
            pool: row.name.clone(),
            sizes: sizes.clone(),
            test_accuracy: accs,
            nll: nlls,
            auuqc: auuqcs,
            sequence: specs.last().expect("at least one spec").member_ids.clone(),
        });

        // Random strategy over the same row pool.
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut row_sizes = Vec::new();
        for &size in &sizes {
            let mut values = Vec::with_capacity(cfg.random_repeats);
            let mut feasible = true;
            for rep in 0..cfg.random_repeats {
                let seed = derive_seed(cfg.seed, 0x1000 + rep as u64);
                let spec = match random_ensemble(&row_val, size, row.constraint, seed) {
                    Ok(spec) => spec,
                    Err(_) => {
                        feasible = false;
                        break;
                    }
                };
                let test_refs: Vec<&PredictionMatrix> = spec
                    .member_ids
                    .iter()
                    .map(|id| find_test(&test_pool, id))
                    .collect::<Result<_>>()?;
                let ensemble = average_predictions(&test_refs)?;
                let labels = ensemble.labels().to_vec();
                values.push(metrics::accuracy(&ensemble, &labels)?);
            }
            if !feasible {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / values.len() as f64;
            row_sizes.push(size);
            means.push(mean);
            stds.push(var.sqrt());
        }
        random_rows.push(RandomRow {
            pool: row.name,
            sizes: row_sizes,
            mean_accuracy: means,
            std_accuracy: stds,
        });
    }
    let report = EnsembleReport {
        config_hash: cfg.digest(),
        leading,
        greedy: greedy_rows,
        random: random_rows,
    };
    layout.ensure(layout.reports_dir())?;
    write_json(&layout.reports_dir().join("ensembles.json"), &report)?;
    Ok(report)
}

fn find_test<'a>(pool: &'a [PredictionMatrix], id: &str) -> Result<&'a PredictionMatrix> {
    pool.iter()
        .find(|pm| pm.meta.model_id == id)
        .ok_or_else(|| Error::UnknownEntry(format!("{id} (test)")))
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Computes the full metric report for a named member set on the test split
/// and writes the JSON plus the rejection-curve and per-class CSV files.
pub fn stage_metrics(
    cfg: &ExperimentConfig,
    layout: &OutputLayout,
    member_ids: &[String],
    name: &str,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let registry = Registry::open(layout.registry_dir())?;
    let test_pool = registry.list(&RegistryFilter {
        split: Some(Split::Test),
        ..RegistryFilter::default()
    })?;
    let members: Vec<&PredictionMatrix> = member_ids
        .iter()
        .map(|id| find_test(&test_pool, id))
        .collect::<Result<_>>()?;
    let labels = members[0].labels().to_vec();
    let report = metrics::report(&members, &labels)?;
    let dir = layout.ensure(layout.reports_dir())?;
    write_json(&dir.join(format!("metrics_{name}.json")), &report)?;

    let mut curve_csv = String::from("fraction_removed,accuracy\n");
    for point in &report.rejection_curve {
        curve_csv.push_str(&format!("{},{}\n", point.fraction_removed, point.accuracy));
    }
    let curve_path = dir.join(format!("rejection_{name}.csv"));
    std::fs::write(&curve_path, curve_csv)
        .map_err(|e| Error::io(curve_path.display().to_string(), e))?;

    let mut class_csv = String::from("class,accuracy\n");
    for (class, acc) in report.per_class_accuracy.iter().enumerate() {
        match acc {
            Some(a) => class_csv.push_str(&format!("{class},{a}\n")),
            None => class_csv.push_str(&format!("{class},\n")),
        }
    }
    let class_path = dir.join(format!("per_class_{name}.csv"));
    std::fs::write(&class_path, class_csv)
        .map_err(|e| Error::io(class_path.display().to_string(), e))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// full report
// ---------------------------------------------------------------------------

/// Accuracy summary of one member.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MemberSummary {
    pub model_id: String,
    pub hypothesis: Hypothesis,
    pub group: GroupId,
    pub seed: u64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Diversity of one fixed member set on the test split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiversityRow {
    pub pool: String,
    pub members: Vec<String>,
    pub error_inconsistency: f64,
    pub variance_logits: f64,
    pub variance_probs: f64,
    pub pairwise_kl: f64,
}

/// Everything emitted by one full pipeline run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FullReport {
    pub config_hash: String,
    pub dataset: DatasetSummary,
    pub members: Vec<MemberSummary>,
    pub probes: Vec<ProbeResult>,
    pub leading: Hypothesis,
    /// Per-class dominance of the first equivariant member over the first
    /// invariant one: fractions where it is better / worse / equal.
    pub dominance_eq_vs_inv: Option<(f64, f64, f64)>,
    pub ensembles: EnsembleReport,
    pub diversity: Vec<DiversityRow>,
    /// Metric report for the headline greedy mixed ensemble at the largest
    /// size.
    pub headline_metrics: MetricsReport,
}

/// Runs every stage in order and writes `reports/report.json` plus a
/// provenance sidecar.
pub fn run_full(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<FullReport> {
    let dataset = stage_gen_data(cfg, layout)?;
    stage_pretrain(cfg, layout, None)?;
    stage_fit_predict(cfg, layout)?;
    let probes = stage_probes(cfg, layout)?;
    let ensembles = stage_ensemble(cfg, layout)?;

    let registry = Registry::open(layout.registry_dir())?;
    let val_pool = registry.list(&RegistryFilter {
        split: Some(Split::Val),
        ..RegistryFilter::default()
    })?;
    let test_pool = registry.list(&RegistryFilter {
        split: Some(Split::Test),
        ..RegistryFilter::default()
    })?;

    let mut members = Vec::new();
    for member in &cfg.pool {
        let id = member.model_id();
        let val_pm = val_pool
            .iter()
            .find(|pm| pm.meta.model_id == id)
            .ok_or_else(|| Error::UnknownEntry(format!("{id} (val)")))?;
        let test_pm = find_test(&test_pool, &id)?;
        members.push(MemberSummary {
            model_id: id,
            hypothesis: member.hypothesis,
            group: member.group,
            seed: member.seed,
            val_accuracy: metrics::accuracy(val_pm, val_pm.labels())?,
            test_accuracy: metrics::accuracy(test_pm, test_pm.labels())?,
        });
    }
    members.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    // Table-1 analogue: per-class dominance of the first members of each
    // hypothesis on the test split.
    let first_of = |h: Hypothesis| -> Option<&PredictionMatrix> {
        test_pool
            .iter()
            .filter(|pm| pm.meta.hypothesis == h)
            .min_by(|a, b| a.meta.model_id.cmp(&b.meta.model_id))
    };
    let dominance_eq_vs_inv = match (first_of(Hypothesis::Equivariant), first_of(Hypothesis::Invariant))
    {
        (Some(eq), Some(inv)) => Some(metrics::dominance_proportions(
            eq,
            inv,
            eq.labels(),
        )?),
        _ => None,
    };

    let diversity = diversity_rows(cfg, &test_pool)?;

    let headline_ids = ensembles
        .greedy
        .iter()
        .find(|row| row.pool == "eq_inv")
        .or_else(|| ensembles.greedy.first())
        .map(|row| row.sequence.clone())
        .unwrap_or_default();
    let headline_metrics = stage_metrics(cfg, layout, &headline_ids, "headline")?;

    let report = FullReport {
        config_hash: cfg.digest(),
        dataset,
        members,
        probes,
        leading: ensembles.leading,
        dominance_eq_vs_inv,
        ensembles,
        diversity,
        headline_metrics,
    };
    let dir = layout.ensure(layout.reports_dir())?;
    write_json(&dir.join("report.json"), &report)?;
    write_provenance(cfg, layout)?;
    Ok(report)
}

fn diversity_rows(
    cfg: &ExperimentConfig,
    test_pool: &[PredictionMatrix],
) -> Result<Vec<DiversityRow>> {
    let m = cfg.diversity_members;
    let ids_of = |h: Option<Hypothesis>, count: usize| -> Vec<String> {
        let mut ids: Vec<String> = test_pool
            .iter()
            .filter(|pm| h.map_or(true, |h| pm.meta.hypothesis == h))
            .map(|pm| pm.meta.model_id.clone())
            .collect();
        ids.sort();
        ids.truncate(count);
        ids
    };
    let mut mixed = ids_of(Some(Hypothesis::Equivariant), m.div_ceil(2));
    mixed.extend(ids_of(Some(Hypothesis::Invariant), m / 2));
    let sets = [
        ("inv".to_string(), ids_of(Some(Hypothesis::Invariant), m)),
        ("eq".to_string(), ids_of(Some(Hypothesis::Equivariant), m)),
        ("eq_inv".to_string(), mixed),
    ];
    let mut rows = Vec::new();
    for (name, ids) in sets {
        if ids.len() < 2 {
            continue;
        }
        let members: Vec<&PredictionMatrix> = ids
            .iter()
            .map(|id| find_test(test_pool, id))
            .collect::<Result<_>>()?;
        let labels = members[0].labels().to_vec();
        rows.push(DiversityRow {
            pool: name,
            members: ids,
            error_inconsistency: metrics::error_inconsistency(&members, &labels)?,
            variance_logits: metrics::prediction_variance(
                &members,
                metrics::VarianceSpace::Logits,
            )?,
            variance_probs: metrics::prediction_variance(&members, metrics::VarianceSpace::Probs)?,
            pairwise_kl: metrics::pairwise_kl(&members)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct Provenance {
    config_hash: String,
    members: Vec<ProvenanceMember>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct ProvenanceMember {
    model_id: String,
    hypothesis: Hypothesis,
    group: GroupId,
    seed: u64,
}

fn write_provenance(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<()> {
    let dir = layout.ensure(layout.reports_dir())?;
    let provenance = Provenance {
        config_hash: cfg.digest(),
        members: cfg
            .pool
            .iter()
            .map(|m| ProvenanceMember {
                model_id: m.model_id(),
                hypothesis: m.hypothesis,
                group: m.group,
                seed: m.seed,
            })
            .collect(),
    };
    write_json(&dir.join("provenance.json"), &provenance)?;
    cfg.save(&dir.join("config.json"))
}

/// Loads the training log of one member, as written by [`stage_pretrain`].
pub fn load_train_log(layout: &OutputLayout, model_id: &str) -> Result<TrainLog> {
    let path = layout.log_path(model_id);
    let raw =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: path.display().to_string(),
        offset: 0,
        reason: e.to_string(),
    })
}

/// Convenience accessor for the checkpoint of one member.
pub fn load_member_checkpoint(
    layout: &OutputLayout,
    model_id: &str,
) -> Result<model::ModelParams> {
    load_checkpoint(&layout.checkpoint_path(model_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetSpec;

    /// A configuration small enough for unit tests.
    pub(crate) fn tiny_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_seed(seed);
        cfg.dataset = DatasetSpec {
            class_count: 4,
            per_class: 21,
            side: 8,
            channels: 1,
            symmetric_fraction: 0.5,
            noise_std: 0.05,
            seed: cfg.dataset.seed,
        };
        cfg.arch = crate::model::ArchSpec {
            input_dim: 64,
            encoder_dims: vec![24, 12],
            projection_dim: 8,
            predictor_hidden: vec![12],
        };
        cfg.pretrain.epochs = 2;
        cfg.pretrain.batch_size = 16;
        cfg.finetune.epochs = 3;
        cfg.finetune.batch_size = 16;
        cfg.probe.epochs = 3;
        cfg.ensemble_sizes = vec![1, 2, 3];
        // Two members per hypothesis keep the stages fast.
        cfg.pool.truncate(7);
        cfg.pool.remove(2);
        cfg.pool.remove(2);
        cfg.pool.remove(2);
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn full_pipeline_runs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(5);
        let layout_a = OutputLayout::new(dir.path().join("a"));
        let layout_b = OutputLayout::new(dir.path().join("b"));
        let report_a = run_full(&cfg, &layout_a).unwrap();
        let report_b = run_full(&cfg, &layout_b).unwrap();
        assert_eq!(report_a, report_b);

        // Every output file matches byte for byte.
        let mut files_a = collect_files(layout_a.root());
        let mut files_b = collect_files(layout_b.root());
        files_a.sort();
        files_b.sort();
        let rel = |files: &[PathBuf], root: &Path| -> Vec<PathBuf> {
            files
                .iter()
                .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
                .collect()
        };
        assert_eq!(rel(&files_a, layout_a.root()), rel(&files_b, layout_b.root()));
        for (a, b) in files_a.iter().zip(&files_b) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} differs"
            );
        }
        assert_eq!(report_a.members.len(), 4);
        assert!(!report_a.ensembles.greedy.is_empty());
    }

    fn collect_files(root: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(path);
                }
            }
        }
        out
    }

    #[test]
    fn fit_predict_requires_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(6);
        let layout = OutputLayout::new(dir.path().join("out"));
        stage_gen_data(&cfg, &layout).unwrap();
        match stage_fit_predict(&cfg, &layout) {
            Err(Error::UnknownEntry(msg)) => assert!(msg.contains("checkpoint")),
            other => panic!("expected missing checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn gen_data_summary_matches_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(7);
        let layout = OutputLayout::new(dir.path().join("out"));
        let summary = stage_gen_data(&cfg, &layout).unwrap();
        assert_eq!(summary.class_count, 4);
        assert_eq!(summary.symmetric_classes, vec![0, 1]);
        assert_eq!(summary.oriented_classes, vec![2, 3]);
        assert_eq!(
            summary.train_items + summary.val_items + summary.test_items,
            4 * 21
        );
        // Re-running produces identical files.
        let before = std::fs::read(layout.dataset_path(Split::Train)).unwrap();
        stage_gen_data(&cfg, &layout).unwrap();
        let after = std::fs::read(layout.dataset_path(Split::Train)).unwrap();
        assert_eq!(before, after);
    }
}
