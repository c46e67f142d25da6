//! Per-sample positive-set construction for the five supported dataset
//! kinds, plus the all-related-boxes supervision variant that widens the
//! positives to every scene object whose category is mentioned in the
//! sample text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::SceneBundle;
use crate::text::{contains_word_sequence, normalize_phrase, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Scanrefer,
    Multi3drefer,
    Scan2cap,
    Scanqa,
    Sqa3d,
}

/// One normalized training sample. `referenced_object_ids` and
/// `referenced_object_names` are parallel lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub dataset_kind: DatasetKind,
    pub question: String,
    #[serde(default)]
    pub answer: Option<String>,
    pub referenced_object_ids: Vec<u32>,
    pub referenced_object_names: Vec<String>,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        if self.referenced_object_ids.len() != self.referenced_object_names.len() {
            return Err(Error::validation(format!(
                "sample has {} referenced ids but {} names; the lists must be parallel",
                self.referenced_object_ids.len(),
                self.referenced_object_names.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Positives,
    Skip,
}

/// The sample's positive object set E+, or the skip marker for samples that
/// take no contrastive loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    pub mode: TargetMode,
    /// Sorted ascending, deduplicated. Empty when mode is skip; may also be
    /// empty with mode positives (zero-target samples, skipped downstream).
    pub ids: Vec<u32>,
}

impl TargetSet {
    pub fn positives(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        TargetSet {
            mode: TargetMode::Positives,
            ids,
        }
    }

    pub fn skip() -> Self {
        TargetSet {
            mode: TargetMode::Skip,
            ids: Vec::new(),
        }
    }

    pub fn is_skip(&self) -> bool {
        self.mode == TargetMode::Skip
    }
}

/// Which objects count as positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisionVariant {
    /// Only the dataset-annotated ground-truth boxes.
    GtBoxes,
    /// Ground-truth boxes plus every scene object whose category name is
    /// mentioned in the question or answer.
    AllRelatedBoxes,
}

impl SupervisionVariant {
    pub fn tag(self) -> &'static str {
        match self {
            SupervisionVariant::GtBoxes => "gt_boxes",
            SupervisionVariant::AllRelatedBoxes => "all_related_boxes",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gt_boxes" => Ok(SupervisionVariant::GtBoxes),
            "all_related_boxes" => Ok(SupervisionVariant::AllRelatedBoxes),
            other => Err(Error::Config(format!(
                "unknown supervision variant `{other}` (expected gt_boxes or all_related_boxes)"
            ))),
        }
    }
}

/// Build the sample's target set under the dataset-specific rules:
///
/// * `scanrefer` / `scan2cap` — the single referenced object.
/// * `multi3drefer` — all referenced objects (possibly none).
/// * `scanqa` — kept iff exactly one object is referenced, or all referenced
///   names are identical and match the answer; otherwise skipped.
/// * `sqa3d` — always skipped.
///
/// With [`SupervisionVariant::AllRelatedBoxes`], a kept sample additionally
/// takes every scene object whose category is mentioned in the question or
/// answer. Skip decisions are unaffected by the variant.
pub fn build_target_set(
    sample: &TrainingSample,
    scene: &SceneBundle,
    variant: SupervisionVariant,
) -> Result<TargetSet> {
    sample.validate()?;
    for &id in &sample.referenced_object_ids {
        if scene.object_by_id(id).is_none() {
            return Err(Error::DanglingReference(id));
        }
    }

    let base = match sample.dataset_kind {
        DatasetKind::Scanrefer | DatasetKind::Scan2cap => {
            if sample.referenced_object_ids.len() != 1 {
                return Err(Error::validation(format!(
                    "a {:?} sample must reference exactly one object, got {}",
                    sample.dataset_kind,
                    sample.referenced_object_ids.len()
                )));
            }
            TargetSet::positives(sample.referenced_object_ids.clone())
        }
        DatasetKind::Multi3drefer => TargetSet::positives(sample.referenced_object_ids.clone()),
        DatasetKind::Scanqa => {
            if scanqa_keep(sample) {
                TargetSet::positives(sample.referenced_object_ids.clone())
            } else {
                TargetSet::skip()
            }
        }
        DatasetKind::Sqa3d => TargetSet::skip(),
    };

    if variant == SupervisionVariant::GtBoxes || base.is_skip() {
        return Ok(base);
    }

    // Widen with category-name mentions from the sample text.
    let vocabulary: BTreeSet<String> = scene.objects.iter().map(|o| o.category.clone()).collect();
    let mentioned =
        parse_mentioned_categories(&sample.question, sample.answer.as_deref(), &vocabulary);
    let mentioned_norm: BTreeSet<String> = mentioned.iter().map(|m| normalize_phrase(m)).collect();
    let mut ids = base.ids;
    ids.extend(
        scene
            .objects
            .iter()
            .filter(|o| mentioned_norm.contains(&normalize_phrase(&o.category)))
            .map(|o| o.id),
    );
    Ok(TargetSet::positives(ids))
}

/// The ScanQA keep rule: exactly one referenced object, or all names
/// identical and equal to the answer. Name/answer comparison is
/// case-insensitive on whitespace-normalized strings.
fn scanqa_keep(sample: &TrainingSample) -> bool {
    if sample.referenced_object_ids.len() == 1 {
        return true;
    }
    let mut names = sample
        .referenced_object_names
        .iter()
        .map(|n| normalize_phrase(n));
    let Some(first) = names.next() else {
        return false;
    };
    if !names.all(|n| n == first) {
        return false;
    }
    sample
        .answer
        .as_deref()
        .is_some_and(|a| normalize_phrase(a) == first)
}

/// One line of a samples JSONL file: a training sample bound to the scene
/// it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    #[serde(flatten)]
    pub sample: TrainingSample,
}

/// One line of a targets JSONL file: the resolved target set for the
/// same-index line of the samples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub scene_id: String,
    #[serde(flatten)]
    pub target: TargetSet,
}

/// Read a samples JSONL file, skipping blank lines. Parse errors name the
/// file and line.
pub fn read_sample_records(path: &std::path::Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            path: format!("{}: line {}", path.display(), index + 1),
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Category names from `vocabulary` mentioned in the question or answer:
/// case-insensitive whole-word matches, with multi-word names matched as
/// contiguous word sequences. Returned entries keep their vocabulary form.
pub fn parse_mentioned_categories(
    question: &str,
    answer: Option<&str>,
    vocabulary: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut words = tokenize(question);
    if let Some(answer) = answer {
        words.extend(tokenize(answer));
    }
    vocabulary
        .iter()
        .filter(|name| contains_word_sequence(&words, &tokenize(name)))
        .cloned()
        .collect()
}
