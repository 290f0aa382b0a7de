//! Accuracy matrices from evaluation results.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::eval::EvalResult;
use crate::error::{Error, Result};
use crate::postprocess::bucket_label;
use crate::qa::QuestionType;
use crate::rollout::{Format, Setting};

/// The fields of a dataset line that reports need.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleKey {
    pub sample_id: String,
    pub setting: Setting,
    pub format: Format,
    pub bucket_limit: u64,
    pub question_type: QuestionType,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub correct: usize,
    pub extraction_failures: usize,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.correct as f64 / self.n as f64)
    }

    fn add(&mut self, r: &EvalResult) {
        self.n += 1;
        self.correct += r.correct as usize;
        self.extraction_failures += r.extracted.ok().is_none() as usize;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub question_type: QuestionType,
    pub bucket_limit: u64,
    #[serde(flatten)]
    pub cell: Cell,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub setting: Setting,
    pub format: Format,
    pub buckets: Vec<u64>,
    pub cells: Vec<CellReport>,
    #[serde(flatten)]
    pub total: Cell,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupReport>,
    /// Results whose sample ids were evaluated but had no dataset entry are
    /// rejected, so this counts dataset samples without a result.
    pub missing_results: usize,
}

/// Joins results to their samples and tallies accuracy per (setting,
/// format), question type and bucket. Independent of result order.
pub fn aggregate(dataset: &[SampleKey], results: &[EvalResult]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no evaluation results".into()));
    }
    let index: HashMap<&str, &SampleKey> = dataset.iter().map(|k| (k.sample_id.as_str(), k)).collect();
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<(Setting, Format), BTreeMap<(QuestionType, u64), Cell>> = BTreeMap::new();
    for r in results {
        let key = index
            .get(r.sample_id.as_str())
            .ok_or_else(|| Error::DatasetMismatch(format!("unknown sample {:?}", r.sample_id)))?;
        if !seen.insert(r.sample_id.as_str()) {
            return Err(Error::DatasetMismatch(format!("duplicate result for {:?}", r.sample_id)));
        }
        groups
            .entry((key.setting, key.format))
            .or_default()
            .entry((key.question_type, key.bucket_limit))
            .or_default()
            .add(r);
    }
    let groups = groups
        .into_iter()
        .map(|((setting, format), cells)| {
            let mut buckets: Vec<u64> = cells.keys().map(|(_, b)| *b).collect();
            buckets.sort_unstable();
            buckets.dedup();
            let mut total = Cell::default();
            for c in cells.values() {
                total.n += c.n;
                total.correct += c.correct;
                total.extraction_failures += c.extraction_failures;
            }
            GroupReport {
                setting,
                format,
                buckets,
                accuracy: total.accuracy(),
                total,
                cells: cells
                    .into_iter()
                    .map(|((question_type, bucket_limit), cell)| CellReport {
                        question_type,
                        bucket_limit,
                        accuracy: cell.accuracy(),
                        cell,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Report {
        groups,
        missing_results: dataset.len() - seen.len(),
    })
}

impl Report {
    /// One row per (setting, format, question type), one column per bucket;
    /// cells without samples are left empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut buckets: Vec<u64> = self.groups.iter().flat_map(|g| g.buckets.iter().copied()).collect();
        buckets.sort_unstable();
        buckets.dedup();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["setting".to_string(), "format".into(), "question_type".into()];
        header.extend(buckets.iter().map(|&b| bucket_label(b)));
        header.push("all".into());
        let csv_err = |e: csv::Error| Error::Config(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        let fmt = |a: Option<f64>| a.map(|x| format!("{x:.4}")).unwrap_or_default();
        for g in &self.groups {
            for q in QuestionType::ALL {
                let mine: Vec<&CellReport> = g.cells.iter().filter(|c| c.question_type == q).collect();
                if mine.is_empty() {
                    continue;
                }
                let mut row = vec![g.setting.short().to_string(), g.format.as_str().into(), q.as_str().into()];
                let mut all = Cell::default();
                for &b in &buckets {
                    let c = mine.iter().find(|c| c.bucket_limit == b);
                    row.push(fmt(c.and_then(|c| c.accuracy)));
                    if let Some(c) = c {
                        all.n += c.cell.n;
                        all.correct += c.cell.correct;
                    }
                }
                row.push(fmt(all.accuracy()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
    }

    pub fn accuracy(&self, setting: Setting, format: Format, q: QuestionType, bucket: u64) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.setting == setting && g.format == format)?
            .cells
            .iter()
            .find(|c| c.question_type == q && c.bucket_limit == bucket)?
            .accuracy
    }
}
