//! Operator latency models keyed by `(kind, α, β)`, trained per interval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distribution::{bin_of, DEFAULT_CEILING_MS};
use super::Distribution;
use crate::kvstore::latency::{Alpha, TraceRow};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("the trace is empty")]
    EmptyTrace,
    #[error("interval length must be positive")]
    BadInterval,
    #[error("no model for {kind}({alpha}, {beta} B) or any larger setting")]
    NoDominatingModel {
        kind: String,
        alpha: Alpha,
        beta: u64,
    },
    #[error("model file: {0}")]
    File(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelKey {
    pub kind: String,
    pub alpha: Alpha,
    pub beta: u64,
}

impl ModelKey {
    pub fn new(kind: &str, alpha: Alpha, beta: u64) -> Self {
        ModelKey {
            kind: kind.to_string(),
            alpha,
            beta,
        }
    }

    /// Whether a model trained at `self` may stand in for `wanted`: same
    /// kind and no smaller in any parameter.
    pub fn dominates(&self, wanted: &ModelKey) -> bool {
        let per_key = match (self.alpha.per_key, wanted.alpha.per_key) {
            (None, None) => true,
            (Some(a), Some(b)) => a >= b,
            _ => false,
        };
        self.kind == wanted.kind
            && self.alpha.count >= wanted.alpha.count
            && per_key
            && self.beta >= wanted.beta
    }
}

/// Latency histogram of one operator setting, in 1 ms bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorModel {
    #[serde(flatten)]
    pub key: ModelKey,
    pub bins: Vec<u64>,
}

impl OperatorModel {
    pub fn samples(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn distribution(&self) -> Distribution<f64> {
        Distribution::from_counts(&self.bins).expect("trained models have samples")
    }
}

/// Models of one time interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSet {
    models: BTreeMap<ModelKey, OperatorModel>,
}

impl ModelSet {
    pub fn insert(&mut self, model: OperatorModel) {
        self.models.insert(model.key.clone(), model);
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperatorModel> {
        self.models.values()
    }

    /// The exact setting if trained, else the smallest dominating one
    /// (smallest α first, then smallest β).
    pub fn lookup(
        &self,
        kind: &str,
        alpha: Alpha,
        beta: u64,
    ) -> Result<&OperatorModel, ModelError> {
        let wanted = ModelKey::new(kind, alpha, beta);
        if let Some(m) = self.models.get(&wanted) {
            return Ok(m);
        }
        self.models
            .values()
            .filter(|m| m.key.dominates(&wanted))
            .min_by(|a, b| (a.key.alpha, a.key.beta).cmp(&(b.key.alpha, b.key.beta)))
            .ok_or(ModelError::NoDominatingModel {
                kind: kind.to_string(),
                alpha,
                beta,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    /// `floor(start_ms / interval_ms)`.
    pub index: i64,
    pub models: ModelSet,
}

/// One model set per interval, covering the span of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalModels {
    pub interval_ms: f64,
    pub intervals: Vec<Interval>,
}

/// Groups trace rows into intervals and `(kind, α, β)` keys and builds one
/// histogram per group. Intervals without samples are kept, empty.
pub fn train_models(trace: &[TraceRow], interval_ms: f64) -> Result<IntervalModels, ModelError> {
    if !(interval_ms > 0.0) {
        return Err(ModelError::BadInterval);
    }
    if trace.is_empty() {
        return Err(ModelError::EmptyTrace);
    }
    let index_of = |ts: f64| (ts / interval_ms).floor() as i64;
    let first = trace
        .iter()
        .map(|r| index_of(r.timestamp_ms))
        .min()
        .expect("non-empty");
    let last = trace
        .iter()
        .map(|r| index_of(r.timestamp_ms))
        .max()
        .expect("non-empty");
    let mut groups: BTreeMap<(i64, ModelKey), Vec<u64>> = BTreeMap::new();
    for r in trace {
        let key = ModelKey::new(&r.op_kind, r.alpha, r.beta_bytes);
        let bins = groups.entry((index_of(r.timestamp_ms), key)).or_default();
        let b = bin_of(r.latency_ms, DEFAULT_CEILING_MS);
        if bins.len() <= b {
            bins.resize(b + 1, 0);
        }
        bins[b] += 1;
    }
    let mut intervals: Vec<Interval> = (first..=last)
        .map(|index| Interval {
            index,
            models: ModelSet::default(),
        })
        .collect();
    for ((index, key), bins) in groups {
        intervals[(index - first) as usize]
            .models
            .insert(OperatorModel { key, bins });
    }
    Ok(IntervalModels {
        interval_ms,
        intervals,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    bin_ms: u32,
    interval_ms: f64,
    intervals: Vec<IntervalFile>,
}

#[derive(Serialize, Deserialize)]
struct IntervalFile {
    index: i64,
    models: Vec<OperatorModel>,
}

impl IntervalModels {
    /// Every interval's models merged, for predictions that ignore time.
    pub fn pooled(&self) -> ModelSet {
        let mut merged: BTreeMap<ModelKey, Vec<u64>> = BTreeMap::new();
        for m in self.intervals.iter().flat_map(|i| i.models.iter()) {
            let bins = merged.entry(m.key.clone()).or_default();
            if bins.len() < m.bins.len() {
                bins.resize(m.bins.len(), 0);
            }
            for (b, c) in bins.iter_mut().zip(&m.bins) {
                *b += c;
            }
        }
        let mut set = ModelSet::default();
        for (key, bins) in merged {
            set.insert(OperatorModel { key, bins });
        }
        set
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            bin_ms: 1,
            interval_ms: self.interval_ms,
            intervals: self
                .intervals
                .iter()
                .map(|i| IntervalFile {
                    index: i.index,
                    models: i.models.iter().cloned().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::File(e.to_string()))?;
        if file.version != MODEL_FILE_VERSION || file.bin_ms != 1 {
            return Err(ModelError::File(format!(
                "unsupported version {} / bin width {}",
                file.version, file.bin_ms
            )));
        }
        let mut intervals = Vec::new();
        for i in file.intervals {
            let mut models = ModelSet::default();
            for m in i.models {
                if m.samples() == 0 {
                    return Err(ModelError::File(format!(
                        "model {:?} has no samples",
                        m.key
                    )));
                }
                models.insert(m);
            }
            intervals.push(Interval {
                index: i.index,
                models,
            });
        }
        Ok(IntervalModels {
            interval_ms: file.interval_ms,
            intervals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ts_min: f64, kind: &str, alpha: Alpha, beta: u64, ms: f64) -> TraceRow {
        TraceRow {
            timestamp_ms: ts_min * 60_000.0,
            op_kind: kind.into(),
            alpha,
            beta_bytes: beta,
            latency_ms: ms,
        }
    }

    #[test]
    fn constant_trace_fills_one_bin() {
        let trace: Vec<TraceRow> = (0..50)
            .map(|i| row(i as f64 * 0.1, "IndexScan", Alpha::scan(100), 40, 7.0))
            .collect();
        let m = train_models(&trace, 600_000.0).unwrap();
        assert_eq!(m.intervals.len(), 1);
        let model = m.intervals[0]
            .models
            .lookup("IndexScan", Alpha::scan(100), 40)
            .unwrap();
        assert_eq!(model.distribution(), Distribution::delta(7));
    }

    #[test]
    fn seventy_minutes_make_seven_intervals() {
        let trace: Vec<TraceRow> = (0..70)
            .map(|m| row(m as f64 + 0.5, "IndexScan", Alpha::scan(1), 8, 3.0))
            .collect();
        let m = train_models(&trace, 600_000.0).unwrap();
        assert_eq!(
            m.intervals.iter().map(|i| i.index).collect::<Vec<_>>(),
            (0..7).collect::<Vec<_>>()
        );
        assert!(m.intervals.iter().all(|i| i.models.len() == 1));
    }

    #[test]
    fn lookup_takes_the_smallest_dominating_setting() {
        let trace = vec![
            row(0.0, "IndexScan", Alpha::scan(100), 40, 5.0),
            row(0.0, "IndexScan", Alpha::scan(150), 40, 6.0),
        ];
        let set = &train_models(&trace, 600_000.0).unwrap().intervals[0].models;
        assert_eq!(
            set.lookup("IndexScan", Alpha::scan(150), 40)
                .unwrap()
                .key
                .alpha,
            Alpha::scan(150)
        );
        assert_eq!(
            set.lookup("IndexScan", Alpha::scan(120), 40)
                .unwrap()
                .key
                .alpha,
            Alpha::scan(150)
        );
        assert!(matches!(
            set.lookup("IndexScan", Alpha::scan(200), 40),
            Err(ModelError::NoDominatingModel { .. })
        ));
        assert!(set.lookup("IndexScan", Alpha::scan(100), 41).is_err());
        assert!(set.lookup("IndexFKJoin", Alpha::scan(1), 1).is_err());
    }

    #[test]
    fn join_alpha_dominates_componentwise() {
        let set = {
            let mut s = ModelSet::default();
            s.insert(OperatorModel {
                key: ModelKey::new("SortedIndexJoin", Alpha::join(100, 10), 300),
                bins: vec![0, 1],
            });
            s
        };
        assert!(set
            .lookup("SortedIndexJoin", Alpha::join(50, 10), 200)
            .is_ok());
        assert!(set
            .lookup("SortedIndexJoin", Alpha::join(50, 20), 200)
            .is_err());
    }

    #[test]
    fn model_file_round_trips() {
        let trace = vec![
            row(0.0, "IndexScan", Alpha::scan(3), 9, 2.5),
            row(12.0, "IndexFKJoin", Alpha::scan(3), 9, 4.0),
        ];
        let m = train_models(&trace, 600_000.0).unwrap();
        let text = m.to_json();
        let back = IntervalModels::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
        assert!(IntervalModels::from_json("{}").is_err());
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert_eq!(train_models(&[], 1.0).unwrap_err(), ModelError::EmptyTrace);
    }
}
