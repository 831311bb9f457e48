//! Pixel-wise IoU and the five class-subset averages.
//!
//! Intersections and unions are kept as integer tallies so that corpus
//! results can be merged in any order and exact rational means are available.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabelVocabulary;
use crate::raster::Grid;

/// Class subsets averaged in a report, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WoBackground,
    All,
    StructureOnly,
    BackgroundOnly,
    WoStructure,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::WoBackground,
        Variant::All,
        Variant::StructureOnly,
        Variant::BackgroundOnly,
        Variant::WoStructure,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Variant::WoBackground => "w/o background",
            Variant::All => "all",
            Variant::StructureOnly => "structure only",
            Variant::BackgroundOnly => "background only",
            Variant::WoStructure => "w/o structure",
        }
    }

    fn includes(self, label: u8, background: u8, structure: u8) -> bool {
        match self {
            Variant::WoBackground => label != background,
            Variant::All => true,
            Variant::StructureOnly => label == structure,
            Variant::BackgroundOnly => label == background,
            Variant::WoStructure => label != structure,
        }
    }
}

/// How corpus results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum intersections and unions over the corpus, then divide.
    #[default]
    Micro,
    /// Score every pair, then average the defined values.
    Macro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub intersection: u64,
    pub union: u64,
}

impl ClassCounts {
    pub fn iou(self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }

    pub fn exact(self) -> Option<BigRational> {
        (self.union > 0)
            .then(|| BigRational::new(BigInt::from(self.intersection), BigInt::from(self.union)))
    }
}

fn check_dims(pred: &Grid, truth: &Grid) -> Result<()> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Argument(format!(
            "grid size mismatch: prediction {}x{}, truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

/// IoU of one label; `None` when neither grid contains it.
pub fn class_iou(pred: &Grid, truth: &Grid, label: u8) -> Result<Option<f64>> {
    check_dims(pred, truth)?;
    let mut counts = ClassCounts::default();
    for (&p, &t) in pred.cells().iter().zip(truth.cells()) {
        let (a, b) = (p == label, t == label);
        counts.intersection += u64::from(a && b);
        counts.union += u64::from(a || b);
    }
    Ok(counts.iou())
}

/// Per-class intersection/union tallies; merging is associative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IouTally {
    pub classes: BTreeMap<u8, ClassCounts>,
}

impl IouTally {
    pub fn from_pair(pred: &Grid, truth: &Grid, vocab: &LabelVocabulary) -> Result<Self> {
        check_dims(pred, truth)?;
        let palette = vocab.palette();
        let mut classes: BTreeMap<u8, ClassCounts> = palette
            .keys()
            .map(|&l| (l, ClassCounts::default()))
            .collect();
        for (&p, &t) in pred.cells().iter().zip(truth.cells()) {
            for label in [p, t] {
                if !palette.contains_key(&label) {
                    return Err(Error::Validation(format!(
                        "label {label} is not in the vocabulary"
                    )));
                }
            }
            if p == t {
                let c = classes.get_mut(&p).expect("checked");
                c.intersection += 1;
                c.union += 1;
            } else {
                classes.get_mut(&p).expect("checked").union += 1;
                classes.get_mut(&t).expect("checked").union += 1;
            }
        }
        Ok(Self { classes })
    }

    pub fn merge(mut self, other: &IouTally) -> Self {
        for (&label, c) in &other.classes {
            let e = self.classes.entry(label).or_default();
            e.intersection += c.intersection;
            e.union += c.union;
        }
        self
    }

    /// Exact mean IoU over the defined classes of a variant.
    pub fn exact_variant(&self, variant: Variant, vocab: &LabelVocabulary) -> Option<BigRational> {
        let (bg, st) = (vocab.background_label(), vocab.structure_label());
        let values: Vec<BigRational> = self
            .classes
            .iter()
            .filter(|(&l, _)| variant.includes(l, bg, st))
            .filter_map(|(_, c)| c.exact())
            .collect();
        if values.is_empty() {
            return None;
        }
        let n = BigRational::from_integer(BigInt::from(values.len()));
        let sum = values
            .into_iter()
            .fold(BigRational::zero(), |acc, v| acc + v);
        Some(sum / n)
    }

    pub fn report(&self, vocab: &LabelVocabulary) -> IoUReport {
        let palette = vocab.palette();
        let per_class = self
            .classes
            .iter()
            .map(|(l, c)| (palette[l].clone(), c.iou()))
            .collect();
        let variants = Variant::ALL
            .iter()
            .map(|&v| {
                let value = self.exact_variant(v, vocab).and_then(|r| r.to_f64());
                (v, value)
            })
            .collect();
        IoUReport {
            per_class,
            variants,
        }
    }
}

/// Per-class IoU plus the five averages; `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class: BTreeMap<String, Option<f64>>,
    pub variants: BTreeMap<Variant, Option<f64>>,
}

impl IoUReport {
    pub fn variant(&self, v: Variant) -> Option<f64> {
        self.variants.get(&v).copied().flatten()
    }

    /// Aligned text table, one row per named report.
    pub fn table(rows: &[(&str, &IoUReport)]) -> String {
        let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
        let mut out = format!("{:name_width$}", "");
        for v in Variant::ALL {
            let _ = write!(out, "  {:>15}", v.title());
        }
        out.push('\n');
        for (name, report) in rows {
            let _ = write!(out, "{name:name_width$}");
            for v in Variant::ALL {
                match report.variant(v) {
                    Some(x) => {
                        let _ = write!(out, "  {x:>15.3}");
                    }
                    None => {
                        let _ = write!(out, "  {:>15}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Scores a single prediction against its ground truth.
pub fn evaluate(pred: &Grid, truth: &Grid, vocab: &LabelVocabulary) -> Result<IoUReport> {
    Ok(IouTally::from_pair(pred, truth, vocab)?.report(vocab))
}

/// Scores a corpus of (prediction, truth) pairs.
pub fn evaluate_corpus(
    pairs: &[(Grid, Grid)],
    vocab: &LabelVocabulary,
    aggregation: Aggregation,
) -> Result<IoUReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("evaluation corpus is empty".into()));
    }
    let tallies = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, t))| {
            IouTally::from_pair(p, t, vocab).map_err(|e| match e {
                Error::Argument(msg) => Error::Argument(format!("pair {i}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    match aggregation {
        Aggregation::Micro => Ok(tallies
            .iter()
            .fold(IouTally::default(), |acc, t| acc.merge(t))
            .report(vocab)),
        Aggregation::Macro => {
            let reports: Vec<IoUReport> = tallies.iter().map(|t| t.report(vocab)).collect();
            let mean = |values: Vec<f64>| {
                (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
            };
            let per_class = reports[0]
                .per_class
                .keys()
                .map(|k| {
                    let vals = reports.iter().filter_map(|r| r.per_class[k]).collect();
                    (k.clone(), mean(vals))
                })
                .collect();
            let variants = Variant::ALL
                .iter()
                .map(|&v| {
                    (
                        v,
                        mean(reports.iter().filter_map(|r| r.variant(v)).collect()),
                    )
                })
                .collect();
            Ok(IoUReport {
                per_class,
                variants,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary {
            zoning_types: vec!["Z".into()],
            room_types: vec!["A".into(), "B".into()],
            grid_labels: BTreeMap::from([
                ("background".into(), 0),
                ("structure".into(), 1),
                ("A".into(), 2),
                ("B".into(), 3),
            ]),
        }
    }

    fn grid(cells: &[u8]) -> Grid {
        Grid::from_cells(cells.len(), 1, cells.to_vec(), vocab().palette()).unwrap()
    }

    #[test]
    fn class_iou_examples() {
        let a = grid(&[2, 2, 0, 0]);
        assert_eq!(class_iou(&a, &a, 2).unwrap(), Some(1.0));
        assert_eq!(class_iou(&a, &grid(&[0, 0, 2, 2]), 2).unwrap(), Some(0.0));
        let half = grid(&[2, 2, 0, 0]);
        let three = grid(&[2, 2, 2, 0]);
        assert_eq!(class_iou(&half, &three, 2).unwrap(), Some(2.0 / 3.0));
        assert_eq!(class_iou(&half, &three, 3).unwrap(), None);
        assert!(class_iou(&half, &grid(&[0, 0]), 2).is_err());
    }

    #[test]
    fn absent_classes_are_excluded() {
        let r = evaluate(&grid(&[0, 2]), &grid(&[0, 2]), &vocab()).unwrap();
        for v in [
            Variant::All,
            Variant::WoBackground,
            Variant::BackgroundOnly,
            Variant::WoStructure,
        ] {
            assert_eq!(r.variant(v), Some(1.0));
        }
        assert_eq!(r.variant(Variant::StructureOnly), None);
        assert_eq!(r.per_class["B"], None);
    }

    #[test]
    fn corpus_rules() {
        let v = vocab();
        let p = grid(&[0, 2, 1, 2]);
        let t = grid(&[0, 0, 1, 2]);
        let single = evaluate(&p, &t, &v).unwrap();
        let one = evaluate_corpus(&[(p.clone(), t.clone())], &v, Aggregation::Micro).unwrap();
        assert_eq!(one, single);
        let two =
            evaluate_corpus(&[(p.clone(), t.clone()), (p, t)], &v, Aggregation::Micro).unwrap();
        assert_eq!(two, single);
        assert!(evaluate_corpus(&[], &v, Aggregation::Micro).is_err());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let mut palette = vocab().palette();
        palette.insert(9, "mystery".into());
        let odd = Grid::from_cells(1, 1, vec![9], palette).unwrap();
        assert!(evaluate(&odd, &grid(&[0]), &vocab()).is_err());
    }

    #[test]
    fn table_has_all_columns() {
        let r = evaluate(&grid(&[0, 2]), &grid(&[0, 2]), &vocab()).unwrap();
        let text = IoUReport::table(&[("model", &r)]);
        for v in Variant::ALL {
            assert!(text.contains(v.title()));
        }
        assert!(text.lines().nth(1).unwrap().starts_with("model"));
    }
}
