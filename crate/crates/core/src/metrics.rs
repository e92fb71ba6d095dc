//! Multi-label evaluation metrics and cross-method rank aggregation.

use std::fmt::Write as _;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::classifier::binarize;
use crate::error::{Error, Result};

/// Which way a metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lower,
    Higher,
}

impl Direction {
    pub fn arrow(self) -> &'static str {
        match self {
            Direction::Lower => "↓",
            Direction::Higher => "↑",
        }
    }
}

/// Short names and directions of the four reported metrics, in report order.
pub const METRICS: [(&str, Direction); 4] = [
    ("HL", Direction::Lower),
    ("RL", Direction::Lower),
    ("mAP", Direction::Higher),
    ("Ma-F1", Direction::Higher),
];

/// Tag stored in every report naming how mAP was averaged.
pub const MAP_READING: &str = "label-wise";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelBreakdown {
    /// `None` for labels without a positive bag.
    pub average_precision: Vec<Option<f64>>,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hamming_loss: f64,
    pub ranking_loss: f64,
    pub macro_avg_precision: f64,
    pub macro_f1: f64,
    pub map_reading: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_label_breakdown: Option<PerLabelBreakdown>,
}

impl MetricsReport {
    /// Metric values in [`METRICS`] order.
    pub fn values(&self) -> [f64; 4] {
        [self.hamming_loss, self.ranking_loss, self.macro_avg_precision, self.macro_f1]
    }

    /// Scores drive RL and mAP; `scores > threshold` drives HL and Ma-F1.
    pub fn from_scores(scores: ArrayView2<f64>, truth: ArrayView2<u8>, threshold: f64) -> Result<Self> {
        let pred = binarize(scores, threshold)?;
        let per_label_ap = per_label_average_precision(scores, truth)?;
        let f1 = per_label_f1(pred.view(), truth)?;
        Ok(MetricsReport {
            hamming_loss: hamming_loss(pred.view(), truth)?,
            ranking_loss: ranking_loss(scores, truth)?,
            macro_avg_precision: macro_of(&per_label_ap)?,
            macro_f1: f1.iter().sum::<f64>() / f1.len() as f64,
            map_reading: MAP_READING.to_string(),
            per_label_breakdown: Some(PerLabelBreakdown {
                average_precision: per_label_ap,
                f1,
            }),
        })
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("prediction {a:?} vs truth {b:?}")));
    }
    if a.0 == 0 || a.1 == 0 {
        return Err(Error::Degenerate("empty prediction matrix".into()));
    }
    Ok(())
}

pub fn hamming_loss(pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(pred.dim(), truth.dim())?;
    let wrong = pred.iter().zip(truth.iter()).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean over bags with both kinds of label of the fraction of
/// (relevant, irrelevant) pairs ordered wrongly; ties count as wrong.
pub fn ranking_loss(scores: ArrayView2<f64>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(scores.dim(), truth.dim())?;
    let mut total = 0.0;
    let mut eligible = 0usize;
    for (s, l) in scores.outer_iter().zip(truth.outer_iter()) {
        let pos: Vec<f64> = s.iter().zip(l.iter()).filter(|(_, &y)| y == 1).map(|(&v, _)| v).collect();
        let neg: Vec<f64> = s.iter().zip(l.iter()).filter(|(_, &y)| y != 1).map(|(&v, _)| v).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let bad = pos.iter().map(|&p| neg.iter().filter(|&&n| p <= n).count()).sum::<usize>();
        total += bad as f64 / (pos.len() * neg.len()) as f64;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::Degenerate("no bag has both relevant and irrelevant labels".into()));
    }
    Ok(total / eligible as f64)
}

fn average_precision(scores: ArrayView1<f64>, truth: ArrayView1<u8>) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Average precision of each label's bag ranking.
pub fn per_label_average_precision(scores: ArrayView2<f64>, truth: ArrayView2<u8>) -> Result<Vec<Option<f64>>> {
    check_shapes(scores.dim(), truth.dim())?;
    Ok(scores
        .columns()
        .into_iter()
        .zip(truth.columns())
        .map(|(s, l)| average_precision(s, l))
        .collect())
}

fn macro_of(per_label: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = per_label.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Degenerate("no label has a positive bag".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Label-wise average precision over bag rankings, averaged over labels that
/// have at least one positive bag.
pub fn macro_average_precision(scores: ArrayView2<f64>, truth: ArrayView2<u8>) -> Result<f64> {
    macro_of(&per_label_average_precision(scores, truth)?)
}

pub fn per_label_f1(pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<Vec<f64>> {
    check_shapes(pred.dim(), truth.dim())?;
    Ok(pred
        .columns()
        .into_iter()
        .zip(truth.columns())
        .map(|(p, t)| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&a, &b) in p.iter().zip(t.iter()) {
                match (a == 1, b == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect())
}

pub fn macro_f1(pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<f64> {
    let f1 = per_label_f1(pred, truth)?;
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

/// Ranks within one column: 1 is best, ties share the smallest rank, and
/// missing cells get the number of methods.
pub fn column_ranks(column: &[Option<f64>], direction: Direction) -> Vec<usize> {
    let worst = column.len();
    column
        .iter()
        .map(|cell| match cell {
            None => worst,
            Some(v) => {
                1 + column
                    .iter()
                    .flatten()
                    .filter(|&&o| match direction {
                        Direction::Lower => o < *v,
                        Direction::Higher => o > *v,
                    })
                    .count()
            }
        })
        .collect()
}

/// Mean rank per method over all columns of `table[method][column]`.
pub fn average_rank(table: &[Vec<Option<f64>>], directions: &[Direction]) -> Result<Vec<f64>> {
    if table.is_empty() || directions.is_empty() {
        return Err(Error::Degenerate("empty comparison grid".into()));
    }
    if table.iter().any(|row| row.len() != directions.len()) {
        return Err(Error::shape("every method needs one cell per column"));
    }
    let mut sums = vec![0.0; table.len()];
    for (c, &dir) in directions.iter().enumerate() {
        let column: Vec<Option<f64>> = table.iter().map(|row| row[c]).collect();
        for (s, r) in sums.iter_mut().zip(column_ranks(&column, dir)) {
            *s += r as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / directions.len() as f64).collect())
}

/// One row of a comparison table, e.g. a metric on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub direction: Direction,
    /// One cell per method.
    pub values: Vec<Option<f64>>,
}

/// Methods as columns, metrics as rows, with an average-rank footer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// One row per metric from per-method reports on a single dataset.
    pub fn from_reports(dataset: &str, methods: &[(String, MetricsReport)]) -> Self {
        let rows = METRICS
            .iter()
            .enumerate()
            .map(|(k, &(name, direction))| ComparisonRow {
                label: if dataset.is_empty() {
                    name.to_string()
                } else {
                    format!("{dataset} {name}")
                },
                direction,
                values: methods.iter().map(|(_, r)| Some(r.values()[k])).collect(),
            })
            .collect();
        ComparisonTable {
            methods: methods.iter().map(|(m, _)| m.clone()).collect(),
            rows,
        }
    }

    pub fn average_ranks(&self) -> Result<Vec<f64>> {
        let table: Vec<Vec<Option<f64>>> = (0..self.methods.len())
            .map(|m| self.rows.iter().map(|r| r.values[m]).collect())
            .collect();
        let dirs: Vec<Direction> = self.rows.iter().map(|r| r.direction).collect();
        average_rank(&table, &dirs)
    }

    /// Aligned text rendering: `0.1234(1)` cells, `N/A(k)` for missing ones.
    pub fn render(&self) -> Result<String> {
        let avg = self.average_ranks()?;
        let mut lines: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Metric".to_string()];
        header.extend(self.methods.iter().cloned());
        lines.push(header);
        for row in &self.rows {
            let ranks = column_ranks(&row.values, row.direction);
            let mut cells = vec![format!("{} {}", row.label, row.direction.arrow())];
            for (v, r) in row.values.iter().zip(ranks) {
                cells.push(match v {
                    Some(v) => format!("{v:.4}({r})"),
                    None => format!("N/A({r})"),
                });
            }
            lines.push(cells);
        }
        let mut footer = vec!["Avg. Rank".to_string()];
        footer.extend(avg.iter().map(|a| format!("{a:.2}")));
        lines.push(footer);

        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let mut text = String::new();
            for (c, cell) in line.iter().enumerate() {
                if c > 0 {
                    text.push_str("  ");
                }
                let pad = widths[c] - cell.chars().count();
                if c == 0 {
                    text.push_str(cell);
                    text.push_str(&" ".repeat(pad));
                } else {
                    text.push_str(&" ".repeat(pad));
                    text.push_str(cell);
                }
            }
            let _ = writeln!(out, "{}", text.trim_end());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn hamming_examples() {
        let t = array![[1u8, 1, 0]];
        assert_eq!(hamming_loss(t.view(), t.view()).unwrap(), 0.0);
        assert_abs_diff_eq!(hamming_loss(array![[1u8, 0, 1]].view(), t.view()).unwrap(), 2.0 / 3.0);
        assert_eq!(hamming_loss(t.mapv(|v| 1 - v).view(), t.view()).unwrap(), 1.0);
        assert!(matches!(hamming_loss(array![[1u8]].view(), t.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(ranking_loss(array![[0.9, 0.2, 0.7]].view(), array![[1u8, 0, 0]].view()).unwrap(), 0.0);
        assert_eq!(ranking_loss(array![[0.3, 0.8]].view(), array![[1u8, 0]].view()).unwrap(), 1.0);
        assert_eq!(ranking_loss(array![[0.5, 0.5]].view(), array![[1u8, 0]].view()).unwrap(), 1.0);
        assert!(matches!(
            ranking_loss(array![[0.5, 0.5]].view(), array![[1u8, 1]].view()),
            Err(Error::Degenerate(_))
        ));
        // all-positive bag skipped
        let v = ranking_loss(array![[0.3, 0.8], [0.1, 0.2]].view(), array![[1u8, 0], [1, 1]].view()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn average_precision_examples() {
        let truth = array![[1u8], [0], [1]];
        let v = macro_average_precision(array![[0.9], [0.8], [0.7]].view(), truth.view()).unwrap();
        assert_abs_diff_eq!(v, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-15);
        let perfect = macro_average_precision(array![[0.9, 0.1], [0.2, 0.8]].view(), array![[1u8, 0], [0, 1]].view());
        assert_eq!(perfect.unwrap(), 1.0);
        // second label has no positive and is excluded
        let v = macro_average_precision(array![[0.9, 0.1], [0.2, 0.8]].view(), array![[1u8, 0], [0, 0]].view());
        assert_eq!(v.unwrap(), 1.0);
        assert!(matches!(
            macro_average_precision(array![[0.9]].view(), array![[0u8]].view()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ties_rank_by_index() {
        let v = macro_average_precision(array![[0.5], [0.5]].view(), array![[0u8], [1]].view()).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn f1_examples() {
        let t = array![[1u8, 0], [0, 1]];
        assert_eq!(macro_f1(t.view(), t.view()).unwrap(), 1.0);
        let v = macro_f1(array![[1u8], [1], [0]].view(), array![[1u8], [0], [0]].view()).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-15);
        let v = macro_f1(array![[1u8, 0]].view(), array![[1u8, 0]].view()).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(average_rank(&[vec![Some(0.3)]], &[Direction::Lower]).unwrap(), vec![1.0]);
        let r = average_rank(&[vec![Some(0.1)], vec![Some(0.2)]], &[Direction::Lower]).unwrap();
        assert_eq!(r, vec![1.0, 2.0]);
        let r = average_rank(&[vec![Some(0.1)], vec![Some(0.2)]], &[Direction::Higher]).unwrap();
        assert_eq!(r, vec![2.0, 1.0]);
        assert_eq!(column_ranks(&[Some(0.2), Some(0.1), Some(0.2)], Direction::Lower), vec![2, 1, 2]);
        assert_eq!(column_ranks(&[Some(0.2), None, Some(0.1)], Direction::Lower), vec![2, 3, 1]);
        assert!(average_rank(&[], &[Direction::Lower]).is_err());
    }

    #[test]
    fn lower_is_better_column_ranks() {
        let values = [0.1650, 0.2480, 0.2252, 0.3408, 0.1736, 0.3275, 0.1867];
        let column: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
        assert_eq!(column_ranks(&column, Direction::Lower), vec![1, 5, 4, 7, 2, 6, 3]);
    }

    #[test]
    fn rendered_table_layout() {
        let t = ComparisonTable {
            methods: vec!["A".into(), "B".into()],
            rows: vec![
                ComparisonRow {
                    label: "HL".into(),
                    direction: Direction::Lower,
                    values: vec![Some(0.1), None],
                },
                ComparisonRow {
                    label: "mAP".into(),
                    direction: Direction::Higher,
                    values: vec![Some(0.5), Some(0.7)],
                },
            ],
        };
        let text = t.render().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("HL ↓"));
        assert!(lines[1].contains("0.1000(1)") && lines[1].contains("N/A(2)"));
        assert!(lines[2].contains("0.5000(2)") && lines[2].contains("0.7000(1)"));
        assert!(lines[3].starts_with("Avg. Rank") && lines[3].contains("1.50"));
    }

    #[test]
    fn report_from_half_scores() {
        let truth = array![[1u8, 0, 1], [0, 1, 0]];
        let r = MetricsReport::from_scores(Array2::from_elem((2, 3), 0.5).view(), truth.view(), 0.5).unwrap();
        assert_abs_diff_eq!(r.hamming_loss, 0.5);
        assert_eq!(r.ranking_loss, 1.0);
        assert_eq!(r.macro_f1, 0.0);
        assert_eq!(r.map_reading, "label-wise");
    }

    fn grid() -> impl Strategy<Value = (Array2<f64>, Array2<u8>)> {
        (
            proptest::collection::vec(0u8..5, 24),
            proptest::collection::vec(0u8..2, 24),
        )
            .prop_map(|(s, t)| {
                (
                    Array2::from_shape_vec((4, 6), s.into_iter().map(|v| v as f64 / 4.0).collect()).unwrap(),
                    Array2::from_shape_vec((4, 6), t).unwrap(),
                )
            })
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval((s, t) in grid()) {
            let pred = binarize(s.view(), 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&hamming_loss(pred.view(), t.view()).unwrap()));
            prop_assert!((0.0..=1.0).contains(&macro_f1(pred.view(), t.view()).unwrap()));
            if let Ok(v) = ranking_loss(s.view(), t.view()) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Ok(v) = macro_average_precision(s.view(), t.view()) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn monotone_transforms((s, t) in grid(), a in 0.1f64..5.0) {
            let moved = s.mapv(|v| (a * v).exp() - 3.0);
            if let Ok(v) = ranking_loss(s.view(), t.view()) {
                prop_assert_eq!(v, ranking_loss(moved.view(), t.view()).unwrap());
            }
            if let Ok(v) = macro_average_precision(s.view(), t.view()) {
                prop_assert_eq!(v, macro_average_precision(moved.view(), t.view()).unwrap());
            }
        }
    }
}
