//! Held-out evaluation: ranked candidate triplets, PR curve, AUC, P@N and
//! attention-bias diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::PathType;
use crate::model::{EncodedBag, Model};
use crate::textio::write_file;

/// Index of the empty relation in every relation vocabulary.
pub const NA: usize = 0;

/// The P@N grid written to `metrics.txt`.
pub const P_AT_N: [usize; 6] = [100, 200, 300, 500, 1000, 2000];

/// One candidate triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Position of the bag in the evaluated list; the first tie-breaker.
    pub pair: usize,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub score: f64,
    pub gold: bool,
}

/// Score descending, then pair id, then relation id.
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.pair.cmp(&b.pair)).then(a.relation.cmp(&b.relation)));
}

/// One record per bag and non-NA relation, scored by the class probability,
/// sorted. `gold[i]` lists the KG relations of bag `i`'s pair.
pub fn predict_all(model: &Model, bags: &[EncodedBag], gold: &[Vec<usize>]) -> Result<Vec<EvalRecord>> {
    if bags.len() != gold.len() {
        return Err(Error::InvalidArgument(format!("{} bags but {} gold lists", bags.len(), gold.len())));
    }
    let mut records = Vec::with_capacity(bags.len() * model.arch.num_relations.saturating_sub(1));
    for (pair, (bag, g)) in bags.iter().zip(gold).enumerate() {
        let fwd = model.forward::<rand_chacha::ChaCha8Rng>(bag, None)?;
        for relation in (0..model.arch.num_relations).filter(|&r| r != NA) {
            records.push(EvalRecord {
                pair,
                head: bag.head,
                tail: bag.tail,
                relation,
                score: fwd.class_probs[relation],
                gold: g.contains(&relation),
            });
        }
    }
    sort_records(&mut records);
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Sweeps the sorted records: at rank `n`, precision `tp/n` and recall
/// `tp/total_gold`. Records are sorted here, so any order may be passed.
pub fn pr_curve(records: &[EvalRecord]) -> Result<Vec<PrPoint>> {
    let total = records.iter().filter(|r| r.gold).count();
    if total == 0 {
        return Err(Error::InvalidArgument("no gold-positive records".into()));
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut tp = 0usize;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, r)| {
            tp += r.gold as usize;
            PrPoint { recall: tp as f64 / total as f64, precision: tp as f64 / (i + 1) as f64 }
        })
        .collect())
}

/// Trapezoidal area under the curve from recall 0 to the last recall,
/// anchored at `(0, precision of the first point)`.
pub fn auc(curve: &[PrPoint]) -> f64 {
    let Some(first) = curve.first() else { return 0.0 };
    let mut prev = PrPoint { recall: 0.0, precision: first.precision };
    let mut area = 0.0;
    for &p in curve {
        area += (p.recall - prev.recall) * (p.precision + prev.precision) / 2.0;
        prev = p;
    }
    area
}

/// Step-interpolated area: each recall increment weighted by the precision
/// at which it was reached.
pub fn auc_step(curve: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in curve {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

/// Fraction of gold records among the top `n` (records are sorted here).
pub fn precision_at_n(records: &[EvalRecord], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if n > records.len() {
        return Err(Error::InvalidArgument(format!("n = {n} exceeds {} records", records.len())));
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    Ok(sorted[..n].iter().filter(|r| r.gold).count() as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub auc_step: f64,
    pub records: usize,
    pub gold: usize,
    /// `None` where N exceeds the number of records.
    pub precision_at: Vec<(usize, Option<f64>)>,
}

impl Metrics {
    pub fn compute(records: &[EvalRecord]) -> Result<Self> {
        let curve = pr_curve(records)?;
        let precision_at = P_AT_N.iter().map(|&n| (n, precision_at_n(records, n).ok())).collect();
        Ok(Metrics {
            auc: auc(&curve),
            auc_step: auc_step(&curve),
            records: records.len(),
            gold: records.iter().filter(|r| r.gold).count(),
            precision_at,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "auc\t{}", self.auc);
        let _ = writeln!(s, "auc_step\t{}", self.auc_step);
        let _ = writeln!(s, "records\t{}", self.records);
        let _ = writeln!(s, "gold\t{}", self.gold);
        for (n, p) in &self.precision_at {
            match p {
                Some(p) => writeln!(s, "p@{n}\t{p}"),
                None => writeln!(s, "p@{n}\tn/a"),
            }
            .expect("write to string");
        }
        s
    }
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut s = String::from("recall,precision\n");
    for p in curve {
        let _ = writeln!(s, "{},{}", p.recall, p.precision);
    }
    s
}

/// Minimal SVG line plot of the curve on the unit square.
pub fn pr_curve_svg(curve: &[PrPoint]) -> String {
    let (w, h, m) = (480.0, 360.0, 40.0);
    let x = |r: f64| m + r * (w - 2.0 * m);
    let y = |p: f64| h - m - p * (h - 2.0 * m);
    let mut points = String::new();
    for p in curve {
        let _ = write!(points, "{:.2},{:.2} ", x(p.recall), y(p.precision));
    }
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">recall</text>"#, w / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.2})">precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, points.trim_end());
    s.push_str("</svg>\n");
    s
}

/// Global path attention weight of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeight {
    pub bag: usize,
    pub path: usize,
    pub path_type: PathType,
    pub tau1: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasGroup {
    pub label: String,
    pub count: usize,
    /// `None` for an empty length bucket.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub bucket_width: usize,
    pub by_type: Vec<BiasGroup>,
    pub by_length: Vec<BiasGroup>,
    pub raw: Vec<PathWeight>,
}

fn mean(ws: &[f64]) -> Option<f64> {
    if ws.is_empty() {
        None
    } else {
        Some(ws.iter().sum::<f64>() / ws.len() as f64)
    }
}

impl BiasReport {
    /// Groups raw weights by path type (types that occur) and by
    /// `tau1 / bucket_width`, covering every bucket from the shortest to the
    /// longest observed path.
    pub fn from_weights(raw: Vec<PathWeight>, bucket_width: usize) -> Result<Self> {
        if bucket_width == 0 {
            return Err(Error::InvalidArgument("bucket width must be at least 1".into()));
        }
        let mut types: BTreeMap<PathType, Vec<f64>> = BTreeMap::new();
        let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for w in &raw {
            types.entry(w.path_type).or_default().push(w.weight);
            buckets.entry(w.tau1 / bucket_width).or_default().push(w.weight);
        }
        let by_type = types
            .iter()
            .map(|(t, ws)| BiasGroup { label: t.to_string(), count: ws.len(), mean: mean(ws) })
            .collect();
        let mut by_length = Vec::new();
        if let (Some(&lo), Some(&hi)) = (buckets.keys().next(), buckets.keys().last()) {
            for b in lo..=hi {
                let ws = buckets.get(&b).map(Vec::as_slice).unwrap_or(&[]);
                let label = format!("{}-{}", b * bucket_width, (b + 1) * bucket_width - 1);
                by_length.push(BiasGroup { label, count: ws.len(), mean: mean(ws) });
            }
        }
        Ok(BiasReport { bucket_width, by_type, by_length, raw })
    }

    /// `grouping,group,count,mean_weight` rows, type groups first.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("grouping,group,count,mean_weight\n");
        for (grouping, rows) in [("type", &self.by_type), ("length", &self.by_length)] {
            for g in rows {
                let m = g.mean.map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{grouping},{},{},{m}", g.label, g.count);
            }
        }
        s
    }

    pub fn raw_csv(&self) -> String {
        let mut s = String::from("bag,path,type,tau1,weight\n");
        for w in &self.raw {
            let _ = writeln!(s, "{},{},{},{},{}", w.bag, w.path, w.path_type, w.tau1, w.weight);
        }
        s
    }
}

/// Global path attention weights of every path in every bag that has
/// paths, grouped by type and by length.
pub fn attention_bias_report(model: &Model, bags: &[EncodedBag], bucket_width: usize) -> Result<BiasReport> {
    let mut raw = Vec::new();
    for (b, bag) in bags.iter().enumerate() {
        if bag.paths.is_empty() {
            continue;
        }
        let fwd = model.forward::<rand_chacha::ChaCha8Rng>(bag, None)?;
        for (i, (p, &w)) in bag.paths.iter().zip(fwd.path_weights()).enumerate() {
            raw.push(PathWeight { bag: b, path: i, path_type: p.path_type, tau1: p.tau1, weight: w });
        }
    }
    BiasReport::from_weights(raw, bucket_width)
}

/// Writes `pr_curve.csv`, `pr_curve.svg` and `metrics.txt`.
pub fn write_metrics(out: &Path, records: &[EvalRecord]) -> Result<Metrics> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let curve = pr_curve(records)?;
    let metrics = Metrics::compute(records)?;
    write_file(&out.join("pr_curve.csv"), &pr_curve_csv(&curve))?;
    write_file(&out.join("pr_curve.svg"), &pr_curve_svg(&curve))?;
    write_file(&out.join("metrics.txt"), &metrics.to_text())?;
    Ok(metrics)
}

/// Writes `attention_bias.csv` (grouped) and `attention_weights.csv` (raw).
pub fn write_bias_report(out: &Path, report: &BiasReport) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("attention_bias.csv"), &report.to_csv())?;
    write_file(&out.join("attention_weights.csv"), &report.raw_csv())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(gold: &[bool]) -> Vec<EvalRecord> {
        let n = gold.len();
        gold.iter()
            .enumerate()
            .map(|(i, &g)| EvalRecord { pair: i, head: 0, tail: 1, relation: 1, score: (n - i) as f64 / n as f64, gold: g })
            .collect()
    }

    #[test]
    fn hand_sweep() {
        let c = pr_curve(&recs(&[true, false, true])).unwrap();
        let pts: Vec<(f64, f64)> = c.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        // 0.5·1 + 0 + 0.5·(0.5 + 2/3)/2
        assert!((auc(&c) - (0.5 + 0.25 * (0.5 + 2.0 / 3.0))).abs() < 1e-15);
        assert!((auc(&c) - 0.791_666_666_666_7).abs() < 1e-12);
        assert!((auc_step(&c) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_reversed_ranking() {
        let perfect = pr_curve(&recs(&[true, true, false, false])).unwrap();
        assert_eq!(auc(&perfect), 1.0);
        assert!(perfect.iter().take_while(|p| p.recall < 1.0).all(|p| p.precision == 1.0));
        let reversed = pr_curve(&recs(&[false, false, true, true])).unwrap();
        assert!(auc(&reversed) < auc(&perfect));
        assert_eq!(perfect.last().unwrap().recall, 1.0);
    }

    #[test]
    fn no_gold_is_error() {
        assert!(pr_curve(&recs(&[false, false])).is_err());
    }

    #[test]
    fn precision_at_n_counts() {
        let r = recs(&[true, false, true, true, false, false]);
        assert_eq!(precision_at_n(&r, 5).unwrap(), 0.6);
        assert_eq!(precision_at_n(&recs(&[true; 5]), 5).unwrap(), 1.0);
        assert!(precision_at_n(&r, 0).is_err());
        assert!(precision_at_n(&r, 7).is_err());
    }

    #[test]
    fn ties_use_pair_then_relation() {
        let mut r = vec![
            EvalRecord { pair: 1, head: 0, tail: 0, relation: 1, score: 0.5, gold: false },
            EvalRecord { pair: 0, head: 0, tail: 0, relation: 2, score: 0.5, gold: false },
            EvalRecord { pair: 0, head: 0, tail: 0, relation: 1, score: 0.5, gold: true },
        ];
        sort_records(&mut r);
        let keys: Vec<(usize, usize)> = r.iter().map(|x| (x.pair, x.relation)).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (1, 1)]);
    }

    #[test]
    fn bias_groups() {
        let w = |path_type, tau1, weight| PathWeight { bag: 0, path: 0, path_type, tau1, weight };
        let rep = BiasReport::from_weights(
            vec![w(PathType::Kg, 3, 0.7), w(PathType::Hybrid, 25, 0.1), w(PathType::Kg, 8, 0.2)],
            10,
        )
        .unwrap();
        assert_eq!(rep.by_type.len(), 2);
        assert_eq!(rep.by_type[0].label, "KG");
        assert!((rep.by_type[0].mean.unwrap() - 0.45).abs() < 1e-15);
        let labels: Vec<&str> = rep.by_length.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, ["0-9", "10-19", "20-29"]);
        assert_eq!(rep.by_length[1].mean, None);
        assert!(rep.to_csv().contains("length,10-19,0,\n"));
    }

    proptest! {
        #[test]
        fn auc_depends_only_on_ranking(gold in proptest::collection::vec(any::<bool>(), 1..40), shift in -5.0f64..5.0) {
            prop_assume!(gold.iter().any(|&g| g));
            let r = recs(&gold);
            let moved: Vec<EvalRecord> = r.iter().cloned().map(|mut x| { x.score = (x.score * 3.0).exp() + shift; x }).collect();
            prop_assert_eq!(auc(&pr_curve(&r).unwrap()), auc(&pr_curve(&moved).unwrap()));
        }

        #[test]
        fn prepending_gold_never_lowers_precision(gold in proptest::collection::vec(any::<bool>(), 1..40), n in 1usize..40) {
            let r = recs(&gold);
            prop_assume!(n <= r.len());
            let mut with = vec![EvalRecord { pair: 0, head: 0, tail: 0, relation: 0, score: 2.0, gold: true }];
            with.extend(r.iter().cloned().map(|mut x| { x.pair += 1; x }));
            prop_assert!(precision_at_n(&with, n).unwrap() >= precision_at_n(&r, n).unwrap());
        }
    }
}
