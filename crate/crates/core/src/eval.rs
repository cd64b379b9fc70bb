//! Accuracy and feasibility metrics for any predictor, plus report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{InterceptorOrigin, InterceptorSpec, IsrSettings, ScaleModel};
use crate::predictors::{Prediction, Predictor};
use crate::tokenizer::Example;
use crate::track::Point;

fn check_lengths(truth: &[Point], pred: &[Point]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

/// Average displacement error in pixels.
pub fn ade(truth: &[Point], pred: &[Point]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(t, p)| t.distance(*p)).sum();
    Ok(sum / truth.len() as f64)
}

/// Final displacement error in pixels.
pub fn fde(truth: &[Point], pred: &[Point]) -> Result<f64> {
    check_lengths(truth, pred)?;
    Ok(truth[truth.len() - 1].distance(pred[pred.len() - 1]))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Fraction of examples where `prob > threshold` agrees with the label.
pub fn accuracy(is_drone: &[bool], drone_prob: &[f64], threshold: f64) -> Result<f64> {
    if is_drone.len() != drone_prob.len() {
        return Err(Error::LengthMismatch {
            left: is_drone.len(),
            right: drone_prob.len(),
        });
    }
    if is_drone.is_empty() {
        return Err(Error::EmptySet);
    }
    let correct = is_drone
        .iter()
        .zip(drone_prob)
        .filter(|(&y, &p)| (p > threshold) == y)
        .count();
    Ok(correct as f64 / is_drone.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub ade: f64,
    pub fde: f64,
    pub isr: f64,
    pub acc: f64,
    pub n_examples: usize,
}

/// What a report was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Fingerprint {
    pub interceptor: InterceptorSpec,
    pub scale: ScaleModel,
    pub origin: InterceptorOrigin,
    pub all_steps: bool,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of the full configuration, when one was used.
    pub config_hash: Option<String>,
}

impl Fingerprint {
    pub fn from_settings(isr: &IsrSettings) -> Self {
        Self {
            interceptor: isr.interceptor,
            scale: isr.scale,
            origin: isr.origin,
            all_steps: isr.all_steps,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub fingerprint: Fingerprint,
}

pub fn evaluate(predictor: &dyn Predictor, examples: &[Example], isr: &IsrSettings) -> Result<ReportRow> {
    let refs: Vec<&Example> = examples.iter().collect();
    evaluate_refs(predictor, &refs, isr)
}

struct Scored {
    ade: f64,
    fde: f64,
    feasible: bool,
    drone_prob: f64,
}

fn score(example: &Example, prediction: &Prediction, isr: &IsrSettings) -> Result<Scored> {
    Ok(Scored {
        ade: ade(&example.future, &prediction.positions)?,
        fde: fde(&example.future, &prediction.positions)?,
        feasible: isr.trajectory_feasible(example.anchor, &prediction.positions),
        drone_prob: prediction.drone_prob,
    })
}

pub(crate) fn evaluate_refs(
    predictor: &dyn Predictor,
    examples: &[&Example],
    isr: &IsrSettings,
) -> Result<ReportRow> {
    if examples.is_empty() {
        return Err(Error::EmptySet);
    }
    let scored: Vec<Result<Scored>> = examples
        .par_iter()
        .map(|ex| score(ex, &predictor.predict(ex)?, isr))
        .collect();
    // sequential fold keeps the sums bit-reproducible
    let (mut ade_sum, mut fde_sum, mut hits) = (0.0, 0.0, 0usize);
    let mut probs = Vec::with_capacity(examples.len());
    for s in scored {
        let s = s?;
        ade_sum += s.ade;
        fde_sum += s.fde;
        hits += usize::from(s.feasible);
        probs.push(s.drone_prob);
    }
    let labels: Vec<bool> = examples.iter().map(|e| e.is_drone()).collect();
    let n = examples.len() as f64;
    Ok(ReportRow {
        method: predictor.name().to_string(),
        ade: ade_sum / n,
        fde: fde_sum / n,
        isr: hits as f64 / n,
        acc: accuracy(&labels, &probs, DEFAULT_THRESHOLD)?,
        n_examples: examples.len(),
    })
}

pub fn evaluate_all(
    predictors: &[&dyn Predictor],
    examples: &[Example],
    isr: &IsrSettings,
    fingerprint: Fingerprint,
) -> Result<EvalReport> {
    let rows = predictors
        .iter()
        .map(|p| evaluate(*p, examples, isr))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows, fingerprint })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Markdown => "md",
            Self::Csv => "csv",
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("method,ade,fde,isr,acc,n\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{:.2},{:.2},{:.3},{:.3},{}",
                    r.method, r.ade, r.fde, r.isr, r.acc, r.n_examples
                );
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Method | ADE | FDE | ISR | Acc | N |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "| {} | {:.2} | {:.2} | {:.3} | {:.3} | {} |",
                    r.method, r.ade, r.fde, r.isr, r.acc, r.n_examples
                );
            }
        }
    }
    out
}

/// Machine-readable report, pretty-printed JSON.
pub fn summary_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::FrameBased;
    use crate::tokenizer::MotionToken;
    use crate::track::{BehaviorClass, LabelSet};
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn ade_fde_values() {
        let truth = [p(0.0, 0.0), p(1.0, 1.0)];
        assert_eq!(ade(&truth, &truth).unwrap(), 0.0);
        assert_eq!(fde(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<_> = truth.iter().map(|q| *q + p(3.0, 4.0)).collect();
        assert_eq!(ade(&truth, &shifted).unwrap(), 5.0);
        let pred = [p(3.0, 0.0), p(1.0, 5.0)];
        assert_eq!(ade(&truth, &pred).unwrap(), 3.5);
        assert_eq!(fde(&[p(0.0, 0.0)], &[p(3.0, 4.0)]).unwrap(), 5.0);
        assert!(matches!(ade(&truth, &pred[..1]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(&[true, false], &[0.9, 0.1], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[true, true, true], &[0.0; 3], 0.5).unwrap(), 0.0);
        assert_eq!(accuracy(&[true, false], &[0.9, 0.9], 0.5).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[], 0.5), Err(Error::EmptySet)));
    }

    fn moving_example(speed: f64, h: usize) -> Example {
        let history: Vec<Point> = (0..12).map(|i| p(speed * i as f64, 0.0)).collect();
        let anchor = history[11];
        Example {
            tokens: vec![MotionToken::default(); 12],
            future: (1..=h).map(|t| anchor + p(speed * t as f64, 0.0)).collect(),
            history,
            labels: Some(LabelSet {
                is_drone: true,
                behavior: BehaviorClass::PassBy,
                intent: 0.0,
            }),
            anchor,
            source_id: "m".into(),
            t_index: 11,
        }
    }

    #[test]
    fn frame_based_on_a_moving_target() {
        let ex = vec![moving_example(2.0, 20)];
        let row = evaluate(&FrameBased, &ex, &IsrSettings::default()).unwrap();
        // mean of 2, 4, ..., 40
        assert!((row.ade - 21.0).abs() < 1e-12);
        assert_eq!(row.fde, 40.0);
        assert_eq!(row.isr, 1.0);
        assert_eq!(row.acc, 0.0);
    }

    struct Oracle;
    impl Predictor for Oracle {
        fn name(&self) -> &str {
            "oracle"
        }
        fn predict(&self, example: &Example) -> Result<Prediction> {
            let mut pred = Prediction::trajectory_only(example.future.clone());
            pred.drone_prob = 1.0;
            Ok(pred)
        }
    }

    #[test]
    fn oracle_predictor_is_perfect() {
        let ex: Vec<_> = (1..5).map(|s| moving_example(s as f64, 20)).collect();
        let report = evaluate_all(
            &[&Oracle, &FrameBased],
            &ex,
            &IsrSettings::default(),
            Fingerprint::default(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].ade, 0.0);
        assert_eq!(report.rows[0].fde, 0.0);
        assert_eq!(report.rows[0].acc, 1.0);
        assert!(matches!(
            evaluate(&Oracle, &[], &IsrSettings::default()),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn rendering() {
        let report = EvalReport {
            rows: vec![
                ReportRow {
                    method: "frame".into(),
                    ade: 261.0712,
                    fde: 261.73,
                    isr: 1.0,
                    acc: 0.0,
                    n_examples: 8,
                },
                ReportRow {
                    method: "naive".into(),
                    ade: 122.8349,
                    fde: 53.2401,
                    isr: 0.0012,
                    acc: 0.0,
                    n_examples: 8,
                },
            ],
            fingerprint: Fingerprint::default(),
        };
        let csv = render_report(&report, ReportFormat::Csv);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "method,ade,fde,isr,acc,n");
        assert_eq!(lines[1], "frame,261.07,261.73,1.000,0.000,8");
        assert_eq!(lines[2], "naive,122.83,53.24,0.001,0.000,8");
        let md = render_report(&report, ReportFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with("| frame") || l.starts_with("| naive")).count(), 2);
        let empty = EvalReport {
            rows: vec![],
            fingerprint: Fingerprint::default(),
        };
        assert_eq!(render_report(&empty, ReportFormat::Csv), "method,ade,fde,isr,acc,n\n");
        assert_eq!(render_report(&empty, ReportFormat::Markdown).lines().count(), 2);
        assert!(matches!("xml".parse::<ReportFormat>(), Err(Error::UnknownFormat(_))));
        let parsed: EvalReport = serde_json::from_str(&summary_json(&report)).unwrap();
        assert_eq!(parsed, report);
    }

    proptest! {
        #[test]
        fn single_step_ade_equals_fde(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let truth = [p(0.0, 0.0)];
            let pred = [p(x, y)];
            prop_assert_eq!(ade(&truth, &pred).unwrap(), fde(&truth, &pred).unwrap());
            prop_assert!(ade(&truth, &pred).unwrap() >= 0.0);
        }

        #[test]
        fn metrics_ignore_example_order(speeds in proptest::collection::vec(0.0f64..6.0, 1..10)) {
            let ex: Vec<_> = speeds.iter().map(|&s| moving_example(s, 5)).collect();
            let mut rev = ex.clone();
            rev.reverse();
            let a = evaluate(&FrameBased, &ex, &IsrSettings::default()).unwrap();
            let b = evaluate(&FrameBased, &rev, &IsrSettings::default()).unwrap();
            prop_assert!((a.ade - b.ade).abs() < 1e-9);
            prop_assert!((a.fde - b.fde).abs() < 1e-9);
            prop_assert_eq!(a.isr, b.isr);
            prop_assert_eq!(a.acc, b.acc);
        }
    }
}
