//! Accuracy metrics, challenge breakdowns, histograms and multi-run
//! aggregation.

use crate::datagen::{collapse_to_binary, decode_shortcut, CorpusBundle, Example, HeuristicKind, Subcase};
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::netmodel::{ModelParams, NUM_CLASSES};

pub const DEFAULT_BINS: usize = 40;
/// Quantile of per-example loss used to cap the loss histogram range.
pub const LOSS_DISPLAY_QUANTILE: f64 = 0.999;

/// Anything that maps an example to a class distribution.
pub trait Classifier {
    fn class_probs(&self, example: &Example) -> Result<[f64; NUM_CLASSES]>;

    fn predict(&self, example: &Example) -> Result<usize> {
        Ok(losses::argmax(&self.class_probs(example)?))
    }
}

impl Classifier for ModelParams {
    fn class_probs(&self, example: &Example) -> Result<[f64; NUM_CLASSES]> {
        let p = self.probs_for(example)?;
        Ok([p[0], p[1], p[2]])
    }
}

/// Follows the shortcut block blindly: all mass on the class it claims,
/// uniform when nothing fires.
#[derive(Debug, Clone, Copy, Default)]
pub struct PureHeuristic;

impl Classifier for PureHeuristic {
    fn class_probs(&self, example: &Example) -> Result<[f64; NUM_CLASSES]> {
        Ok(match decode_shortcut(&example.shortcut) {
            Some((_, class)) => {
                let mut p = [0.0; NUM_CLASSES];
                p[class] = 1.0;
                p
            }
            None => [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        })
    }
}

/// Adapts a closure into a [`Classifier`].
pub struct FnClassifier<F>(pub F);

impl<F: Fn(&Example) -> Result<[f64; NUM_CLASSES]>> Classifier for FnClassifier<F> {
    fn class_probs(&self, example: &Example) -> Result<[f64; NUM_CLASSES]> {
        (self.0)(example)
    }
}

pub fn accuracy(model: &dyn Classifier, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let mut correct = 0usize;
    for ex in examples {
        if model.predict(ex)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Accuracy on examples labeled hard. `Err(Empty)` when there are none.
pub fn hard_subset_accuracy(model: &dyn Classifier, test: &[Example]) -> Result<f64> {
    let hard: Vec<Example> = test.iter().filter(|e| e.hard == Some(true)).cloned().collect();
    if hard.is_empty() {
        return Err(Error::Empty("hard subset"));
    }
    accuracy(model, &hard)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChallengeBreakdown {
    /// `[kind][subcase]` accuracy; NaN for an empty cell.
    pub cells: [[f64; 2]; 3],
    pub counts: [[usize; 2]; 3],
    pub overall: f64,
}

impl ChallengeBreakdown {
    pub fn cell(&self, kind: HeuristicKind, subcase: Subcase) -> f64 {
        self.cells[kind.index()][subcase.index()]
    }
}

/// Binary scoring: a prediction is right iff its collapsed subcase matches
/// the example's subcase.
pub fn challenge_breakdown(model: &dyn Classifier, challenge: &[Example]) -> Result<ChallengeBreakdown> {
    if challenge.is_empty() {
        return Err(Error::Empty("challenge split"));
    }
    let mut correct = [[0usize; 2]; 3];
    let mut counts = [[0usize; 2]; 3];
    for (index, ex) in challenge.iter().enumerate() {
        let tag = ex.heuristic.ok_or(Error::Untagged { index })?;
        let (k, s) = (tag.kind.index(), tag.subcase.index());
        counts[k][s] += 1;
        if collapse_to_binary(model.predict(ex)?)? == tag.subcase {
            correct[k][s] += 1;
        }
    }
    let mut cells = [[f64::NAN; 2]; 3];
    for k in 0..3 {
        for s in 0..2 {
            if counts[k][s] > 0 {
                cells[k][s] = correct[k][s] as f64 / counts[k][s] as f64;
            }
        }
    }
    let total_correct: usize = correct.iter().flatten().sum();
    Ok(ChallengeBreakdown {
        cells,
        counts,
        overall: total_correct as f64 / challenge.len() as f64,
    })
}

/// Correct/incorrect crossed with easy/hard, in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    CorrectEasy,
    CorrectHard,
    IncorrectEasy,
    IncorrectHard,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::CorrectEasy,
        Partition::CorrectHard,
        Partition::IncorrectEasy,
        Partition::IncorrectHard,
    ];

    pub fn of(correct: bool, hard: bool) -> Self {
        match (correct, hard) {
            (true, false) => Partition::CorrectEasy,
            (true, true) => Partition::CorrectHard,
            (false, false) => Partition::IncorrectEasy,
            (false, true) => Partition::IncorrectHard,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Partition::CorrectEasy => "correct_easy",
            Partition::CorrectHard => "correct_hard",
            Partition::IncorrectEasy => "incorrect_easy",
            Partition::IncorrectHard => "incorrect_hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    /// `counts[partition][bin]`
    pub counts: [Vec<u64>; 4],
    /// Named vertical reference lines.
    pub markers: Vec<(String, f64)>,
}

impl Histogram {
    fn new(lower: f64, upper: f64, n_bins: usize) -> Self {
        Histogram {
            lower,
            upper,
            counts: std::array::from_fn(|_| vec![0; n_bins]),
            markers: Vec::new(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts[0].len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.n_bins() as f64
    }

    /// Values past either end land in the first or last bin.
    pub fn bin_of(&self, value: f64) -> usize {
        let raw = ((value - self.lower) / self.bin_width()).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.n_bins() - 1)
        }
    }

    fn add(&mut self, partition: Partition, value: f64) {
        let b = self.bin_of(value);
        self.counts[partition.index()][b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn partition_total(&self, partition: Partition) -> u64 {
        self.counts[partition.index()].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper");
        for p in Partition::ALL {
            out.push(',');
            out.push_str(p.name());
        }
        out.push('\n');
        let w = self.bin_width();
        for b in 0..self.n_bins() {
            let hi = if b + 1 == self.n_bins() {
                self.upper
            } else {
                self.lower + w * (b + 1) as f64
            };
            out.push_str(&format!("{b},{:?},{hi:?}", self.lower + w * b as f64));
            for p in Partition::ALL {
                out.push_str(&format!(",{}", self.counts[p.index()][b]));
            }
            out.push('\n');
        }
        for (name, value) in &self.markers {
            out.push_str(&format!("# marker,{name},{value:?}\n"));
        }
        out
    }

    /// Inverse of [`Histogram::to_csv`].
    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let expected = Histogram::new(0.0, 1.0, 1).to_csv();
        match lines.next() {
            Some((_, h)) if Some(h) == expected.lines().next() => {}
            _ => return Err("line 1: unexpected header".into()),
        }
        let mut counts: [Vec<u64>; 4] = Default::default();
        let mut markers = Vec::new();
        let (mut lower, mut upper) = (None, 0.0);
        for (i, line) in lines {
            let bad = |what: &str| format!("line {}: {what}", i + 1);
            let fields: Vec<&str> = line.split(',').collect();
            if let Some(name) = fields[0].strip_prefix("# marker") {
                if fields.len() != 3 || !name.is_empty() {
                    return Err(bad("malformed marker"));
                }
                markers.push((
                    fields[1].to_string(),
                    fields[2].parse().map_err(|_| bad("marker value"))?,
                ));
                continue;
            }
            if fields.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let lo: f64 = fields[1].parse().map_err(|_| bad("lower"))?;
            lower.get_or_insert(lo);
            upper = fields[2].parse().map_err(|_| bad("upper"))?;
            for (k, c) in counts.iter_mut().enumerate() {
                c.push(fields[3 + k].parse().map_err(|_| bad("count"))?);
            }
        }
        let lower = lower.ok_or("no bins")?;
        Ok(Histogram {
            lower,
            upper,
            counts,
            markers,
        })
    }
}

struct Scored {
    p_label: f64,
    partition: Partition,
}

fn score(model: &dyn Classifier, examples: &[Example]) -> Result<Vec<Scored>> {
    examples
        .iter()
        .map(|ex| {
            let p = model.class_probs(ex)?;
            Ok(Scored {
                p_label: p[ex.label],
                partition: Partition::of(losses::argmax(&p) == ex.label, ex.hard == Some(true)),
            })
        })
        .collect()
}

/// Ground-truth-class probability over `[0, 1]`, with markers at chance
/// (1/3) and at 0.5.
pub fn prob_histogram(model: &dyn Classifier, examples: &[Example], n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::invalid("n_bins", "must be >= 2"));
    }
    let mut h = Histogram::new(0.0, 1.0, n_bins);
    h.markers = vec![("p=1/3".into(), 1.0 / 3.0), ("p=0.5".into(), 0.5)];
    for s in score(model, examples)? {
        h.add(s.partition, s.p_label);
    }
    Ok(h)
}

/// Per-example loss as a function of the ground-truth-class probability.
/// Bias-coupled losses are shown through the main model's own focal term.
/// With `normalize` the loss is plain cross-entropy.
pub fn loss_histogram(
    model: &dyn Classifier,
    examples: &[Example],
    loss: &LossSpec,
    n_bins: usize,
    normalize: bool,
) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::invalid("n_bins", "must be >= 2"));
    }
    loss.validate()?;
    let gamma = if normalize { 0.0 } else { loss.effective_gamma() };
    let f = |p: f64| losses::focal_from_prob(p, gamma, loss.clamp_eps);
    let scored = score(model, examples)?;
    let values: Vec<f64> = scored.iter().map(|s| f(s.p_label)).collect();
    let markers = vec![("p=1/3".to_string(), f(1.0 / 3.0)), ("p=0.5".to_string(), f(0.5))];

    let ceiling = f(loss.clamp_eps);
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let q = if sorted.is_empty() {
        0.0
    } else {
        let idx = ((sorted.len() - 1) as f64 * LOSS_DISPLAY_QUANTILE).ceil() as usize;
        sorted[idx]
    };
    let marker_max = markers.iter().map(|m| m.1).fold(0.0, f64::max);
    let mut upper = ceiling.min(q.max(marker_max) * 1.05);
    if upper <= 0.0 || !upper.is_finite() {
        upper = 1.0;
    }

    let mut h = Histogram::new(0.0, upper, n_bins);
    h.markers = markers;
    for (s, v) in scored.iter().zip(values) {
        h.add(s.partition, v);
    }
    Ok(h)
}

/// Mean of |p_label - 0.5| over a split.
pub fn mean_abs_p_minus_half(model: &dyn Classifier, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let mut deviations = score(model, examples)?
        .iter()
        .map(|s| (s.p_label - 0.5).abs())
        .collect::<Vec<_>>();
    Ok(ordered_sum(&mut deviations) / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub test_accuracy: f64,
    /// `None` when the test split has no hard examples.
    pub hard_accuracy: Option<f64>,
    pub challenge: ChallengeBreakdown,
    pub test_mean_abs_p_minus_half: f64,
    pub prob_histogram: Histogram,
    pub loss_histogram: Histogram,
}

impl EvalReport {
    pub fn challenge_overall(&self) -> f64 {
        self.challenge.overall
    }

    /// Scalar metrics in a fixed order.
    pub fn metrics(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("test_accuracy".to_string(), Some(self.test_accuracy)),
            ("hard_accuracy".to_string(), self.hard_accuracy),
            ("challenge_accuracy".to_string(), Some(self.challenge.overall)),
            (
                "test_mean_abs_p_minus_half".to_string(),
                Some(self.test_mean_abs_p_minus_half),
            ),
        ];
        for kind in HeuristicKind::ALL {
            for sub in Subcase::ALL {
                let v = self.challenge.cell(kind, sub);
                out.push((
                    format!("challenge_{}_{}", kind.name(), sub.name()),
                    (!v.is_nan()).then_some(v),
                ));
            }
        }
        out
    }
}

/// Full evaluation on the test and challenge splits of `bundle`.
pub fn evaluate(params: &ModelParams, bundle: &CorpusBundle, loss: &LossSpec, n_bins: usize) -> Result<EvalReport> {
    let hard_accuracy = match hard_subset_accuracy(params, &bundle.test) {
        Ok(v) => Some(v),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        test_accuracy: accuracy(params, &bundle.test)?,
        hard_accuracy,
        challenge: challenge_breakdown(params, &bundle.challenge)?,
        test_mean_abs_p_minus_half: mean_abs_p_minus_half(params, &bundle.test)?,
        prob_histogram: prob_histogram(params, &bundle.test, n_bins)?,
        loss_histogram: loss_histogram(params, &bundle.test, loss, n_bins, false)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; `None` below two runs.
    pub std: Option<f64>,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub metrics: Vec<MetricSummary>,
}

impl AggregateReport {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

// Summing in sorted order keeps the result independent of run order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Mean and n-1 standard deviation of one metric. Empty input is rejected.
pub fn summarize(metric: &str, values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::Empty("metric values"));
    }
    let n = values.len();
    let mut v = values.to_vec();
    // sum/n can drift by an ulp for identical values
    let mean = if v.iter().all(|x| x.to_bits() == v[0].to_bits()) {
        v[0]
    } else {
        ordered_sum(&mut v) / n as f64
    };
    let std = (n >= 2).then(|| {
        let mut sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
        (ordered_sum(&mut sq) / (n - 1) as f64).sqrt()
    });
    Ok(MetricSummary {
        metric: metric.to_string(),
        mean,
        std,
        n_runs: n,
    })
}

/// Per-metric mean and sample standard deviation over at least two runs.
/// A metric missing from some runs is summarized over the runs that have it.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::invalid(
            "reports",
            format!("need at least 2 runs, got {}", reports.len()),
        ));
    }
    let names: Vec<String> = reports[0].metrics().into_iter().map(|(n, _)| n).collect();
    let per_run: Vec<Vec<(String, Option<f64>)>> = reports.iter().map(EvalReport::metrics).collect();
    let mut metrics = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let values: Vec<f64> = per_run.iter().filter_map(|m| m[i].1).collect();
        if !values.is_empty() {
            metrics.push(summarize(name, &values)?);
        }
    }
    Ok(AggregateReport { metrics })
}
