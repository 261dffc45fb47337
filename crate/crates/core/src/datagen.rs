//! Synthetic underspecified corpus with planted shortcut features.
//!
//! Every example has a *genuine* block (class mean plus isotropic Gaussian
//! noise: the real, noisy signal) and a *shortcut* block made of three
//! heuristic indicator sub-blocks. In the in-distribution splits the
//! indicator almost always encodes the true label. In the challenge split
//! every indicator claims entailment, so a model that follows it scores 100%
//! on entailed cells and 0% on non-entailed ones.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{ModelParams, NUM_CLASSES};
use crate::rng::{self, Stream};
use crate::trainer::{self, ModelConfig, TrainSpec};

pub const GENERATOR_VERSION: &str = "synthetic-nli/1";

pub const ENTAILMENT: usize = 0;
pub const NEUTRAL: usize = 1;
pub const CONTRADICTION: usize = 2;

pub fn label_name(label: usize) -> &'static str {
    match label {
        ENTAILMENT => "entailment",
        NEUTRAL => "neutral",
        CONTRADICTION => "contradiction",
        _ => "invalid",
    }
}

fn parse_label(s: &str) -> Option<usize> {
    match s {
        "entailment" => Some(ENTAILMENT),
        "neutral" => Some(NEUTRAL),
        "contradiction" => Some(CONTRADICTION),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeuristicKind {
    LexicalOverlap,
    Subsequence,
    Constituent,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [
        HeuristicKind::LexicalOverlap,
        HeuristicKind::Subsequence,
        HeuristicKind::Constituent,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::LexicalOverlap => "lexical_overlap",
            HeuristicKind::Subsequence => "subsequence",
            HeuristicKind::Constituent => "constituent",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subcase {
    Entailed,
    NonEntailed,
}

impl Subcase {
    pub const ALL: [Subcase; 2] = [Subcase::Entailed, Subcase::NonEntailed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subcase::Entailed => "entailed",
            Subcase::NonEntailed => "non_entailed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeuristicTag {
    pub kind: HeuristicKind,
    pub subcase: Subcase,
}

impl fmt::Display for HeuristicTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind.name(), self.subcase.name())
    }
}

/// Three-way prediction collapsed onto the binary challenge labels.
pub fn collapse_to_binary(predicted_class: usize) -> Result<Subcase> {
    match predicted_class {
        ENTAILMENT => Ok(Subcase::Entailed),
        NEUTRAL | CONTRADICTION => Ok(Subcase::NonEntailed),
        other => Err(Error::LabelOutOfRange {
            label: other,
            classes: NUM_CLASSES,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Unique across a bundle; the high 32 bits name the split of origin.
    pub id: u64,
    pub genuine: Vec<f64>,
    pub shortcut: Vec<f64>,
    pub label: usize,
    pub heuristic: Option<HeuristicTag>,
    pub hard: Option<bool>,
}

/// Which shortcut sub-block fires and which class it claims, if any.
pub fn decode_shortcut(shortcut: &[f64]) -> Option<(HeuristicKind, usize)> {
    let width = shortcut.len() / HeuristicKind::ALL.len();
    for kind in HeuristicKind::ALL {
        let block = &shortcut[kind.index() * width..(kind.index() + 1) * width];
        if let Some(pos) = block.iter().position(|&x| x != 0.0) {
            return Some((kind, pos));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u64)]
pub enum SplitId {
    Train = 0,
    ValMatched = 1,
    ValMismatched = 2,
    Test = 3,
    Challenge = 4,
    ChallengePool = 5,
}

impl SplitId {
    pub const ALL: [SplitId; 6] = [
        SplitId::Train,
        SplitId::ValMatched,
        SplitId::ValMismatched,
        SplitId::Test,
        SplitId::Challenge,
        SplitId::ChallengePool,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            SplitId::Train => "train",
            SplitId::ValMatched => "val_matched",
            SplitId::ValMismatched => "val_mismatched",
            SplitId::Test => "test",
            SplitId::Challenge => "challenge",
            SplitId::ChallengePool => "challenge_pool",
        }
    }

    fn id(self, i: usize) -> u64 {
        ((self as u64) << 32) | i as u64
    }
}

pub fn split_of(id: u64) -> u64 {
    id >> 32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub genuine_dim: usize,
    /// Three equal indicator sub-blocks, each at least 3 wide.
    pub shortcut_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_challenge_per_cell: usize,
    /// Size of each cell of the held-out pool used for challenge injection.
    pub n_pool_per_cell: usize,
    /// Fraction of in-distribution examples whose shortcut encodes the label.
    pub bias_rate: f64,
    /// Fraction whose shortcut encodes a wrong label.
    pub counterexample_rate: f64,
    pub noise_sigma: f64,
    /// Euclidean distance between any two planted class means.
    pub class_separation: f64,
    /// Norm of the offset added to every class mean in `val_mismatched`.
    pub mismatch_shift: f64,
    /// Norm of the offset, orthogonal to the class means, shared by the
    /// challenge split and the injection pool.
    pub challenge_shift: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            genuine_dim: 16,
            shortcut_dim: 9,
            n_train: 50_000,
            n_val: 5_000,
            n_test: 10_000,
            n_challenge_per_cell: 500,
            n_pool_per_cell: 500,
            bias_rate: 0.98,
            counterexample_rate: 250.0 / 433_000.0,
            noise_sigma: 1.0,
            class_separation: 3.1,
            mismatch_shift: 0.5,
            challenge_shift: 8.0,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |what, reason: String| Err(Error::invalid(what, reason));
        if self.genuine_dim <= NUM_CLASSES {
            return fail("genuine_dim", format!("{} <= {NUM_CLASSES}", self.genuine_dim));
        }
        if !self.shortcut_dim.is_multiple_of(3) || self.shortcut_dim < 9 {
            return fail(
                "shortcut_dim",
                format!("{} is not a multiple of 3 that is >= 9", self.shortcut_dim),
            );
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
            ("n_challenge_per_cell", self.n_challenge_per_cell),
        ] {
            if n == 0 {
                return fail(name, "must be >= 1".into());
            }
        }
        if !(self.bias_rate > 0.0 && self.bias_rate <= 1.0) {
            return fail("bias_rate", format!("{} outside (0, 1]", self.bias_rate));
        }
        if !(self.counterexample_rate >= 0.0 && self.counterexample_rate <= 1.0 - self.bias_rate + 1e-12) {
            return fail(
                "counterexample_rate",
                format!(
                    "{} exceeds the mass left by bias_rate {}",
                    self.counterexample_rate, self.bias_rate
                ),
            );
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("class_separation", self.class_separation),
            ("mismatch_shift", self.mismatch_shift),
            ("challenge_shift", self.challenge_shift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(name, format!("{v} must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn block_width(&self) -> usize {
        self.shortcut_dim / 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    pub gen_spec: GenSpec,
    pub version: String,
    pub train: Vec<Example>,
    pub val_matched: Vec<Example>,
    pub val_mismatched: Vec<Example>,
    pub test: Vec<Example>,
    pub challenge: Vec<Example>,
    /// Challenge-distributed examples reserved for training-set injection.
    pub challenge_pool: Vec<Example>,
}

impl CorpusBundle {
    pub fn split(&self, id: SplitId) -> &[Example] {
        match id {
            SplitId::Train => &self.train,
            SplitId::ValMatched => &self.val_matched,
            SplitId::ValMismatched => &self.val_mismatched,
            SplitId::Test => &self.test,
            SplitId::Challenge => &self.challenge,
            SplitId::ChallengePool => &self.challenge_pool,
        }
    }

    fn split_mut(&mut self, id: SplitId) -> &mut Vec<Example> {
        match id {
            SplitId::Train => &mut self.train,
            SplitId::ValMatched => &mut self.val_matched,
            SplitId::ValMismatched => &mut self.val_mismatched,
            SplitId::Test => &mut self.test,
            SplitId::Challenge => &mut self.challenge,
            SplitId::ChallengePool => &mut self.challenge_pool,
        }
    }

    pub fn genuine_dim(&self) -> usize {
        self.gen_spec.genuine_dim
    }

    pub fn shortcut_dim(&self) -> usize {
        self.gen_spec.shortcut_dim
    }

    /// Writes one CSV per split plus `manifest.toml`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for id in SplitId::ALL {
            let path = dir.join(format!("{}.csv", id.file_stem()));
            write_split(&path, self.split(id), self.genuine_dim(), self.shortcut_dim())?;
        }
        let manifest = CorpusManifest {
            corpus: ManifestHeader {
                version: self.version.clone(),
                seed: self.gen_spec.seed,
                counts: SplitId::ALL.iter().map(|&id| self.split(id).len()).collect(),
            },
            gen: self.gen_spec.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let mut bundle = CorpusBundle {
            gen_spec: manifest.gen,
            version: manifest.corpus.version,
            train: Vec::new(),
            val_matched: Vec::new(),
            val_mismatched: Vec::new(),
            test: Vec::new(),
            challenge: Vec::new(),
            challenge_pool: Vec::new(),
        };
        for id in SplitId::ALL {
            let path = dir.join(format!("{}.csv", id.file_stem()));
            *bundle.split_mut(id) = read_split(&path, bundle.genuine_dim(), bundle.shortcut_dim())?;
        }
        Ok(bundle)
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    corpus: ManifestHeader,
    gen: GenSpec,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    version: String,
    seed: u64,
    /// Row counts in `SplitId::ALL` order.
    counts: Vec<usize>,
}

struct Planter<'a> {
    spec: &'a GenSpec,
    means: Vec<Vec<f64>>,
    shift: Vec<f64>,
    challenge_offset: Vec<f64>,
}

impl<'a> Planter<'a> {
    fn new(spec: &'a GenSpec) -> Self {
        let mut rng = rng::stream(spec.seed, Stream::Means);
        let d = spec.genuine_dim;
        let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
        // Orthonormal directions scaled so every pair of means is
        // `class_separation` apart.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(NUM_CLASSES + 1);
        while basis.len() < NUM_CLASSES + 1 {
            let mut v = gauss(&mut rng);
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let challenge_offset = basis
            .pop()
            .unwrap()
            .into_iter()
            .map(|x| x * spec.challenge_shift)
            .collect();
        let radius = spec.class_separation / std::f64::consts::SQRT_2;
        let means = basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * radius).collect())
            .collect();
        let dir = gauss(&mut rng);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let shift = dir.into_iter().map(|x| x / norm * spec.mismatch_shift).collect();
        Planter {
            spec,
            means,
            shift,
            challenge_offset,
        }
    }

    fn genuine(&self, rng: &mut ChaCha8Rng, label: usize, offset: Option<&[f64]>) -> Vec<f64> {
        let sigma = self.spec.noise_sigma;
        self.means[label]
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let noise: f64 = StandardNormal.sample(rng);
                m + offset.map_or(0.0, |o| o[j]) + sigma * noise
            })
            .collect()
    }

    fn shortcut(&self, kind: HeuristicKind, claimed: Option<usize>) -> Vec<f64> {
        let mut s = vec![0.0; self.spec.shortcut_dim];
        if let Some(class) = claimed {
            s[kind.index() * self.spec.block_width() + class] = 1.0;
        }
        s
    }

    /// In-distribution split with exactly planted shortcut agreement counts.
    fn in_distribution(&self, rng: &mut ChaCha8Rng, split: SplitId, n: usize, shifted: bool) -> Vec<Example> {
        let n_misleading = (self.spec.counterexample_rate * n as f64).round() as usize;
        let n_agree = ((self.spec.bias_rate * n as f64).round() as usize).min(n - n_misleading);
        let mut roles: Vec<u8> = std::iter::repeat_n(0u8, n_agree)
            .chain(std::iter::repeat_n(1u8, n_misleading))
            .chain(std::iter::repeat_n(2u8, n - n_agree - n_misleading))
            .collect();
        roles.shuffle(rng);
        roles
            .into_iter()
            .enumerate()
            .map(|(i, role)| {
                let label = rng.random_range(0..NUM_CLASSES);
                let kind = HeuristicKind::ALL[rng.random_range(0..3)];
                let claimed = match role {
                    0 => Some(label),
                    1 => Some((label + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES),
                    _ => None,
                };
                Example {
                    id: split.id(i),
                    genuine: self.genuine(rng, label, shifted.then_some(self.shift.as_slice())),
                    shortcut: self.shortcut(kind, claimed),
                    label,
                    heuristic: None,
                    hard: None,
                }
            })
            .collect()
    }

    /// Six equal cells; every shortcut claims entailment.
    fn challenge(&self, rng: &mut ChaCha8Rng, split: SplitId, per_cell: usize) -> Vec<Example> {
        let mut out = Vec::with_capacity(6 * per_cell);
        for kind in HeuristicKind::ALL {
            for subcase in Subcase::ALL {
                for i in 0..per_cell {
                    let label = match subcase {
                        Subcase::Entailed => ENTAILMENT,
                        Subcase::NonEntailed if i % 2 == 0 => NEUTRAL,
                        Subcase::NonEntailed => CONTRADICTION,
                    };
                    out.push(Example {
                        id: split.id(out.len()),
                        genuine: self.genuine(rng, label, Some(&self.challenge_offset)),
                        shortcut: self.shortcut(kind, Some(ENTAILMENT)),
                        label,
                        heuristic: Some(HeuristicTag { kind, subcase }),
                        hard: None,
                    });
                }
            }
        }
        out
    }
}

pub fn generate_corpus(spec: &GenSpec) -> Result<CorpusBundle> {
    spec.validate()?;
    let planter = Planter::new(spec);
    let stream = |s| rng::stream(spec.seed, s);
    Ok(CorpusBundle {
        gen_spec: spec.clone(),
        version: GENERATOR_VERSION.to_string(),
        train: planter.in_distribution(&mut stream(Stream::Train), SplitId::Train, spec.n_train, false),
        val_matched: planter.in_distribution(&mut stream(Stream::ValMatched), SplitId::ValMatched, spec.n_val, false),
        val_mismatched: planter.in_distribution(
            &mut stream(Stream::ValMismatched),
            SplitId::ValMismatched,
            spec.n_val,
            true,
        ),
        test: planter.in_distribution(&mut stream(Stream::Test), SplitId::Test, spec.n_test, false),
        challenge: planter.challenge(
            &mut stream(Stream::Challenge),
            SplitId::Challenge,
            spec.n_challenge_per_cell,
        ),
        challenge_pool: planter.challenge(&mut stream(Stream::Pool), SplitId::ChallengePool, spec.n_pool_per_cell),
    })
}

/// Moves `n` random pool examples, tags stripped, into the training split.
pub fn inject_challenge_samples(bundle: &CorpusBundle, n: usize, seed: u64) -> Result<CorpusBundle> {
    if n > bundle.challenge_pool.len() {
        return Err(Error::PoolExhausted {
            requested: n,
            available: bundle.challenge_pool.len(),
        });
    }
    let mut out = bundle.clone();
    if n == 0 {
        return Ok(out);
    }
    let mut rng = rng::stream(seed, Stream::Inject);
    let mut order: Vec<usize> = (0..out.challenge_pool.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..n].to_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        let mut ex = out.challenge_pool[i].clone();
        ex.heuristic = None;
        out.train.push(ex);
    }
    for &i in chosen.iter().rev() {
        out.challenge_pool.remove(i);
    }
    Ok(out)
}

/// Marks each test example hard iff a shortcut-only model trained with
/// cross-entropy misclassifies it.
pub fn label_hardness(bundle: &CorpusBundle, seed: u64) -> Result<CorpusBundle> {
    let spec = TrainSpec {
        seed,
        ..TrainSpec::default()
    };
    Ok(label_hardness_with(bundle, &ModelConfig::default(), &spec)?.0)
}

/// As [`label_hardness`], also returning the shallow model that defines hardness.
pub fn label_hardness_with(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
) -> Result<(CorpusBundle, ModelParams)> {
    let shallow = trainer::train_bias_model_with(bundle, model_cfg, spec)?;
    let mut out = bundle.clone();
    for ex in &mut out.test {
        let predicted = crate::losses::argmax(&shallow.logits_for(ex)?);
        ex.hard = Some(predicted != ex.label);
    }
    Ok((out, shallow))
}

fn fmt_opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

pub fn write_split(path: &Path, examples: &[Example], genuine_dim: usize, shortcut_dim: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("id,label,heuristic_kind,subcase,hard");
    for i in 0..genuine_dim {
        header.push_str(&format!(",g{i}"));
    }
    for i in 0..shortcut_dim {
        header.push_str(&format!(",s{i}"));
    }
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    let mut line = String::new();
    for ex in examples {
        line.clear();
        line.push_str(&format!(
            "{},{},{},{},{}",
            ex.id,
            label_name(ex.label),
            fmt_opt(ex.heuristic, |t| t.kind.name().to_string()),
            fmt_opt(ex.heuristic, |t| t.subcase.name().to_string()),
            fmt_opt(ex.hard, |h| (h as u8).to_string()),
        ));
        for x in ex.genuine.iter().chain(&ex.shortcut) {
            // Debug formatting is the shortest exactly round-tripping form.
            line.push_str(&format!(",{x:?}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_split(path: &Path, genuine_dim: usize, shortcut_dim: usize) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let width = 5 + genuine_dim + shortcut_dim;
    if header.split(',').count() != width {
        return Err(parse_err(1, format!("expected {width} columns in header")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != width {
            return Err(parse_err(
                lineno,
                format!("expected {width} columns, found {}", cols.len()),
            ));
        }
        let id = cols[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad id {:?}", cols[0])))?;
        let label = parse_label(cols[1]).ok_or_else(|| parse_err(lineno, format!("bad label {:?}", cols[1])))?;
        let heuristic = match (cols[2], cols[3]) {
            ("", "") => None,
            (k, s) => Some(HeuristicTag {
                kind: HeuristicKind::parse(k).ok_or_else(|| parse_err(lineno, format!("bad heuristic kind {k:?}")))?,
                subcase: Subcase::parse(s).ok_or_else(|| parse_err(lineno, format!("bad subcase {s:?}")))?,
            }),
        };
        let hard = match cols[4] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(parse_err(lineno, format!("bad hard flag {other:?}"))),
        };
        let values = cols[5..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad number {c:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(Example {
            id,
            genuine: values[..genuine_dim].to_vec(),
            shortcut: values[genuine_dim..].to_vec(),
            label,
            heuristic,
            hard,
        });
    }
    Ok(out)
}
