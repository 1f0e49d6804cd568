//! Item difficulty, rank correlation, paired t-tests and the
//! direction × size least-squares ANOVA.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Orientation;
use crate::error::{Error, Result};
use crate::eval::BenchmarkResult;

fn stats_err(m: impl Into<String>) -> Error {
    Error::Stats(m.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyVector {
    pub source: String,
    pub item_ids: Vec<String>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
}

impl DifficultyVector {
    pub fn new(source: &str, item_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if item_ids.len() != values.len() {
            return Err(stats_err("item ids and values differ in length"));
        }
        let mut seen = HashSet::new();
        if let Some(d) = item_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(stats_err(format!("{source}: duplicate item `{d}`")));
        }
        Ok(DifficultyVector {
            source: source.to_owned(),
            item_ids,
            values,
            direction: None,
            size: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restricts (and reorders) to `ids`; every id must be present.
    pub fn restrict(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, f64> = self.item_ids.iter().map(String::as_str).zip(self.values.iter().copied()).collect();
        let values = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| stats_err(format!("{}: missing item `{id}`", self.source)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DifficultyVector {
            item_ids: ids.to_vec(),
            values,
            ..self.clone()
        })
    }
}

/// `ppl_altered - ppl_original` per item: positive means the model found
/// the item easy.
pub fn model_difficulty(result: &BenchmarkResult) -> Result<DifficultyVector> {
    if result.summary.n_skipped > 0 {
        return Err(stats_err(format!(
            "{}: {} items were not scored",
            result.summary.meta.label, result.summary.n_skipped
        )));
    }
    let mut v = DifficultyVector::new(
        &result.summary.meta.label,
        result.scores.iter().map(|s| s.item_id.clone()).collect(),
        result.scores.iter().map(|s| s.ppl_altered - s.ppl_original).collect(),
    )?;
    v.direction = result.summary.meta.orientation;
    v.size = result.summary.meta.size.map(|s| s as f64);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanResponse {
    pub participant_id: String,
    pub item_id: String,
    pub correct: u8,
    #[serde(default)]
    pub confidence: Option<f64>,
    #[serde(default)]
    pub expertise: Option<f64>,
}

/// Reads `participant_id,item_id,correct[,confidence,expertise]`.
pub fn load_human_responses(path: &Path) -> Result<Vec<HumanResponse>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Malformed {
                path: path.to_owned(),
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.deserialize::<HumanResponse>().enumerate() {
        let line = i + 2;
        let r = rec.map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        })?;
        if r.correct > 1 {
            return Err(Error::Malformed {
                path: path.to_owned(),
                line,
                message: format!("correct must be 0 or 1, got {}", r.correct),
            });
        }
        if !seen.insert((r.participant_id.clone(), r.item_id.clone())) {
            return Err(Error::Malformed {
                path: path.to_owned(),
                line,
                message: format!("participant `{}` answered item `{}` twice", r.participant_id, r.item_id),
            });
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanDifficulty {
    pub vector: DifficultyVector,
    /// Items nobody answered; left out of every correlation.
    pub excluded: Vec<String>,
    pub n_participants: usize,
    pub n_responses: usize,
}

/// Mean correctness per item, in the order of `item_ids`.
pub fn human_difficulty(responses: &[HumanResponse], item_ids: &[String]) -> Result<HumanDifficulty> {
    let known: HashSet<&str> = item_ids.iter().map(String::as_str).collect();
    let mut tally: HashMap<&str, (u64, u64)> = HashMap::new();
    for r in responses {
        if !known.contains(r.item_id.as_str()) {
            return Err(Error::InvalidArgument(format!("response for unknown item `{}`", r.item_id)));
        }
        let t = tally.entry(&r.item_id).or_default();
        t.0 += r.correct as u64;
        t.1 += 1;
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for id in item_ids {
        match tally.get(id.as_str()) {
            Some(&(c, n)) => {
                ids.push(id.clone());
                values.push(c as f64 / n as f64);
            }
            None => excluded.push(id.clone()),
        }
    }
    let participants: HashSet<&str> = responses.iter().map(|r| r.participant_id.as_str()).collect();
    Ok(HumanDifficulty {
        vector: DifficultyVector::new("human", ids, values)?,
        excluded,
        n_participants: participants.len(),
        n_responses: responses.len(),
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(stats_err("vectors differ in length"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(stats_err("correlation is undefined for a constant vector"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho on raw value slices.
pub fn spearman_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(stats_err("vectors differ in length"));
    }
    if x.len() < 3 {
        return Err(stats_err("spearman needs at least 3 items"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(stats_err("non-finite value in correlation input"));
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// Spearman's rho between two vectors covering the same item set.
pub fn spearman(x: &DifficultyVector, y: &DifficultyVector) -> Result<f64> {
    let xs: BTreeSet<&String> = x.item_ids.iter().collect();
    let ys: BTreeSet<&String> = y.item_ids.iter().collect();
    if xs != ys {
        return Err(stats_err(format!("`{}` and `{}` cover different items", x.source, y.source)));
    }
    let y = y.restrict(&x.item_ids)?;
    spearman_values(&x.values, &y.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub sd: Option<f64>,
}

impl GroupStat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(GroupStat { n, mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub sources: Vec<String>,
    pub n_items: usize,
    pub matrix: Vec<Vec<f64>>,
    pub model_model: Option<GroupStat>,
    pub model_human: Option<GroupStat>,
    pub forward_human: Option<GroupStat>,
    pub backward_human: Option<GroupStat>,
}

impl CorrelationSummary {
    /// The matrix as CSV with a header row and a leading label column.
    pub fn matrix_csv(&self) -> String {
        let mut s = format!("source,{}\n", self.sources.join(","));
        for (name, row) in self.sources.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        s
    }
}

/// Pairwise Spearman matrix over the items every vector covers, with group
/// means over the off-diagonal entries.
pub fn correlation_summary(models: &[DifficultyVector], human: Option<&DifficultyVector>) -> Result<CorrelationSummary> {
    if models.len() < 2 {
        return Err(stats_err("need at least two model vectors"));
    }
    let all: Vec<&DifficultyVector> = models.iter().chain(human).collect();
    let mut common: BTreeSet<&String> = all[0].item_ids.iter().collect();
    for v in &all[1..] {
        let ids: BTreeSet<&String> = v.item_ids.iter().collect();
        common = common.intersection(&ids).copied().collect();
    }
    let order: Vec<String> = all[0].item_ids.iter().filter(|id| common.contains(id)).cloned().collect();
    let aligned = all.iter().map(|v| v.restrict(&order)).collect::<Result<Vec<_>>>()?;

    let k = aligned.len();
    let mut matrix = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = spearman_values(&aligned[i].values, &aligned[j].values)
                .map_err(|e| stats_err(format!("{} vs {}: {e}", aligned[i].source, aligned[j].source)))?;
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    let m = models.len();
    let mut mm = Vec::new();
    for (i, row) in matrix.iter().enumerate().take(m) {
        mm.extend_from_slice(&row[i + 1..m]);
    }
    let with_human = |dir: Option<Orientation>| -> Vec<f64> {
        if human.is_none() {
            return Vec::new();
        }
        (0..m)
            .filter(|&i| dir.is_none() || models[i].direction == dir)
            .map(|i| matrix[i][m])
            .collect()
    };
    Ok(CorrelationSummary {
        sources: aligned.iter().map(|v| v.source.clone()).collect(),
        n_items: order.len(),
        model_model: GroupStat::of(&mm),
        model_human: GroupStat::of(&with_human(None)),
        forward_human: GroupStat::of(&with_human(Some(Orientation::Forward))),
        backward_human: GroupStat::of(&with_human(Some(Orientation::Backward))),
        matrix,
    })
}

// ---------------------------------------------------------------------------
// Distribution functions

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Upper-tail p-value of the F distribution.
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_diff: f64,
}

/// Paired t-test on `x - y`. Identical inputs give `t = 0, p = 1`; a
/// nonzero constant difference has no variance and is an error.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(stats_err("paired samples differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(stats_err("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(stats_err("non-finite value in t-test input"));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTest {
                t: 0.0,
                df,
                p: 1.0,
                mean_diff: 0.0,
            });
        }
        return Err(stats_err("differences have zero variance"));
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        df,
        p: t_two_sided_p(t, df as f64),
        mean_diff: mean,
    })
}

// ---------------------------------------------------------------------------
// Direction × size ANOVA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCorrectness {
    pub label: String,
    pub direction: Orientation,
    pub size: f64,
    pub correct: Vec<bool>,
}

/// Per-item correctness for several runs over one shared item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub item_ids: Vec<String>,
    pub runs: Vec<RunCorrectness>,
}

impl AccuracyTable {
    pub fn new(item_ids: Vec<String>, runs: Vec<RunCorrectness>) -> Result<Self> {
        if let Some(r) = runs.iter().find(|r| r.correct.len() != item_ids.len()) {
            return Err(stats_err(format!(
                "run `{}` covers {} items, table has {}",
                r.label,
                r.correct.len(),
                item_ids.len()
            )));
        }
        if item_ids.is_empty() {
            return Err(stats_err("accuracy table has no items"));
        }
        Ok(AccuracyTable { item_ids, runs })
    }

    /// Builds the table from benchmark results, aligned on the first run's
    /// item order. Each result must carry direction and size.
    pub fn from_results(results: &[BenchmarkResult]) -> Result<Self> {
        let first = results.first().ok_or_else(|| stats_err("no results"))?;
        let ids: Vec<String> = first.scores.iter().map(|s| s.item_id.clone()).collect();
        let mut runs = Vec::new();
        for r in results {
            let meta = &r.summary.meta;
            let direction = meta
                .orientation
                .ok_or_else(|| stats_err(format!("`{}` has no direction", meta.label)))?;
            let size = meta.size.ok_or_else(|| stats_err(format!("`{}` has no size", meta.label)))?;
            let by_id: HashMap<&str, bool> = r.scores.iter().map(|s| (s.item_id.as_str(), s.correct)).collect();
            if by_id.len() != ids.len() {
                return Err(stats_err(format!("`{}` covers a different item set", meta.label)));
            }
            let correct = ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| stats_err(format!("`{}` lacks item `{id}`", meta.label)))
                })
                .collect::<Result<Vec<_>>>()?;
            runs.push(RunCorrectness {
                label: meta.label.clone(),
                direction,
                size: size as f64,
                correct,
            });
        }
        AccuracyTable::new(ids, runs)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        let n = self.item_ids.len() as f64;
        self.runs
            .iter()
            .map(|r| r.correct.iter().filter(|&&c| c).count() as f64 / n)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTerm {
    pub term: String,
    pub ss: f64,
    pub df: usize,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub terms: Vec<AnovaTerm>,
    pub residual_ss: f64,
    pub residual_df: usize,
    pub accuracies: Vec<f64>,
}

impl AnovaTable {
    pub fn term(&self, name: &str) -> Option<&AnovaTerm> {
        self.terms.iter().find(|t| t.term == name)
    }
}

pub const ANOVA_TERMS: [&str; 3] = ["direction", "size", "direction:size"];

/// Sequential sums of squares for the columns of `x` (intercept first),
/// via modified Gram-Schmidt. Returns per-column SS (excluding the
/// intercept) and the residual SS.
fn sequential_ss(columns: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut resid = y.to_vec();
    let mut ss = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        for qk in &q {
            let dot: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(qk).for_each(|(vi, qi)| *vi -= dot * qi);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            return Err(stats_err("design matrix is singular"));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let coef: f64 = v.iter().zip(&resid).map(|(a, b)| a * b).sum();
        resid.iter_mut().zip(&v).for_each(|(r, qi)| *r -= coef * qi);
        if j > 0 {
            ss.push(coef * coef);
        }
        q.push(v);
    }
    Ok((ss, resid.iter().map(|r| r * r).sum()))
}

/// Least-squares ANOVA of per-run accuracy on direction (0 forward,
/// 1 backward), size (continuous) and their product. Terms enter in that
/// order with sequential sums of squares; each is tested against the
/// residual with `runs - 4` degrees of freedom.
pub fn rm_anova(table: &AccuracyTable) -> Result<AnovaTable> {
    let n = table.runs.len();
    if n < 5 {
        return Err(stats_err(format!("{n} runs leave no residual degrees of freedom (need at least 5)")));
    }
    let y = table.accuracies();
    let dir: Vec<f64> = table
        .runs
        .iter()
        .map(|r| if r.direction == Orientation::Backward { 1.0 } else { 0.0 })
        .collect();
    // Standardizing size keeps the basis well conditioned and leaves every
    // sequential sum of squares unchanged.
    let raw: Vec<f64> = table.runs.iter().map(|r| r.size).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let scale = raw.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(stats_err("design matrix is singular: a single model size"));
    }
    let size: Vec<f64> = raw.iter().map(|s| (s - mean) / scale).collect();
    let inter: Vec<f64> = dir.iter().zip(&size).map(|(d, s)| d * s).collect();
    let (ss, rss) = sequential_ss(&[vec![1.0; n], dir, size, inter], &y)?;
    let rdf = n - 4;
    let scale_y = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    let rss = if rss < 1e-28 * scale_y { 0.0 } else { rss };
    let terms = ANOVA_TERMS
        .iter()
        .zip(ss)
        .map(|(name, s)| {
            let s = if s < 1e-28 * scale_y { 0.0 } else { s };
            let f = if s == 0.0 {
                0.0
            } else if rss == 0.0 {
                f64::INFINITY
            } else {
                s / (rss / rdf as f64)
            };
            AnovaTerm {
                term: name.to_string(),
                ss: s,
                df: 1,
                f,
                p: f_upper_p(f, 1.0, rdf as f64),
            }
        })
        .collect();
    Ok(AnovaTable {
        terms,
        residual_ss: rss,
        residual_df: rdf,
        accuracies: y,
    })
}

// ---------------------------------------------------------------------------
// Full report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub direction: Option<Orientation>,
    pub size: Option<usize>,
    pub accuracy: f64,
    pub n_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityTTest {
    pub size: usize,
    pub forward: String,
    pub backward: String,
    /// Forward minus backward perplexity of the original passages.
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSummary {
    pub n_items: usize,
    pub excluded: Vec<String>,
    pub n_participants: usize,
    pub n_responses: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub runs: Vec<RunSummary>,
    pub correlation: Option<CorrelationSummary>,
    pub human: Option<HumanSummary>,
    /// Forward–human versus backward–human correlation, paired by size.
    pub human_alignment_t: Option<TTest>,
    pub perplexity_t: Vec<PerplexityTTest>,
    pub anova: Option<AnovaTable>,
    /// Analyses that could not run, with the reason.
    pub skipped: BTreeMap<String, String>,
}

/// Runs every analysis the inputs allow. Analyses whose preconditions fail
/// are listed in `skipped` rather than aborting the report.
pub fn analyze(
    results: &[BenchmarkResult],
    human: Option<(&[HumanResponse], &[String])>,
) -> Result<StatsReport> {
    if results.is_empty() {
        return Err(stats_err("no benchmark results"));
    }
    let mut report = StatsReport {
        runs: results
            .iter()
            .map(|r| RunSummary {
                label: r.summary.meta.label.clone(),
                direction: r.summary.meta.orientation,
                size: r.summary.meta.size,
                accuracy: r.accuracy(),
                n_scored: r.summary.n_scored,
            })
            .collect(),
        ..Default::default()
    };
    let models = results.iter().map(model_difficulty).collect::<Result<Vec<_>>>()?;

    let human_vec = match human {
        Some((responses, ids)) => {
            let h = human_difficulty(responses, ids)?;
            let mean = h.vector.values.iter().sum::<f64>() / h.vector.len().max(1) as f64;
            report.human = Some(HumanSummary {
                n_items: h.vector.len(),
                excluded: h.excluded.clone(),
                n_participants: h.n_participants,
                n_responses: h.n_responses,
                mean_accuracy: mean,
            });
            Some(h.vector)
        }
        None => None,
    };

    match correlation_summary(&models, human_vec.as_ref()) {
        Ok(c) => report.correlation = Some(c),
        Err(e) => {
            report.skipped.insert("correlation".into(), e.to_string());
        }
    }

    // Pair forward and backward runs of equal size.
    let mut by_size: BTreeMap<usize, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        if let (Some(size), Some(dir)) = (r.summary.meta.size, r.summary.meta.orientation) {
            let slot = by_size.entry(size).or_default();
            match dir {
                Orientation::Forward => slot.0 = Some(i),
                Orientation::Backward => slot.1 = Some(i),
            }
        }
    }
    let pairs: Vec<(usize, usize, usize)> = by_size
        .iter()
        .filter_map(|(&s, &(f, b))| Some((s, f?, b?)))
        .collect();
    for &(size, f, b) in &pairs {
        let fwd = &results[f];
        let bwd = &results[b];
        let bwd_ppl: HashMap<&str, f64> = bwd.scores.iter().map(|s| (s.item_id.as_str(), s.ppl_original)).collect();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for s in &fwd.scores {
            if let Some(&p) = bwd_ppl.get(s.item_id.as_str()) {
                xs.push(s.ppl_original);
                ys.push(p);
            }
        }
        match paired_t(&xs, &ys) {
            Ok(test) => report.perplexity_t.push(PerplexityTTest {
                size,
                forward: fwd.summary.meta.label.clone(),
                backward: bwd.summary.meta.label.clone(),
                test,
            }),
            Err(e) => {
                report.skipped.insert(format!("perplexity_t[{size}]"), e.to_string());
            }
        }
    }

    if let Some(c) = &report.correlation {
        if human_vec.is_some() {
            let h = c.sources.len() - 1;
            let fh: Vec<f64> = pairs.iter().map(|&(_, f, _)| c.matrix[f][h]).collect();
            let bh: Vec<f64> = pairs.iter().map(|&(_, _, b)| c.matrix[b][h]).collect();
            match paired_t(&fh, &bh) {
                Ok(t) => report.human_alignment_t = Some(t),
                Err(e) => {
                    report.skipped.insert("human_alignment_t".into(), e.to_string());
                }
            }
        }
    }

    match AccuracyTable::from_results(results).and_then(|t| rm_anova(&t)) {
        Ok(a) => report.anova = Some(a),
        Err(e) => {
            report.skipped.insert("anova".into(), e.to_string());
        }
    }
    Ok(report)
}
