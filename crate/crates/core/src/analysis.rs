//! Label matrices over the 12 conditions and the metrics computed on them:
//! phi correlations, block-variance consistency scores (CLC, IGD), pairwise
//! agreement, cross-language intersection patterns, probability confidence
//! profiles, and reasoning-script breakdowns.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::ProbPair;
use crate::corpus::{Corpus, Language};
use crate::personas::{Condition, PoliticalGroup};
use crate::stats::{EstimateRecord, EstimateStatus};

const N: usize = Condition::COUNT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("duplicate estimate for tweet {tweet_id:?} under {condition}")]
    DuplicateEstimate {
        tweet_id: String,
        condition: Condition,
    },
    #[error("estimate refers to tweet {0:?}, which is not an included corpus record")]
    UnknownTweet(String),
    #[error("undefined correlations for {}", format_pairs(.0))]
    UndefinedEntries(Vec<(Condition, Condition)>),
}

fn format_pairs(pairs: &[(Condition, Condition)]) -> String {
    let shown: Vec<String> = pairs
        .iter()
        .take(6)
        .map(|(a, b)| format!("{}×{}", a.label(), b.label()))
        .collect();
    if pairs.len() > shown.len() {
        format!("{} and {} more", shown.join(", "), pairs.len() - shown.len())
    } else {
        shown.join(", ")
    }
}

/// Included tweets × 12 conditions; `None` marks a non-confident cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub rows: Vec<String>,
    pub cells: Vec<[Option<u8>; N]>,
}

impl LabelMatrix {
    pub fn empty(rows: Vec<String>) -> LabelMatrix {
        let cells = vec![[None; N]; rows.len()];
        LabelMatrix { rows, cells }
    }

    pub fn column(&self, condition: Condition) -> Vec<Option<u8>> {
        let c = condition.index();
        self.cells.iter().map(|row| row[c]).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len() * N
    }

    /// Rows with a label in every column.
    pub fn complete_rows(&self) -> LabelMatrix {
        let (rows, cells) = self
            .rows
            .iter()
            .zip(&self.cells)
            .filter(|(_, c)| c.iter().all(Option::is_some))
            .map(|(r, c)| (r.clone(), *c))
            .unzip();
        LabelMatrix { rows, cells }
    }
}

pub fn build_label_matrix(
    estimates: &[EstimateRecord],
    corpus: &Corpus,
) -> Result<LabelMatrix, AnalysisError> {
    let rows: Vec<String> = corpus.included().map(|t| t.tweet_id.clone()).collect();
    let index: HashMap<&str, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut seen = vec![[false; N]; rows.len()];
    let mut matrix = LabelMatrix::empty(rows.clone());
    for e in estimates {
        let &row = index
            .get(e.tweet_id.as_str())
            .ok_or_else(|| AnalysisError::UnknownTweet(e.tweet_id.clone()))?;
        let col = e.condition.index();
        if std::mem::replace(&mut seen[row][col], true) {
            return Err(AnalysisError::DuplicateEstimate {
                tweet_id: e.tweet_id.clone(),
                condition: e.condition,
            });
        }
        if e.status == EstimateStatus::Confident {
            matrix.cells[row][col] = e.label;
        }
    }
    Ok(matrix)
}

/// Phi coefficient over jointly labelled rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: Option<f64>,
    pub support: usize,
}

/// 2×2 contingency counts `[[n00, n01], [n10, n11]]` over jointly labelled rows.
pub fn contingency(a: &[Option<u8>], b: &[Option<u8>]) -> [[usize; 2]; 2] {
    let mut t = [[0usize; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            t[*x as usize][*y as usize] += 1;
        }
    }
    t
}

/// Pearson correlation of two binary columns under pairwise deletion.
/// Undefined when fewer than two rows are shared or either side is constant.
pub fn binary_correlation(a: &[Option<u8>], b: &[Option<u8>]) -> Correlation {
    let [[n00, n01], [n10, n11]] = contingency(a, b);
    let support = n00 + n01 + n10 + n11;
    let (a1, a0) = (n10 + n11, n00 + n01);
    let (b1, b0) = (n01 + n11, n00 + n10);
    if support < 2 || a1 == 0 || a0 == 0 || b1 == 0 || b0 == 0 {
        return Correlation { r: None, support };
    }
    let num = n11 as f64 * n00 as f64 - n10 as f64 * n01 as f64;
    let den = (a1 as f64 * a0 as f64 * b1 as f64 * b0 as f64).sqrt();
    Correlation {
        r: Some((num / den).clamp(-1.0, 1.0)),
        support,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionMode {
    /// Each pair uses every row where both cells are labelled.
    #[default]
    Pairwise,
    /// Only rows labelled in all 12 conditions are used.
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub entries: [[Option<f64>; N]; N],
    pub pair_support: [[usize; N]; N],
}

impl CorrelationMatrix {
    /// Matrix from explicit values, with no support information.
    pub fn from_values(values: [[f64; N]; N]) -> CorrelationMatrix {
        CorrelationMatrix {
            entries: values.map(|row| row.map(Some)),
            pair_support: [[0; N]; N],
        }
    }

    pub fn get(&self, a: Condition, b: Condition) -> Option<f64> {
        self.entries[a.index()][b.index()]
    }

    pub fn undefined_pairs(&self) -> Vec<(Condition, Condition)> {
        let mut out = Vec::new();
        for i in 0..N {
            for j in i..N {
                if self.entries[i][j].is_none() {
                    out.push((Condition::from_index(i), Condition::from_index(j)));
                }
            }
        }
        out
    }

    /// The 3×3 block for groups `(gi, gj)`, row-major over languages.
    pub fn block(&self, gi: PoliticalGroup, gj: PoliticalGroup) -> [Option<f64>; 9] {
        std::array::from_fn(|k| {
            let a = Condition::new(gi, Language::ALL[k / 3]);
            let b = Condition::new(gj, Language::ALL[k % 3]);
            self.get(a, b)
        })
    }

    fn defined_block(
        &self,
        gi: PoliticalGroup,
        gj: PoliticalGroup,
    ) -> Result<[f64; 9], Vec<(Condition, Condition)>> {
        let block = self.block(gi, gj);
        let mut missing = Vec::new();
        for (k, v) in block.iter().enumerate() {
            if v.is_none() {
                missing.push((
                    Condition::new(gi, Language::ALL[k / 3]),
                    Condition::new(gj, Language::ALL[k % 3]),
                ));
            }
        }
        if missing.is_empty() {
            Ok(block.map(|v| v.unwrap_or_default()))
        } else {
            Err(missing)
        }
    }
}

pub fn build_correlation_matrix(matrix: &LabelMatrix, mode: DeletionMode) -> CorrelationMatrix {
    let source;
    let matrix = match mode {
        DeletionMode::Pairwise => matrix,
        DeletionMode::Listwise => {
            source = matrix.complete_rows();
            &source
        }
    };
    let columns: Vec<Vec<Option<u8>>> = Condition::all().iter().map(|&c| matrix.column(c)).collect();
    let mut entries = [[None; N]; N];
    let mut pair_support = [[0; N]; N];
    for i in 0..N {
        for j in i..N {
            let c = binary_correlation(&columns[i], &columns[j]);
            entries[i][j] = c.r;
            entries[j][i] = c.r;
            pair_support[i][j] = c.support;
            pair_support[j][i] = c.support;
        }
    }
    CorrelationMatrix {
        entries,
        pair_support,
    }
}

/// Group pairs `(i, j)` with `i <= j`: the 10 blocks tiling the upper triangle.
pub fn upper_blocks() -> Vec<(PoliticalGroup, PoliticalGroup)> {
    let mut out = Vec::with_capacity(10);
    for (i, &gi) in PoliticalGroup::ALL.iter().enumerate() {
        for &gj in &PoliticalGroup::ALL[i..] {
            out.push((gi, gj));
        }
    }
    out
}

/// Whether within-group blocks keep their self-correlation diagonal in the
/// consistency variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    #[default]
    Include,
    Exclude,
}

pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Cross-language consistency: 1000 × the mean population variance of the
/// 10 upper-triangle 3×3 blocks. Lower is more consistent.
pub fn clc(cm: &CorrelationMatrix, diagonal: DiagonalMode) -> Result<f64, AnalysisError> {
    let mut missing = Vec::new();
    let mut total = 0.0;
    let blocks = upper_blocks();
    for &(gi, gj) in &blocks {
        match cm.defined_block(gi, gj) {
            Ok(block) => {
                let values: Vec<f64> = if gi == gj && diagonal == DiagonalMode::Exclude {
                    block
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| k / 3 != k % 3)
                        .map(|(_, v)| *v)
                        .collect()
                } else {
                    block.to_vec()
                };
                total += population_variance(&values);
            }
            Err(m) => missing.extend(m),
        }
    }
    if !missing.is_empty() {
        return Err(AnalysisError::UndefinedEntries(missing));
    }
    Ok(total / (1e-3 * blocks.len() as f64))
}

/// Inter-group differentiation: 1000 × the population variance of the six
/// between-group block means. Higher means more separated groups.
pub fn igd(cm: &CorrelationMatrix) -> Result<f64, AnalysisError> {
    let mut missing = Vec::new();
    let mut means = Vec::with_capacity(6);
    for (gi, gj) in upper_blocks().into_iter().filter(|(a, b)| a != b) {
        match cm.defined_block(gi, gj) {
            Ok(block) => means.push(mean(&block)),
            Err(m) => missing.extend(m),
        }
    }
    if !missing.is_empty() {
        return Err(AnalysisError::UndefinedEntries(missing));
    }
    Ok(population_variance(&means) / 1e-3)
}

/// One model's row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub valid_pct: f64,
    pub clc: Option<f64>,
    pub igd: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Share of estimates that ended up confident, in percent.
pub fn valid_percentage(estimates: &[EstimateRecord]) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    let ok = estimates
        .iter()
        .filter(|e| e.status == EstimateStatus::Confident)
        .count();
    100.0 * ok as f64 / estimates.len() as f64
}

pub fn metric_report(
    estimates: &[EstimateRecord],
    cm: &CorrelationMatrix,
    diagonal: DiagonalMode,
) -> MetricReport {
    let mut diagnostics = Vec::new();
    let clc = clc(cm, diagonal)
        .map_err(|e| diagnostics.push(format!("CLC: {e}")))
        .ok();
    let igd = igd(cm)
        .map_err(|e| diagnostics.push(format!("IGD: {e}")))
        .ok();
    MetricReport {
        valid_pct: valid_percentage(estimates),
        clc,
        igd,
        diagnostics,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub a: Condition,
    pub b: Condition,
    pub n_common: usize,
    pub both_offensive: usize,
    pub both_clean: usize,
    /// Offensive under `a` only.
    pub disagree_a_only: usize,
    /// Offensive under `b` only.
    pub disagree_b_only: usize,
}

impl AgreementSummary {
    pub fn agreements(&self) -> usize {
        self.both_offensive + self.both_clean
    }

    pub fn agreement_rate(&self) -> Option<f64> {
        (self.n_common > 0).then(|| self.agreements() as f64 / self.n_common as f64)
    }
}

pub fn agreement(
    a: Condition,
    col_a: &[Option<u8>],
    b: Condition,
    col_b: &[Option<u8>],
) -> AgreementSummary {
    let [[n00, n01], [n10, n11]] = contingency(col_a, col_b);
    AgreementSummary {
        a,
        b,
        n_common: n00 + n01 + n10 + n11,
        both_offensive: n11,
        both_clean: n00,
        disagree_a_only: n10,
        disagree_b_only: n01,
    }
}

/// Agreement for all 66 unordered condition pairs, canonical order.
pub fn all_agreements(matrix: &LabelMatrix) -> Vec<AgreementSummary> {
    let all = Condition::all();
    let columns: Vec<Vec<Option<u8>>> = all.iter().map(|&c| matrix.column(c)).collect();
    let mut out = Vec::with_capacity(N * (N - 1) / 2);
    for i in 0..N {
        for j in i + 1..N {
            out.push(agreement(all[i], &columns[i], all[j], &columns[j]));
        }
    }
    out
}

/// Joint (EN, PL, RU) label patterns within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersections {
    pub group: PoliticalGroup,
    /// Indexed by `EN << 2 | PL << 1 | RU`.
    pub counts: [usize; 8],
    pub rows: usize,
    pub disagreement_rate: Option<f64>,
}

impl Intersections {
    pub fn pattern_label(pattern: usize) -> String {
        format!("{}{}{}", (pattern >> 2) & 1, (pattern >> 1) & 1, pattern & 1)
    }
}

pub fn cross_language_intersections(matrix: &LabelMatrix, group: PoliticalGroup) -> Intersections {
    let cols = Language::ALL.map(|l| Condition::new(group, l).index());
    let mut counts = [0usize; 8];
    for row in &matrix.cells {
        if let [Some(en), Some(pl), Some(ru)] = cols.map(|c| row[c]) {
            counts[((en as usize) << 2) | ((pl as usize) << 1) | ru as usize] += 1;
        }
    }
    let rows: usize = counts.iter().sum();
    let unanimous = counts[0] + counts[7];
    Intersections {
        group,
        counts,
        rows,
        disagreement_rate: (rows > 0).then(|| (rows - unanimous) as f64 / rows as f64),
    }
}

pub const EXTREME_HIGH: f64 = 0.95;
pub const EXTREME_LOW: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProfile {
    pub n: usize,
    /// Pairs with `p1 >= 0.95` or `p1 <= 0.05`.
    pub extreme_count: usize,
    pub extreme_fraction: f64,
    /// Pairs with `p1 > 0.5`.
    pub offensive_lean: usize,
    pub deviation_count: usize,
    pub deviation_fraction: f64,
}

pub fn confidence_profile(pairs: &[ProbPair]) -> ConfidenceProfile {
    let n = pairs.len();
    let extreme_count = pairs
        .iter()
        .filter(|p| p.p1 >= EXTREME_HIGH || p.p1 <= EXTREME_LOW)
        .count();
    let offensive_lean = pairs.iter().filter(|p| p.p1 > 0.5).count();
    let deviation_count = pairs.iter().filter(|p| p.deviation_flag).count();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    ConfidenceProfile {
        n,
        extreme_count,
        extreme_fraction: frac(extreme_count),
        offensive_lean,
        deviation_count,
        deviation_fraction: frac(deviation_count),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptClass {
    LatinBasic,
    LatinPolish,
    Cyrillic,
    Unknown,
}

impl ScriptClass {
    pub const ALL: [ScriptClass; 4] = [
        ScriptClass::LatinBasic,
        ScriptClass::LatinPolish,
        ScriptClass::Cyrillic,
        ScriptClass::Unknown,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ScriptClass::LatinBasic => "latin_basic",
            ScriptClass::LatinPolish => "latin_polish",
            ScriptClass::Cyrillic => "cyrillic",
            ScriptClass::Unknown => "unknown",
        }
    }
}

const POLISH_DIACRITICS: &str = "ąćęłńóśźżĄĆĘŁŃÓŚŹŻ";

/// Character-inventory heuristic: it cannot tell English from Polish
/// written without diacritics.
pub fn classify_script(text: &str) -> ScriptClass {
    if text.trim().is_empty() {
        ScriptClass::Unknown
    } else if text.chars().any(|c| ('\u{0400}'..='\u{04FF}').contains(&c)) {
        ScriptClass::Cyrillic
    } else if text.chars().any(|c| POLISH_DIACRITICS.contains(c)) {
        ScriptClass::LatinPolish
    } else {
        ScriptClass::LatinBasic
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptBreakdown {
    pub total: usize,
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
}

impl ScriptBreakdown {
    pub fn fraction(&self, class: ScriptClass) -> f64 {
        self.fractions[class as usize]
    }
}

pub fn script_breakdown<S: AsRef<str>>(texts: &[S]) -> ScriptBreakdown {
    let mut counts = [0usize; 4];
    for t in texts {
        counts[classify_script(t.as_ref()) as usize] += 1;
    }
    let total = texts.len();
    let fractions = counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
    ScriptBreakdown {
        total,
        counts,
        fractions,
    }
}
