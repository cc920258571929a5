//! Query-by-example / query-by-string retrieval over predicted attribute
//! vectors, and interpolated mean-average-precision evaluation.
//!
//! Queries and candidates are compared with cosine similarity; ranked
//! lists break score ties by ascending sample id so evaluation is
//! deterministic. A query-by-example query never appears in its own
//! candidate pool.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::phoc::PhocConfig;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("vector lengths differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("query has no relevant items")]
    NoRelevantItems,
    #[error("relevance flags sum to {got}, expected {expected}")]
    RelevantCountMismatch { expected: usize, got: usize },
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
    #[error("descriptor file line {line}: {reason}")]
    MalformedDescriptor { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Phoc(#[from] crate::phoc::PhocError),
}

/// One retrievable item: a predicted (or encoded) attribute vector plus
/// its normalized transcription.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorEntry {
    pub sample_id: String,
    pub transcription: String,
    pub descriptor: Vec<f64>,
}

/// A set of descriptors with unique sample ids and a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    entries: Vec<DescriptorEntry>,
    dim: usize,
}

impl DescriptorSet {
    pub fn new(entries: Vec<DescriptorEntry>) -> Result<DescriptorSet, RetrievalError> {
        let dim = entries.first().map_or(0, |e| e.descriptor.len());
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.descriptor.len() != dim {
                return Err(RetrievalError::DimensionMismatch(dim, e.descriptor.len()));
            }
            if !seen.insert(e.sample_id.as_str()) {
                return Err(RetrievalError::DuplicateSampleId(e.sample_id.clone()));
            }
        }
        Ok(DescriptorSet { entries, dim })
    }

    pub fn entries(&self) -> &[DescriptorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exchange format: one record per line, tab separated — sample id,
    /// transcription, then the descriptor as decimal floats.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), RetrievalError> {
        for e in &self.entries {
            write!(w, "{}\t{}", e.sample_id, e.transcription)?;
            for v in &e.descriptor {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_path(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<DescriptorSet, RetrievalError> {
        let mut entries = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let n = idx + 1;
            let mut fields = line.split('\t');
            let sample_id = fields
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| RetrievalError::MalformedDescriptor {
                    line: n,
                    reason: "missing sample id".into(),
                })?
                .to_string();
            let transcription = fields
                .next()
                .ok_or_else(|| RetrievalError::MalformedDescriptor {
                    line: n,
                    reason: "missing transcription".into(),
                })?
                .to_string();
            let descriptor: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| RetrievalError::MalformedDescriptor {
                            line: n,
                            reason: format!("bad float {f:?}: {e}"),
                        })
                })
                .collect::<Result<_, _>>()?;
            if descriptor.is_empty() {
                return Err(RetrievalError::MalformedDescriptor {
                    line: n,
                    reason: "missing descriptor values".into(),
                });
            }
            entries.push(DescriptorEntry {
                sample_id,
                transcription,
                descriptor,
            });
        }
        DescriptorSet::new(entries)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<DescriptorSet, RetrievalError> {
        DescriptorSet::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

/// `a . b / (|a| |b|)`, in `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Indices of every sample whose transcription occurs at least twice in
/// the set.
pub fn select_qbe_queries(set: &DescriptorSet) -> Vec<usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in set.entries() {
        *counts.entry(e.transcription.as_str()).or_default() += 1;
    }
    (0..set.len())
        .filter(|&i| counts[set.entries()[i].transcription.as_str()] >= 2)
        .collect()
}

/// The deduplicated test transcriptions in first-occurrence order, minus
/// stop words and minus words that normalize to nothing.
pub fn select_qbs_queries(set: &DescriptorSet, stop_words: &HashSet<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for e in set.entries() {
        if e.transcription.is_empty() || stop_words.contains(&e.transcription) {
            continue;
        }
        if seen.insert(e.transcription.as_str()) {
            queries.push(e.transcription.clone());
        }
    }
    queries
}

/// Interpolated average precision of an ordered relevance list:
/// `AP = (1/R) * sum over relevant ranks k of max_{k' >= k} p(k')` with
/// `p(k)` the precision in the top `k`.
pub fn average_precision(flags: &[bool], relevant_count: usize) -> Result<f64, RetrievalError> {
    if relevant_count == 0 {
        return Err(RetrievalError::NoRelevantItems);
    }
    let found = flags.iter().filter(|&&f| f).count();
    if found != relevant_count {
        return Err(RetrievalError::RelevantCountMismatch {
            expected: relevant_count,
            got: found,
        });
    }
    let mut precisions = Vec::with_capacity(flags.len());
    let mut hits = 0usize;
    for (k, &flag) in flags.iter().enumerate() {
        if flag {
            hits += 1;
        }
        precisions.push(hits as f64 / (k + 1) as f64);
    }
    // interpolation: running max over the suffix
    let mut best = 0.0f64;
    for k in (0..flags.len()).rev() {
        best = best.max(precisions[k]);
        precisions[k] = best;
    }
    let sum: f64 = flags
        .iter()
        .zip(&precisions)
        .filter_map(|(&flag, &p)| flag.then_some(p))
        .sum();
    Ok(sum / relevant_count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMode {
    QbE,
    QbS,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::QbE => "qbe",
            QueryMode::QbS => "qbs",
        })
    }
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "qbe" => Ok(QueryMode::QbE),
            "qbs" => Ok(QueryMode::QbS),
            other => Err(format!("unknown mode {other:?} (expected qbe or qbs)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QueryResult {
    /// Sample id (QbE) or query string (QbS).
    pub query: String,
    pub relevant: usize,
    pub average_precision: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mode: QueryMode,
    pub queries: Vec<QueryResult>,
    pub mean_average_precision: f64,
}

impl EvalReport {
    /// CSV with one row per query plus a summary row holding the mAP.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), RetrievalError> {
        writeln!(w, "mode,query,relevant,ap")?;
        for q in &self.queries {
            writeln!(
                w,
                "{},{},{},{}",
                self.mode, q.query, q.relevant, q.average_precision
            )?;
        }
        writeln!(w, "{},mAP,,{}", self.mode, self.mean_average_precision)?;
        Ok(())
    }

    pub fn to_path(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

/// Rank all entries (optionally excluding one index) against a query
/// descriptor. Sorted by similarity descending, ties by ascending id.
fn rank(
    set: &DescriptorSet,
    query: &[f64],
    exclude: Option<usize>,
) -> Result<Vec<usize>, RetrievalError> {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(set.len());
    for (i, e) in set.entries().iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        scored.push((i, cosine_similarity(query, &e.descriptor)?));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("similarities are finite")
            .then_with(|| {
                set.entries()[a.0]
                    .sample_id
                    .cmp(&set.entries()[b.0].sample_id)
            })
    });
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Run the full protocol for one mode and report per-query interpolated
/// AP plus the unweighted mean over queries.
pub fn evaluate(
    set: &DescriptorSet,
    mode: QueryMode,
    phoc: &PhocConfig,
    stop_words: Option<&HashSet<String>>,
) -> Result<EvalReport, RetrievalError> {
    let empty = HashSet::new();
    let stop = stop_words.unwrap_or(&empty);
    let queries: Vec<QueryResult> = match mode {
        QueryMode::QbE => {
            let query_idx = select_qbe_queries(set);
            if query_idx.is_empty() {
                return Err(RetrievalError::EmptyQuerySet);
            }
            query_idx
                .par_iter()
                .map(|&qi| {
                    let q = &set.entries()[qi];
                    let ranked = rank(set, &q.descriptor, Some(qi))?;
                    let flags: Vec<bool> = ranked
                        .iter()
                        .map(|&i| set.entries()[i].transcription == q.transcription)
                        .collect();
                    let relevant = flags.iter().filter(|&&f| f).count();
                    Ok(QueryResult {
                        query: q.sample_id.clone(),
                        relevant,
                        average_precision: average_precision(&flags, relevant)?,
                    })
                })
                .collect::<Result<_, RetrievalError>>()?
        }
        QueryMode::QbS => {
            let words = select_qbs_queries(set, stop);
            if words.is_empty() {
                return Err(RetrievalError::EmptyQuerySet);
            }
            words
                .par_iter()
                .map(|word| {
                    let descriptor = phoc.encode(word)?.to_f64();
                    let ranked = rank(set, &descriptor, None)?;
                    let flags: Vec<bool> = ranked
                        .iter()
                        .map(|&i| &set.entries()[i].transcription == word)
                        .collect();
                    let relevant = flags.iter().filter(|&&f| f).count();
                    Ok(QueryResult {
                        query: word.clone(),
                        relevant,
                        average_precision: average_precision(&flags, relevant)?,
                    })
                })
                .collect::<Result<_, RetrievalError>>()?
        }
    };
    let mean = queries.iter().map(|q| q.average_precision).sum::<f64>() / queries.len() as f64;
    Ok(EvalReport {
        mode,
        queries,
        mean_average_precision: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_of(items: &[(&str, &str, &[f64])]) -> DescriptorSet {
        DescriptorSet::new(
            items
                .iter()
                .map(|(id, t, d)| DescriptorEntry {
                    sample_id: id.to_string(),
                    transcription: t.to_string(),
                    descriptor: d.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    /// Brute-force interpolated AP, quadratic in the list length.
    fn oracle_ap(flags: &[bool], relevant: usize) -> f64 {
        let n = flags.len();
        let p = |k: usize| -> f64 { flags[..k].iter().filter(|&&f| f).count() as f64 / k as f64 };
        let p_interp = |k: usize| -> f64 { (k..=n).map(p).fold(0.0, f64::max) };
        (1..=n).filter(|&k| flags[k - 1]).map(p_interp).sum::<f64>() / relevant as f64
    }

    /// Exhaustive independent evaluator for both modes.
    fn oracle_evaluate(
        set: &DescriptorSet,
        mode: QueryMode,
        phoc: &PhocConfig,
        stop: &HashSet<String>,
    ) -> Option<f64> {
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|v| v * v).sum::<f64>().sqrt()
                * b.iter().map(|v| v * v).sum::<f64>().sqrt())
        };
        let run_query = |desc: &[f64], target: &str, exclude: Option<usize>| -> f64 {
            let mut cands: Vec<usize> = (0..set.len()).filter(|&i| Some(i) != exclude).collect();
            cands.sort_by(|&a, &b| {
                let (sa, sb) = (
                    cos(desc, &set.entries()[a].descriptor),
                    cos(desc, &set.entries()[b].descriptor),
                );
                sb.partial_cmp(&sa)
                    .unwrap()
                    .then_with(|| set.entries()[a].sample_id.cmp(&set.entries()[b].sample_id))
            });
            let flags: Vec<bool> = cands
                .iter()
                .map(|&i| set.entries()[i].transcription == target)
                .collect();
            let r = flags.iter().filter(|&&f| f).count();
            oracle_ap(&flags, r)
        };
        let mut aps = Vec::new();
        match mode {
            QueryMode::QbE => {
                for (i, e) in set.entries().iter().enumerate() {
                    let occurrences = set
                        .entries()
                        .iter()
                        .filter(|o| o.transcription == e.transcription)
                        .count();
                    if occurrences >= 2 {
                        aps.push(run_query(&e.descriptor, &e.transcription, Some(i)));
                    }
                }
            }
            QueryMode::QbS => {
                let mut seen = HashSet::new();
                for e in set.entries() {
                    if e.transcription.is_empty()
                        || stop.contains(&e.transcription)
                        || !seen.insert(e.transcription.clone())
                    {
                        continue;
                    }
                    let desc = phoc.encode(&e.transcription).unwrap().to_f64();
                    aps.push(run_query(&desc, &e.transcription, None));
                }
            }
        }
        if aps.is_empty() {
            None
        } else {
            Some(aps.iter().sum::<f64>() / aps.len() as f64)
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, vocab: &[&str]) -> DescriptorSet {
        let entries = (0..n)
            .map(|i| DescriptorEntry {
                sample_id: format!("s{i:03}"),
                transcription: vocab[rng.gen_range(0..vocab.len())].to_string(),
                descriptor: (0..dim).map(|_| rng.gen::<f64>()).collect(),
            })
            .collect();
        DescriptorSet::new(entries).unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(RetrievalError::ZeroVector)
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn qbe_selection_needs_two_occurrences() {
        let set = set_of(&[
            ("a", "the", &[1.0]),
            ("b", "the", &[1.0]),
            ("c", "the", &[1.0]),
            ("d", "cat", &[1.0]),
        ]);
        assert_eq!(select_qbe_queries(&set), vec![0, 1, 2]);

        let unique = set_of(&[("a", "x", &[1.0]), ("b", "y", &[1.0])]);
        assert!(select_qbe_queries(&unique).is_empty());
    }

    #[test]
    fn qbe_selection_matches_enumeration_counts() {
        let build = |counts: &[(&str, usize)]| -> DescriptorSet {
            let mut entries = Vec::new();
            for &(word, count) in counts {
                for i in 0..count {
                    entries.push(DescriptorEntry {
                        sample_id: format!("{word}{i}"),
                        transcription: word.to_string(),
                        descriptor: vec![1.0],
                    });
                }
            }
            DescriptorSet::new(entries).unwrap()
        };
        // counts {a:2, b:2, c:6} over 10 samples: all 10 are queries
        let set = build(&[("a", 2), ("b", 2), ("c", 6)]);
        assert_eq!(select_qbe_queries(&set).len(), 10);
        // counts {a:2, b:2, c:1, d:5}: the singleton drops out
        let set = build(&[("a", 2), ("b", 2), ("c", 1), ("d", 5)]);
        assert_eq!(select_qbe_queries(&set).len(), 9);
    }

    #[test]
    fn qbs_selection_dedups_and_excludes_stop_words() {
        let set = set_of(&[
            ("a", "the", &[1.0]),
            ("b", "the", &[1.0]),
            ("c", "cat", &[1.0]),
        ]);
        assert_eq!(
            select_qbs_queries(&set, &HashSet::new()),
            vec!["the".to_string(), "cat".to_string()]
        );
        let stop: HashSet<String> = [String::from("the")].into();
        assert_eq!(select_qbs_queries(&set, &stop), vec!["cat".to_string()]);

        let empty = DescriptorSet::new(vec![]).unwrap();
        assert!(select_qbs_queries(&empty, &HashSet::new()).is_empty());
    }

    #[test]
    fn average_precision_hand_cases() {
        assert_eq!(
            average_precision(&[true, false, false, true], 2).unwrap(),
            0.75
        );
        // interpolation lifts p(2) = 0.5 up to p(3) = 2/3
        assert_eq!(
            average_precision(&[false, true, true], 2).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(average_precision(&[true, true, true], 3).unwrap(), 1.0);
        assert_eq!(
            average_precision(&[true, true, false, false], 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn average_precision_validates_inputs() {
        assert!(matches!(
            average_precision(&[false, false], 0),
            Err(RetrievalError::NoRelevantItems)
        ));
        assert!(matches!(
            average_precision(&[true, false], 2),
            Err(RetrievalError::RelevantCountMismatch { .. })
        ));
    }

    #[test]
    fn average_precision_matches_oracle_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..500 {
            let n = rng.gen_range(1..30);
            let flags: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            let r = flags.iter().filter(|&&f| f).count();
            if r == 0 {
                continue;
            }
            let got = average_precision(&flags, r).unwrap();
            assert_eq!(got, oracle_ap(&flags, r), "flags {flags:?}");
        }
    }

    #[test]
    fn evaluate_single_perfect_query_pair() {
        let set = set_of(&[("a", "dog", &[1.0, 0.0]), ("b", "dog", &[0.9, 0.1])]);
        let phoc = PhocConfig::default();
        let report = evaluate(&set, QueryMode::QbE, &phoc, None).unwrap();
        assert_eq!(report.queries.len(), 2);
        assert_eq!(report.mean_average_precision, 1.0);
        // the query itself is excluded: a single candidate, R = 1
        assert!(report.queries.iter().all(|q| q.relevant == 1));
    }

    #[test]
    fn evaluate_mean_is_the_unweighted_query_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let set = random_set(&mut rng, 20, 5, &["ox", "ax", "em"]);
        let phoc = PhocConfig::new("aemox".chars(), vec![1], 0.5).unwrap();
        for mode in [QueryMode::QbE, QueryMode::QbS] {
            let report = evaluate(&set, mode, &phoc, None).unwrap();
            let mean = report
                .queries
                .iter()
                .map(|q| q.average_precision)
                .sum::<f64>()
                / report.queries.len() as f64;
            assert_eq!(report.mean_average_precision, mean);
        }
    }

    #[test]
    fn evaluate_matches_exhaustive_oracle() {
        let phoc = PhocConfig::new("acdeghiknopt".chars(), vec![1, 2], 0.5).unwrap();
        let vocab = ["cat", "dog", "the", "ink", "pen"];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for round in 0..30 {
            let n = rng.gen_range(2..30);
            let set = random_set(&mut rng, n, phoc.dim(), &vocab);
            for mode in [QueryMode::QbE, QueryMode::QbS] {
                let expected = oracle_evaluate(&set, mode, &phoc, &HashSet::new());
                match evaluate(&set, mode, &phoc, None) {
                    Ok(report) => {
                        assert_eq!(
                            Some(report.mean_average_precision),
                            expected,
                            "round {round}"
                        );
                    }
                    Err(RetrievalError::EmptyQuerySet) => assert_eq!(expected, None),
                    Err(other) => panic!("round {round}: {other}"),
                }
            }
        }
    }

    #[test]
    fn evaluate_rejects_empty_query_sets() {
        let set = set_of(&[("a", "x", &[1.0]), ("b", "y", &[1.0])]);
        let phoc = PhocConfig::default();
        assert!(matches!(
            evaluate(&set, QueryMode::QbE, &phoc, None),
            Err(RetrievalError::EmptyQuerySet)
        ));
        let stop: HashSet<String> = [String::from("x"), String::from("y")].into();
        assert!(matches!(
            evaluate(&set, QueryMode::QbS, &phoc, Some(&stop)),
            Err(RetrievalError::EmptyQuerySet)
        ));
    }

    #[test]
    fn descriptor_set_rejects_duplicates_and_ragged_dims() {
        assert!(matches!(
            DescriptorSet::new(vec![
                DescriptorEntry {
                    sample_id: "a".into(),
                    transcription: "x".into(),
                    descriptor: vec![1.0],
                },
                DescriptorEntry {
                    sample_id: "a".into(),
                    transcription: "y".into(),
                    descriptor: vec![2.0],
                },
            ]),
            Err(RetrievalError::DuplicateSampleId(_))
        ));
        assert!(matches!(
            DescriptorSet::new(vec![
                DescriptorEntry {
                    sample_id: "a".into(),
                    transcription: "x".into(),
                    descriptor: vec![1.0],
                },
                DescriptorEntry {
                    sample_id: "b".into(),
                    transcription: "y".into(),
                    descriptor: vec![2.0, 3.0],
                },
            ]),
            Err(RetrievalError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn exchange_file_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = random_set(&mut rng, 12, 5, &["ab", "cd"]);
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = DescriptorSet::read_from(buf.as_slice()).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn malformed_descriptor_lines_carry_line_numbers() {
        let text = "s1\tcat\t0.5\t0.5\ns2\tdog\tnot_a_float\n";
        match DescriptorSet::read_from(text.as_bytes()) {
            Err(RetrievalError::MalformedDescriptor { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_csv_has_summary_row() {
        let report = EvalReport {
            mode: QueryMode::QbS,
            queries: vec![QueryResult {
                query: "cat".into(),
                relevant: 2,
                average_precision: 0.75,
            }],
            mean_average_precision: 0.75,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "mode,query,relevant,ap\nqbs,cat,2,0.75\nqbs,mAP,,0.75\n");
    }

    proptest! {
        /// Rescaling every descriptor by a positive constant leaves the
        /// rankings and therefore every AP unchanged.
        #[test]
        fn positive_scaling_is_invariant(seed in any::<u64>(), scale_pow in -4i32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, 14, 3, &["aa", "bb", "cc"]);
            let scale = 2.0f64.powi(scale_pow) * 1.3;
            let scaled = DescriptorSet::new(
                set.entries()
                    .iter()
                    .map(|e| DescriptorEntry {
                        sample_id: e.sample_id.clone(),
                        transcription: e.transcription.clone(),
                        descriptor: e.descriptor.iter().map(|v| v * scale).collect(),
                    })
                    .collect(),
            )
            .unwrap();
            let phoc = PhocConfig::new("abc".chars(), vec![1], 0.5).unwrap();
            for mode in [QueryMode::QbE, QueryMode::QbS] {
                let a = evaluate(&set, mode, &phoc, None).unwrap();
                let b = evaluate(&scaled, mode, &phoc, None).unwrap();
                prop_assert_eq!(a.mean_average_precision, b.mean_average_precision);
                for (qa, qb) in a.queries.iter().zip(&b.queries) {
                    prop_assert_eq!(qa.average_precision, qb.average_precision);
                }
            }
        }

        /// AP is 1 exactly when every relevant item precedes every
        /// irrelevant one.
        #[test]
        fn ap_is_one_iff_relevant_items_lead(flags in proptest::collection::vec(any::<bool>(), 1..12)) {
            let r = flags.iter().filter(|&&f| f).count();
            prop_assume!(r >= 1);
            let ap = average_precision(&flags, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let sorted_front = flags.iter().take(r).all(|&f| f);
            prop_assert_eq!(ap == 1.0, sorted_front);
        }
    }
}
