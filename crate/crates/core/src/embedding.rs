//! Word-vector tables: loading, validation, serialization, and random
//! baseline generation.
//!
//! The text format is one word per line followed by its vector components,
//! whitespace-separated. An optional first line with exactly two integers
//! declares vocabulary size and dimension. Lines starting with `#` before
//! the first data line are metadata; `# provenance: <text>` is captured so
//! reports can record where the vectors came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{content_hash, derive_indexed_seed, derive_seed, rng_from_seed};

/// Whether a table holds pretrained vectors or random baseline vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Pretrained,
    Baseline,
}

/// A named map from word to fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVectorTable {
    pub name: String,
    pub dimension: usize,
    pub kind: TableKind,
    /// Free-text note on how the vectors were produced (model, layer, ...).
    pub provenance: Option<String>,
    entries: BTreeMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(name: impl Into<String>, dimension: usize, kind: TableKind) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("vector dimension must be at least 1"));
        }
        Ok(Self {
            name: name.into(),
            dimension,
            kind,
            provenance: None,
            entries: BTreeMap::new(),
        })
    }

    /// Inserts a word vector, replacing any previous vector for the word.
    /// Returns whether the word was already present.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        let word = word.into();
        if word.is_empty() {
            return Err(Error::invalid("empty word"));
        }
        if word.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("word {word:?} contains whitespace")));
        }
        if vector.len() != self.dimension {
            return Err(Error::invalid(format!(
                "vector for {word:?} has {} components, expected {}",
                vector.len(),
                self.dimension
            )));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "vector for {word:?} has non-finite component {bad}"
            )));
        }
        Ok(self.entries.insert(word, vector).is_some())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.entries.keys().cloned().collect()
    }
}

/// Parameters for a family of random baseline tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub dimension: usize,
    pub seed: u64,
    /// Number of independent baseline tables to generate.
    pub count: usize,
    #[serde(default)]
    pub distribution: BaselineDistribution,
}

/// Distribution of baseline vector components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineDistribution {
    /// Uniform on [-0.5, 0.5]; bounded and zero-mean, comparable in scale
    /// to typical pretrained vectors.
    #[default]
    Uniform,
    StandardNormal,
}

impl fmt::Display for BaselineDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineDistribution::Uniform => write!(f, "uniform"),
            BaselineDistribution::StandardNormal => write!(f, "standard_normal"),
        }
    }
}

/// Name of baseline table `index` for a given dimension.
pub fn baseline_name(dimension: usize, index: usize) -> String {
    format!("baseline-{dimension}d-{index}")
}

/// Generates `spec.count` random baseline tables over `vocabulary`.
///
/// Each table draws an independent vector per word. The vector for a word
/// depends only on (spec.seed, table index, word), so the output is a pure
/// function of the vocabulary as a set: iteration order and the presence of
/// other words change nothing.
pub fn generate_baselines(
    vocabulary: &BTreeSet<String>,
    spec: &BaselineSpec,
) -> Result<Vec<WordVectorTable>> {
    if vocabulary.is_empty() {
        return Err(Error::invalid("baseline vocabulary is empty"));
    }
    if spec.dimension == 0 || spec.count == 0 {
        return Err(Error::invalid(
            "baseline dimension and count must be at least 1",
        ));
    }
    let mut tables = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let sub_seed = derive_indexed_seed(spec.seed, index as u64);
        let mut table = WordVectorTable::new(
            baseline_name(spec.dimension, index),
            spec.dimension,
            TableKind::Baseline,
        )?;
        table.provenance = Some(format!(
            "random baseline, {} distribution, seed {}, table {}",
            spec.distribution, spec.seed, index
        ));
        for word in vocabulary {
            let mut rng = rng_from_seed(derive_seed(sub_seed, &[word.as_str()]));
            let vector: Vec<f64> = (0..spec.dimension)
                .map(|_| match spec.distribution {
                    BaselineDistribution::Uniform => rng.gen::<f64>() - 0.5,
                    BaselineDistribution::StandardNormal => standard_normal(&mut rng),
                })
                .collect();
            table.insert(word.clone(), vector)?;
        }
        tables.push(table);
    }
    Ok(tables)
}

// Box-Muller; two uniforms per draw keeps the stream simple and seedable.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Fraction of `vocabulary` present in the table, plus the covered words.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    pub covered: BTreeSet<String>,
}

pub fn coverage(table: &WordVectorTable, vocabulary: &BTreeSet<String>) -> Result<Coverage> {
    if vocabulary.is_empty() {
        return Err(Error::invalid("coverage vocabulary is empty"));
    }
    let covered: BTreeSet<String> = vocabulary
        .iter()
        .filter(|w| table.get(w).is_some())
        .cloned()
        .collect();
    Ok(Coverage {
        fraction: covered.len() as f64 / vocabulary.len() as f64,
        covered,
    })
}

/// Parses a vector file. The table name defaults to the file stem.
pub fn parse_vector_file(path: &Path) -> Result<WordVectorTable> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "vectors".to_string());
    let file = File::open(path)?;
    parse_vector_reader(BufReader::new(file), &name, &path.display().to_string())
}

/// Parses the vector text format from any reader. `source` names the input
/// in error messages.
pub fn parse_vector_reader<R: BufRead>(
    reader: R,
    name: &str,
    source: &str,
) -> Result<WordVectorTable> {
    let mut table: Option<WordVectorTable> = None;
    let mut declared_words: Option<usize> = None;
    let mut provenance: Option<String> = None;
    let mut saw_data = false;

    for (index, line) in reader.lines().enumerate() {
        let line_no = index as u64 + 1;
        let line = line.map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !saw_data && trimmed.starts_with('#') {
            let body = trimmed.trim_start_matches('#').trim();
            if let Some(rest) = body.strip_prefix("provenance:") {
                provenance = Some(rest.trim().to_string());
            }
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();

        // A first line of exactly two integers is a `V k` header.
        if !saw_data && table.is_none() && tokens.len() == 2 {
            if let (Ok(words), Ok(dim)) = (tokens[0].parse::<usize>(), tokens[1].parse::<usize>()) {
                if dim == 0 {
                    return Err(Error::parse(source, line_no, "header declares dimension 0"));
                }
                let mut t = WordVectorTable::new(name, dim, TableKind::Pretrained)?;
                t.provenance = provenance.clone();
                table = Some(t);
                declared_words = Some(words);
                continue;
            }
        }

        if tokens.len() < 2 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected `word v1 .. vk`, got {} tokens", tokens.len()),
            ));
        }
        let word = tokens[0];
        let components = &tokens[1..];
        let table = match &mut table {
            Some(t) => {
                if components.len() != t.dimension {
                    return Err(Error::parse(
                        source,
                        line_no,
                        format!(
                            "expected {} components, found {}",
                            t.dimension,
                            components.len()
                        ),
                    ));
                }
                t
            }
            None => {
                let mut t = WordVectorTable::new(name, components.len(), TableKind::Pretrained)?;
                t.provenance = provenance.clone();
                table = Some(t);
                table.as_mut().unwrap()
            }
        };
        let mut vector = Vec::with_capacity(table.dimension);
        for component in components {
            let value: f64 = component.parse().map_err(|_| {
                Error::parse(
                    source,
                    line_no,
                    format!("non-numeric component {component:?}"),
                )
            })?;
            if !value.is_finite() {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("non-finite component {component:?}"),
                ));
            }
            vector.push(value);
        }
        saw_data = true;
        let replaced = table
            .insert(word, vector)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        if replaced {
            log::warn!("{source}:{line_no}: duplicate word {word:?}, keeping last occurrence");
        }
    }

    let table = table.ok_or_else(|| Error::EmptyFile(source.into()))?;
    if !saw_data {
        return Err(Error::parse(source, 0, "header present but no data lines"));
    }
    if let Some(declared) = declared_words {
        if declared != table.len() {
            log::warn!(
                "{source}: header declares {declared} words, parsed {}",
                table.len()
            );
        }
    }
    Ok(table)
}

/// Writes a table in the same text format `parse_vector_file` reads,
/// including the `V k` header. Float formatting round-trips exactly.
pub fn write_vector_file(table: &WordVectorTable, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    if let Some(provenance) = &table.provenance {
        writeln!(writer, "# provenance: {provenance}")?;
    }
    writeln!(writer, "{} {}", table.len(), table.dimension)?;
    for (word, vector) in table.iter() {
        write!(writer, "{word}")?;
        for v in vector {
            write!(writer, " {v}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Stable identity for a table's full contents, used in job hashes so a
/// changed vector file invalidates cached results.
pub fn table_digest(table: &WordVectorTable) -> String {
    let mut parts: Vec<String> = vec![table.name.clone(), table.dimension.to_string()];
    for (word, vector) in table.iter() {
        parts.push(word.to_string());
        parts.push(
            vector
                .iter()
                .map(|v| v.to_bits().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    content_hash(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn parse_str(text: &str) -> Result<WordVectorTable> {
        parse_vector_reader(Cursor::new(text), "test", "test.vec")
    }

    #[test]
    fn parses_single_line_without_header() {
        let table = parse_str("the 0.1 0.2 0.3\n").unwrap();
        assert_eq!(table.dimension, 3);
        assert_eq!(table.len(), 1);
        assert_eq!(table.get("the").unwrap(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn parses_header_then_rows() {
        let table = parse_str("2 3\na 1 2 3\nb 4 5 6\n").unwrap();
        assert_eq!(table.dimension, 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.get("b").unwrap(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let err = parse_str("b 1 2 3\na 1 2\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("expected 3"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_component_is_an_error() {
        let err = parse_str("a 1 x 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_str(""), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn duplicate_word_keeps_last() {
        let table = parse_str("a 1 2\na 3 4\n").unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.get("a").unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn provenance_comment_is_captured() {
        let table = parse_str("# provenance: model X, layer 3\na 1 2\n").unwrap();
        assert_eq!(table.provenance.as_deref(), Some("model X, layer 3"));
    }

    #[test]
    fn non_finite_component_is_rejected() {
        assert!(parse_str("a 1 inf\n").is_err());
        assert!(parse_str("a NaN 1\n").is_err());
    }

    fn vocab(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn baselines_match_spec_shape_and_bounds() {
        let spec = BaselineSpec {
            dimension: 50,
            seed: 7,
            count: 1,
            distribution: BaselineDistribution::Uniform,
        };
        let tables = generate_baselines(&vocab(&["a", "b"]), &spec).unwrap();
        assert_eq!(tables.len(), 1);
        let table = &tables[0];
        assert_eq!(table.dimension, 50);
        assert_eq!(table.len(), 2);
        for (_, v) in table.iter() {
            assert!(v.iter().all(|x| (-0.5..=0.5).contains(x)));
        }
    }

    #[test]
    fn baselines_are_deterministic() {
        let spec = BaselineSpec {
            dimension: 8,
            seed: 42,
            count: 2,
            distribution: BaselineDistribution::Uniform,
        };
        let a = generate_baselines(&vocab(&["x", "y", "z"]), &spec).unwrap();
        let b = generate_baselines(&vocab(&["x", "y", "z"]), &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_tables_are_pairwise_different() {
        let spec = BaselineSpec {
            dimension: 10,
            seed: 3,
            count: 5,
            distribution: BaselineDistribution::Uniform,
        };
        let tables = generate_baselines(&vocab(&["a", "b", "c"]), &spec).unwrap();
        assert_eq!(tables.len(), 5);
        for i in 0..tables.len() {
            for j in i + 1..tables.len() {
                assert_ne!(
                    tables[i].entries, tables[j].entries,
                    "tables {i} and {j} collide"
                );
            }
        }
    }

    #[test]
    fn baseline_vectors_do_not_depend_on_other_words() {
        let spec = BaselineSpec {
            dimension: 4,
            seed: 11,
            count: 1,
            distribution: BaselineDistribution::Uniform,
        };
        let small = generate_baselines(&vocab(&["w"]), &spec).unwrap();
        let large = generate_baselines(&vocab(&["a", "m", "w", "z"]), &spec).unwrap();
        assert_eq!(small[0].get("w"), large[0].get("w"));
    }

    #[test]
    fn baseline_sample_mean_is_near_zero() {
        let words: BTreeSet<String> = (0..250).map(|i| format!("w{i}")).collect();
        let spec = BaselineSpec {
            dimension: 40,
            seed: 99,
            count: 1,
            distribution: BaselineDistribution::Uniform,
        };
        let table = &generate_baselines(&words, &spec).unwrap()[0];
        let (sum, n) = table
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        assert!(n >= 10_000);
        assert!((sum / n as f64).abs() < 0.02);
    }

    #[test]
    fn normal_baselines_have_unbounded_components() {
        let words: BTreeSet<String> = (0..100).map(|i| format!("w{i}")).collect();
        let spec = BaselineSpec {
            dimension: 20,
            seed: 5,
            count: 1,
            distribution: BaselineDistribution::StandardNormal,
        };
        let table = &generate_baselines(&words, &spec).unwrap()[0];
        let any_outside = table.iter().any(|(_, v)| v.iter().any(|x| x.abs() > 0.5));
        assert!(any_outside);
    }

    #[test]
    fn coverage_examples() {
        let mut table = WordVectorTable::new("t", 1, TableKind::Pretrained).unwrap();
        for w in ["a", "b", "c"] {
            table.insert(w, vec![0.0]).unwrap();
        }
        let c = coverage(&table, &vocab(&["a", "b", "d", "e"])).unwrap();
        assert_eq!(c.fraction, 0.5);
        assert_eq!(c.covered, vocab(&["a", "b"]));

        let full = coverage(&table, &vocab(&["a", "b"])).unwrap();
        assert_eq!(full.fraction, 1.0);

        let none = coverage(&table, &vocab(&["x", "y"])).unwrap();
        assert_eq!(none.fraction, 0.0);
        assert!(none.covered.is_empty());
    }

    #[test]
    fn empty_vocabulary_is_rejected() {
        let spec = BaselineSpec {
            dimension: 2,
            seed: 0,
            count: 1,
            distribution: BaselineDistribution::Uniform,
        };
        assert!(generate_baselines(&BTreeSet::new(), &spec).is_err());
    }

    proptest! {
        // Serializing a parsed table and parsing it back is the identity.
        #[test]
        fn round_trip_is_identity(
            words in proptest::collection::btree_set("[a-z]{1,6}", 1..20),
            dim in 1usize..6,
            seed in any::<u64>(),
        ) {
            let spec = BaselineSpec {
                dimension: dim,
                seed,
                count: 1,
                distribution: BaselineDistribution::Uniform,
            };
            let table = generate_baselines(&words, &spec).unwrap().remove(0);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.vec");
            write_vector_file(&table, &path).unwrap();
            let reparsed = parse_vector_file(&path).unwrap();
            prop_assert_eq!(&table.entries, &reparsed.entries);
            prop_assert_eq!(table.dimension, reparsed.dimension);
            prop_assert_eq!(table.provenance, reparsed.provenance);
        }
    }
}
