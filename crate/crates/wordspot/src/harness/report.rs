//! Aggregated results table: architecture rows against dataset/mode
//! columns, values in percent with two decimals.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use super::HarnessError;
use crate::retrieval::QueryMode;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultEntry {
    pub arch: String,
    pub dataset: String,
    pub mode: QueryMode,
    pub map: f64,
}

/// Results manifest: one `arch<TAB>dataset<TAB>mode<TAB>map` line per
/// evaluation, mAP in [0, 1].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultEntry>, HarnessError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut entries = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |reason: String| {
            HarnessError::Config(format!("results line {}: {reason}", idx + 1))
        };
        if fields.len() != 4 {
            return Err(fail(format!("expected 4 fields, got {}", fields.len())));
        }
        let mode = fields[2]
            .parse::<QueryMode>()
            .map_err(fail)?;
        let map = fields[3]
            .parse::<f64>()
            .map_err(|e| fail(format!("bad mAP value: {e}")))?;
        entries.push(ResultEntry {
            arch: fields[0].to_string(),
            dataset: fields[1].to_string(),
            mode,
            map,
        });
    }
    Ok(entries)
}

/// Append one evaluation result to a results manifest.
pub fn append_result(path: impl AsRef<Path>, entry: &ResultEntry) -> Result<(), HarnessError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    writeln!(
        file,
        "{}\t{}\t{}\t{}",
        entry.arch, entry.dataset, entry.mode, entry.map
    )?;
    Ok(())
}

const STANDARD_DATASETS: [(&str, &str); 3] = [
    ("gw", "George Washington"),
    ("iam", "IAM"),
    ("botany", "Botany"),
];

const STANDARD_ARCHS: [&str; 4] = ["lenet", "tppnet", "resnet", "densenet"];

/// Write the aggregated table as CSV. Columns are the three standard
/// benchmarks (QbE then QbS each) plus any extra datasets in sorted
/// order; rows are the four architectures plus extras in sorted order.
/// Cells are percentages with two decimals; absent results stay empty.
pub fn write_table(entries: &[ResultEntry], mut w: impl Write) -> Result<(), HarnessError> {
    let mut datasets: Vec<(String, String)> = STANDARD_DATASETS
        .iter()
        .map(|&(key, label)| (key.to_string(), label.to_string()))
        .collect();
    let extra_datasets: BTreeSet<&str> = entries
        .iter()
        .map(|e| e.dataset.as_str())
        .filter(|d| STANDARD_DATASETS.iter().all(|&(key, _)| key != *d))
        .collect();
    for d in extra_datasets {
        datasets.push((d.to_string(), d.to_string()));
    }

    let mut archs: Vec<String> = STANDARD_ARCHS.iter().map(|s| s.to_string()).collect();
    let extra_archs: BTreeSet<&str> = entries
        .iter()
        .map(|e| e.arch.as_str())
        .filter(|a| !STANDARD_ARCHS.contains(a))
        .collect();
    archs.extend(extra_archs.into_iter().map(String::from));

    write!(w, "architecture")?;
    for (_, label) in &datasets {
        write!(w, ",{label} QbE,{label} QbS")?;
    }
    writeln!(w)?;

    let lookup = |arch: &str, dataset: &str, mode: QueryMode| -> Option<f64> {
        entries
            .iter()
            .rev()
            .find(|e| e.arch == arch && e.dataset == dataset && e.mode == mode)
            .map(|e| e.map)
    };
    for arch in &archs {
        // skip architectures with no results at all
        if entries.iter().all(|e| &e.arch != arch) {
            continue;
        }
        write!(w, "{arch}")?;
        for (key, _) in &datasets {
            for mode in [QueryMode::QbE, QueryMode::QbS] {
                match lookup(arch, key, mode) {
                    Some(map) => write!(w, ",{:.2}", map * 100.0)?,
                    None => write!(w, ",")?,
                }
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
