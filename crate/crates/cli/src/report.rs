//! `federl report`: seed-averaged markdown tables from a run directory.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

/// One group of rows sharing the key columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub key: Vec<String>,
    pub means: Vec<f64>,
    pub count: usize,
}

/// Groups the rows of a CSV by `keys` (in order of first appearance) and
/// averages `values`. Empty cells are skipped.
pub fn mean_table(path: &Path, keys: &[&str], values: &[&str]) -> Result<Vec<MeanRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no `{name}` column", path.display()))
    };
    let key_cols = keys.iter().map(|k| col(k)).collect::<Result<Vec<_>>>()?;
    let value_cols = values.iter().map(|v| col(v)).collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<(Vec<String>, Vec<f64>, Vec<usize>, usize)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let key: Vec<String> = key_cols.iter().map(|&i| rec[i].to_string()).collect();
        let idx = match groups.iter().position(|g| g.0 == key) {
            Some(i) => i,
            None => {
                groups.push((key, vec![0.0; values.len()], vec![0; values.len()], 0));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.3 += 1;
        for (j, &c) in value_cols.iter().enumerate() {
            if rec[c].is_empty() {
                continue;
            }
            let v: f64 = rec[c]
                .parse()
                .with_context(|| format!("{}: `{}` is not a number", path.display(), &rec[c]))?;
            g.1[j] += v;
            g.2[j] += 1;
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, sums, counts, count)| MeanRow {
            key,
            means: sums
                .iter()
                .zip(&counts)
                .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
                .collect(),
            count,
        })
        .collect())
}

const ACC: [&str; 3] = ["acc_clean", "acc_robust", "acc_avg"];

struct TableSpec {
    file: &'static str,
    title: &'static str,
    keys: &'static [&'static str],
    extra: &'static [&'static str],
}

const TABLES: [TableSpec; 4] = [
    TableSpec {
        file: "summary.csv",
        title: "Iso-budget comparison",
        keys: &["budget_kind", "budget", "method"],
        extra: &["t_g"],
    },
    TableSpec {
        file: "trob_sweep.csv",
        title: "Robustification period",
        keys: &["t_rob"],
        extra: &["dart_runs", "client_time_s", "client_energy_J"],
    },
    TableSpec {
        file: "ablation.csv",
        title: "DART ablation",
        keys: &["variant"],
        extra: &[],
    },
    TableSpec {
        file: "proxy_swap.csv",
        title: "Server dataset",
        keys: &["proxy"],
        extra: &["proxy_size"],
    },
];

fn is_accuracy(name: &str) -> bool {
    ACC.contains(&name)
}

/// Markdown for every table present in `dir`; accuracies in percent.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    for spec in &TABLES {
        let path = dir.join(spec.file);
        if !path.exists() {
            continue;
        }
        let values: Vec<&str> = spec.extra.iter().chain(ACC.iter()).copied().collect();
        let rows = mean_table(&path, spec.keys, &values)?;
        writeln!(out, "## {}\n", spec.title)?;
        let header: Vec<&str> = spec.keys.iter().chain(values.iter()).copied().chain(["seeds"]).collect();
        writeln!(out, "| {} |", header.join(" | "))?;
        writeln!(out, "|{}", "---|".repeat(header.len()))?;
        for r in rows {
            let mut cells = r.key.clone();
            for (name, v) in values.iter().zip(&r.means) {
                cells.push(if is_accuracy(name) {
                    format!("{:.2}", 100.0 * v)
                } else {
                    format!("{v:.2}")
                });
            }
            cells.push(r.count.to_string());
            writeln!(out, "| {} |", cells.join(" | "))?;
        }
        writeln!(out)?;
    }
    if out.is_empty() {
        anyhow::bail!("no result tables in {}", dir.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn means_group_in_first_appearance_order() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ablation.csv");
        fs::write(
            &path,
            "seed,variant,acc_clean,acc_robust,acc_avg\n1,full,0.5,0.25,0.375\n1,clean,1.0,0.5,0.75\n2,full,0.7,0.35,0.525\n",
        )
        .unwrap();
        let rows = mean_table(&path, &["variant"], &ACC).unwrap();
        assert_eq!(rows[0].key, vec!["full"]);
        assert_eq!(rows[0].count, 2);
        assert!((rows[0].means[0] - 0.6).abs() < 1e-12);
        assert!((rows[0].means[1] - 0.3).abs() < 1e-12);
        assert_eq!(rows[1].key, vec!["clean"]);
        let md = cmd_report(tmp.path()).unwrap();
        assert!(md.contains("| full | 60.00 | 30.00 | 45.00 | 2 |"), "{md}");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(cmd_report(tmp.path()).is_err());
    }
}
