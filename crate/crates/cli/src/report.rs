use crate::config::{Method, RunConfig};
use anyhow::{bail, Context, Result};
use std::fs;
use std::path::Path;

pub struct MethodSummary {
    pub method: &'static str,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Standard error over seeds; None with a single seed.
    pub se: Option<f64>,
}

/// Success rate from a per-episode CSV report.
fn read_success_rate(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading eval report {}", path.display()))?;
    let mut n = 0usize;
    let mut ok = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            bail!("malformed row in {}", path.display());
        }
        n += 1;
        if fields[2] == "1" {
            ok += 1;
        }
    }
    if n == 0 {
        bail!("empty eval report {}", path.display());
    }
    Ok(ok as f64 / n as f64)
}

pub fn summarize(cfg: &RunConfig, method: Method) -> Result<Option<MethodSummary>> {
    let mut per_seed = Vec::new();
    for &seed in &cfg.run.seeds {
        let path = cfg.eval_dir(method, seed).join("report.csv");
        if !path.exists() {
            return Ok(None);
        }
        per_seed.push((seed, read_success_rate(&path)?));
    }
    let n = per_seed.len();
    let mean = per_seed.iter().map(|(_, r)| r).sum::<f64>() / n as f64;
    let se = if n >= 2 {
        let var = per_seed
            .iter()
            .map(|(_, r)| (r - mean) * (r - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        Some(var.sqrt() / (n as f64).sqrt())
    } else {
        None
    };
    Ok(Some(MethodSummary {
        method: method.name(),
        per_seed,
        mean,
        se,
    }))
}

/// Aggregate eval results into a comma-separated table and a plain-text
/// summary: per-method mean success rate and standard error over seeds.
pub fn report(cfg: &RunConfig, methods: &[String]) -> Result<()> {
    let selected: Vec<Method> = if methods.is_empty() {
        vec![Method::Bc, Method::Dart, Method::Ha, Method::Spartn]
    } else {
        methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<Result<_>>()?
    };

    let mut rows = Vec::new();
    for m in selected {
        if let Some(s) = summarize(cfg, m)? {
            rows.push(s);
        } else if !methods.is_empty() {
            bail!(
                "missing eval results for method '{}' (run eval with run.method={})",
                m.name(),
                m.name()
            );
        }
    }
    if rows.is_empty() {
        bail!("no eval results found under {}", cfg.experiment_dir().display());
    }

    let mut csv = String::from("method,n_seeds,mean_success,se");
    for &seed in &cfg.run.seeds {
        csv.push_str(&format!(",seed_{seed}"));
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{:.4},", r.method, r.per_seed.len(), r.mean));
        if let Some(se) = r.se {
            csv.push_str(&format!("{se:.4}"));
        }
        for (_, rate) in &r.per_seed {
            csv.push_str(&format!(",{rate:.4}"));
        }
        csv.push('\n');
    }

    let mut txt = String::new();
    txt.push_str(&format!(
        "{:<8} {:>7} {:>12} {:>10}\n",
        "method", "seeds", "mean SR", "SE"
    ));
    for r in &rows {
        let se_txt = r
            .se
            .map(|s| format!("{:.1}", s * 100.0))
            .unwrap_or_else(|| "-".into());
        txt.push_str(&format!(
            "{:<8} {:>7} {:>11.1}% {:>10}\n",
            r.method,
            r.per_seed.len(),
            r.mean * 100.0,
            se_txt
        ));
    }

    let dir = cfg.experiment_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.csv"), &csv)?;
    fs::write(dir.join("report.txt"), &txt)?;
    print!("{txt}");
    println!("wrote {} and report.txt", dir.join("report.csv").display());
    Ok(())
}
