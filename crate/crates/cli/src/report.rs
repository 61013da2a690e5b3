//! Re-render the tables of a finished run directory.

use std::path::Path;

use crate::{Result, RunnerError};

/// Pretty-print a CSV as a fixed-width table. Stored artifacts keep
/// calibration numbers as fractions; accuracy and ECE columns are shown as
/// percentages here, at report time only.
fn render_csv(text: &str) -> String {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(',').map(str::to_string).collect(),
        None => return String::new(),
    };
    let percent_col: Vec<bool> = header
        .iter()
        .map(|name| name.contains("ece") || name.contains("accuracy"))
        .collect();
    let mut rows: Vec<Vec<String>> = vec![header.clone()];
    for l in lines {
        rows.push(
            l.split(',')
                .enumerate()
                .map(|(i, f)| {
                    // Compact the 17-digit floats for display.
                    match f.parse::<f64>() {
                        Ok(v) if f.contains('e') || f.contains('.') => {
                            if percent_col.get(i).copied().unwrap_or(false) {
                                format!("{:.2}%", v * 100.0)
                            } else {
                                format!("{v:.6}")
                            }
                        }
                        _ => f.to_string(),
                    }
                })
                .collect(),
        );
    }
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, f) in row.iter().enumerate() {
            widths[i] = widths[i].max(f.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        for (i, f) in row.iter().enumerate() {
            out.push_str(&format!("{f:>width$}  ", width = widths[i]));
        }
        out.push('\n');
    }
    out
}

/// Render every table listed in a run directory's manifest to a string.
pub fn render_run(run_dir: &Path) -> Result<String> {
    let manifest_path = run_dir.join("manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| RunnerError::Config(format!("cannot read manifest: {e}")))?,
    )
    .map_err(|e| RunnerError::Config(format!("bad manifest: {e}")))?;

    let mut out = format!(
        "run: {} (experiment {}, version {})\n",
        run_dir.display(),
        manifest["experiment"].as_str().unwrap_or("?"),
        manifest["artifact_version"].as_str().unwrap_or("?"),
    );
    let files = manifest["files"]
        .as_array()
        .ok_or_else(|| RunnerError::Config("manifest lists no files".into()))?;
    for f in files {
        let rel = f.as_str().unwrap_or_default();
        if !rel.starts_with("reports/") || !rel.ends_with(".csv") {
            continue;
        }
        // Reliability diagrams are plotting data, not summary tables.
        if rel.contains("reliability_") {
            continue;
        }
        let text = std::fs::read_to_string(run_dir.join(rel))
            .map_err(|e| RunnerError::Config(format!("cannot read {rel}: {e}")))?;
        out.push_str(&format!("\n== {rel} ==\n{}", render_csv(&text)));
    }
    Ok(out)
}
