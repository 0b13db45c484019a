//! Report rendering: consolidate run summaries into one CSV and draw
//! grouped bar charts (one SVG per dataset) comparing configurations.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::train::sweep::RunSummary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run summaries found under the given inputs")]
    NoInputs,
    #[error("dataset `{dataset}` has conflicting label vocabularies across runs: {a:?} vs {b:?}")]
    VocabConflict {
        dataset: String,
        a: Vec<String>,
        b: Vec<String>,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub consolidated_csv: PathBuf,
    pub row_count: usize,
    pub charts: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Find every run.json under the input paths (recursively).
fn find_summaries(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, RunSummary)>, ReportError> {
    let mut found = Vec::new();
    for input in inputs {
        walk(input, &mut found)?;
    }
    found.sort();
    let mut summaries = Vec::new();
    for path in found {
        let raw = fs::read_to_string(&path).map_err(|e| ReportError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let summary: RunSummary = serde_json::from_str(&raw).map_err(|e| ReportError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        summaries.push((path, summary));
    }
    Ok(summaries)
}

fn walk(path: &Path, found: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    if path.is_file() {
        if path.file_name().is_some_and(|n| n == "run.json") {
            found.push(path.to_path_buf());
        }
        return Ok(());
    }
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| ReportError::Io(e.to_string()))?;
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        children.sort();
        for child in children {
            walk(&child, found)?;
        }
    }
    Ok(())
}

/// Consolidate run summaries under `inputs` into `out_dir`.
pub fn render_report(inputs: &[PathBuf], out_dir: &Path) -> Result<ReportOutcome, ReportError> {
    let summaries = find_summaries(inputs)?;
    if summaries.is_empty() {
        return Err(ReportError::NoInputs);
    }

    // vocab consistency per dataset
    let mut vocabs: Vec<(String, Vec<String>)> = Vec::new();
    for (_, summary) in &summaries {
        match vocabs.iter().find(|(d, _)| *d == summary.dataset) {
            Some((_, vocab)) if *vocab != summary.vocab => {
                return Err(ReportError::VocabConflict {
                    dataset: summary.dataset.clone(),
                    a: vocab.clone(),
                    b: summary.vocab.clone(),
                });
            }
            Some(_) => {}
            None => vocabs.push((summary.dataset.clone(), summary.vocab.clone())),
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| ReportError::Io(e.to_string()))?;
    let csv_path = out_dir.join("consolidated.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| ReportError::Io(e.to_string()))?;
    writer
        .write_record([
            "dataset",
            "config",
            "variant",
            "steps",
            "params",
            "accuracy_mean",
            "precision_mean",
            "recall_mean",
            "macro_f1_mean",
            "accuracy_std",
            "precision_std",
            "recall_std",
            "macro_f1_std",
        ])
        .map_err(|e| ReportError::Io(e.to_string()))?;
    let mut row_count = 0usize;
    for (_, summary) in &summaries {
        for row in &summary.rows {
            let record = vec![
                summary.dataset.clone(),
                row.name.clone(),
                row.variant.clone(),
                row.steps.join("+"),
                row.params.to_string(),
                format!("{}", row.mean[0]),
                format!("{}", row.mean[1]),
                format!("{}", row.mean[2]),
                format!("{}", row.mean[3]),
                format!("{}", row.std[0]),
                format!("{}", row.std[1]),
                format!("{}", row.std[2]),
                format!("{}", row.std[3]),
            ];
            writer
                .write_record(&record)
                .map_err(|e| ReportError::Io(e.to_string()))?;
            row_count += 1;
        }
    }
    writer.flush().map_err(|e| ReportError::Io(e.to_string()))?;

    // one grouped bar chart per dataset with at least two configs
    let mut charts = Vec::new();
    let mut notices = Vec::new();
    for (dataset, _) in &vocabs {
        let mut groups: Vec<(String, [f64; 4])> = Vec::new();
        for (_, summary) in summaries.iter().filter(|(_, s)| s.dataset == *dataset) {
            for row in &summary.rows {
                groups.push((row.name.clone(), row.mean));
            }
        }
        if groups.len() < 2 {
            notices.push(format!(
                "dataset `{dataset}`: single configuration, chart skipped"
            ));
            continue;
        }
        let svg = grouped_bar_chart(dataset, &groups);
        let chart_path = out_dir.join(format!("chart_{dataset}.svg"));
        fs::write(&chart_path, svg).map_err(|e| ReportError::Io(e.to_string()))?;
        charts.push(chart_path);
    }

    Ok(ReportOutcome {
        consolidated_csv: csv_path,
        row_count,
        charts,
        notices,
    })
}

const METRIC_LABELS: [&str; 4] = ["accuracy", "precision", "recall", "macro-F1"];
const METRIC_COLORS: [&str; 4] = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f"];

/// Hand-rolled grouped bar chart; metrics live in [0, 1].
fn grouped_bar_chart(title: &str, groups: &[(String, [f64; 4])]) -> String {
    let bar_w = 18.0;
    let bar_gap = 2.0;
    let group_gap = 26.0;
    let group_w = 4.0 * bar_w + 3.0 * bar_gap;
    let margin_left = 52.0;
    let margin_top = 46.0;
    let plot_h = 260.0;
    let margin_bottom = 70.0;
    let width = margin_left + groups.len() as f64 * (group_w + group_gap) + 40.0;
    let height = margin_top + plot_h + margin_bottom;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        margin_left,
        xml_escape(title)
    ));

    // y axis + gridlines
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = margin_top + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            margin_left,
            width - 20.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{frac:.2}</text>\n",
            margin_left - 6.0,
            y + 4.0
        ));
    }

    for (g, (name, values)) in groups.iter().enumerate() {
        let x0 = margin_left + g as f64 * (group_w + group_gap) + group_gap / 2.0;
        for (m, &value) in values.iter().enumerate() {
            let v = value.clamp(0.0, 1.0);
            let h = plot_h * v;
            let x = x0 + m as f64 * (bar_w + bar_gap);
            let y = margin_top + plot_h - h;
            svg.push_str(&format!(
                "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"{}\"/>\n",
                METRIC_COLORS[m]
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" \
             transform=\"rotate(30 {:.1} {:.1})\">{}</text>\n",
            x0 + group_w / 2.0,
            margin_top + plot_h + 18.0,
            x0 + group_w / 2.0,
            margin_top + plot_h + 18.0,
            xml_escape(name)
        ));
    }

    // legend
    for (m, label) in METRIC_LABELS.iter().enumerate() {
        let x = margin_left + m as f64 * 92.0;
        let y = height - 16.0;
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            y - 10.0,
            METRIC_COLORS[m]
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"11\">{label}</text>\n",
            x + 16.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
