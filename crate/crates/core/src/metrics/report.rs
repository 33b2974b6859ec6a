use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ConfidenceCell, HorizonScores, Side, TransitionMatrix};
use crate::corpus::Horizon;
use crate::judge::FramingLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramingSummary {
    /// Pairs where both sides were labelled.
    pub n: usize,
    /// Items the judge could not label on either side.
    pub unclassified: usize,
    pub phi_frame: f64,
    pub transitions: TransitionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub n: usize,
    pub mean_s_b: f64,
    pub mean_s_m: f64,
    pub mean_s_e: f64,
    pub alpha: f64,
    pub psi_pri: f64,
    /// Extension indicator (beginning beats both other thirds).
    pub ext_beginning_dominance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationSummary {
    pub by_horizon: BTreeMap<Horizon, HorizonScores>,
    pub cutoff_gap: Option<f64>,
    /// Verdicts that could not be parsed; scored as incorrect unless excluded.
    pub failed_verdicts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<ConfidenceCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub run_id: String,
    pub model: String,
    pub dataset: String,
    pub method: String,
    pub n_input: usize,
    pub n_quarantined: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing: Option<FramingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucination: Option<HallucinationSummary>,
    pub manifest: String,
}

/// Flat CSV row, one per model x dataset x method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub model: String,
    pub dataset: String,
    pub method: String,
    pub n_input: usize,
    pub n_quarantined: usize,
    pub framing_n: Option<usize>,
    pub unclassified: Option<usize>,
    pub phi_frame: Option<f64>,
    pub coverage_n: Option<usize>,
    pub mean_s_b: Option<f64>,
    pub mean_s_m: Option<f64>,
    pub mean_s_e: Option<f64>,
    pub alpha: Option<f64>,
    pub psi_pri: Option<f64>,
    pub ext_beginning_dominance: Option<f64>,
    pub pre_n: Option<usize>,
    pub pre_actual: Option<f64>,
    pub pre_falsified: Option<f64>,
    pub pre_strict: Option<f64>,
    pub post_n: Option<usize>,
    pub post_actual: Option<f64>,
    pub post_falsified: Option<f64>,
    pub post_strict: Option<f64>,
    pub delta_h: Option<f64>,
    pub failed_verdicts: Option<usize>,
}

fn in_unit(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} = {v} outside [0, 1]"))
    }
}

fn pct(v: f64) -> String {
    format!("{:.4}", v)
}

impl AuditReport {
    /// Consistency checks every emitted report must satisfy.
    pub fn check(&self) -> Result<(), String> {
        if let Some(f) = &self.framing {
            in_unit("phi_frame", f.phi_frame)?;
            if f.n > 0 && (f.transitions.off_diagonal() - f.phi_frame).abs() > 1e-12 {
                return Err("off-diagonal transition mass differs from phi_frame".into());
            }
        }
        if let Some(c) = &self.coverage {
            in_unit("psi_pri", c.psi_pri)?;
            in_unit("ext_beginning_dominance", c.ext_beginning_dominance)?;
        }
        if let Some(h) = &self.hallucination {
            for (hz, s) in &h.by_horizon {
                for (name, v) in [("actual", s.actual), ("falsified", s.falsified), ("strict", s.strict)] {
                    in_unit(&format!("{} {name}", hz.as_str()), v)?;
                }
                if s.strict > s.actual.min(s.falsified) + 1e-12 {
                    return Err(format!("{} strict accuracy exceeds its components", hz.as_str()));
                }
            }
            if let Some(g) = h.cutoff_gap {
                in_unit("cutoff_gap", g)?;
            }
        }
        Ok(())
    }

    pub fn row(&self) -> ReportRow {
        let mut r = ReportRow {
            run_id: self.run_id.clone(),
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            method: self.method.clone(),
            n_input: self.n_input,
            n_quarantined: self.n_quarantined,
            ..ReportRow::default()
        };
        if let Some(f) = &self.framing {
            r.framing_n = Some(f.n);
            r.unclassified = Some(f.unclassified);
            r.phi_frame = Some(f.phi_frame);
        }
        if let Some(c) = &self.coverage {
            r.coverage_n = Some(c.n);
            r.mean_s_b = Some(c.mean_s_b);
            r.mean_s_m = Some(c.mean_s_m);
            r.mean_s_e = Some(c.mean_s_e);
            r.alpha = Some(c.alpha);
            r.psi_pri = Some(c.psi_pri);
            r.ext_beginning_dominance = Some(c.ext_beginning_dominance);
        }
        if let Some(h) = &self.hallucination {
            if let Some(s) = h.by_horizon.get(&Horizon::PreCutoff) {
                (r.pre_n, r.pre_actual, r.pre_falsified, r.pre_strict) =
                    (Some(s.n), Some(s.actual), Some(s.falsified), Some(s.strict));
            }
            if let Some(s) = h.by_horizon.get(&Horizon::PostCutoff) {
                (r.post_n, r.post_actual, r.post_falsified, r.post_strict) =
                    (Some(s.n), Some(s.actual), Some(s.falsified), Some(s.strict));
            }
            r.delta_h = h.cutoff_gap;
            r.failed_verdicts = Some(h.failed_verdicts);
        }
        r
    }

    pub fn to_csv(reports: &[AuditReport]) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in reports {
            w.serialize(r.row())?;
        }
        if reports.is_empty() {
            w.serialize(ReportRow::default())?;
            let s = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).unwrap();
            return Ok(s.lines().next().unwrap_or_default().to_string() + "\n");
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).unwrap())
    }

    pub fn from_csv(text: &str) -> Result<Vec<ReportRow>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
    }

    /// Markdown tables: summarization measures, framing transitions, and
    /// hallucination accuracies, each only when some report has them.
    pub fn to_markdown(reports: &[AuditReport]) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());

        if reports.iter().any(|r| r.framing.is_some() || r.coverage.is_some()) {
            s.push_str("## Summarization\n\n");
            s.push_str("| model | dataset | method | phi_frame | s_b | s_m | s_e | psi_pri | ext. beginning dominance | n | excluded |\n");
            s.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for r in reports.iter().filter(|r| r.framing.is_some() || r.coverage.is_some()) {
                let row = r.row();
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.model,
                    r.dataset,
                    r.method,
                    opt(row.phi_frame),
                    opt(row.mean_s_b),
                    opt(row.mean_s_m),
                    opt(row.mean_s_e),
                    opt(row.psi_pri),
                    opt(row.ext_beginning_dominance),
                    r.n_input,
                    r.n_quarantined + row.unclassified.unwrap_or(0),
                ));
            }
            s.push('\n');
        }

        for r in reports {
            if let Some(f) = &r.framing {
                s.push_str(&format!("### Framing transitions: {} / {} / {}\n\n", r.model, r.dataset, r.method));
                s.push_str("| context \\ summary | negative | neutral | positive |\n|---|---:|---:|---:|\n");
                for from in FramingLabel::ALL {
                    let cells: Vec<String> = FramingLabel::ALL
                        .iter()
                        .map(|to| {
                            if f.n == 0 {
                                "-".to_string()
                            } else {
                                pct(f.transitions.fraction(from, *to))
                            }
                        })
                        .collect();
                    s.push_str(&format!("| {} | {} |\n", from, cells.join(" | ")));
                }
                s.push('\n');
            }
        }

        if reports.iter().any(|r| r.hallucination.is_some()) {
            s.push_str("## Hallucination\n\n");
            s.push_str("| model | dataset | method | pre actual | pre falsified | pre strict | post actual | post falsified | post strict | delta_H | failed verdicts |\n");
            s.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for r in reports.iter().filter(|r| r.hallucination.is_some()) {
                let row = r.row();
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.model,
                    r.dataset,
                    r.method,
                    opt(row.pre_actual),
                    opt(row.pre_falsified),
                    opt(row.pre_strict),
                    opt(row.post_actual),
                    opt(row.post_falsified),
                    opt(row.post_strict),
                    opt(row.delta_h),
                    row.failed_verdicts.unwrap_or(0),
                ));
            }
            s.push('\n');
            for r in reports {
                if let Some(cells) = r.hallucination.as_ref().and_then(|h| h.confidence.as_ref()) {
                    s.push_str(&format!("### Confidence: {} / {} / {}\n\n", r.model, r.dataset, r.method));
                    s.push_str("| horizon | news | high | low | n |\n|---|---|---:|---:|---:|\n");
                    for c in cells {
                        s.push_str(&format!(
                            "| {} | {} | {} | {} | {} |\n",
                            c.horizon.as_str(),
                            match c.side {
                                Side::True => "actual",
                                Side::Falsified => "falsified",
                            },
                            pct(c.high_fraction()),
                            pct(c.low_fraction()),
                            c.high + c.low
                        ));
                    }
                    s.push('\n');
                }
            }
        }

        let empty: Vec<&AuditReport> = reports
            .iter()
            .filter(|r| r.framing.is_none() && r.coverage.is_none() && r.hallucination.is_none())
            .collect();
        if !empty.is_empty() {
            s.push_str("## Runs without results\n\n| model | dataset | method | n | excluded |\n|---|---|---|---:|---:|\n");
            for r in empty {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    r.model, r.dataset, r.method, r.n_input, r.n_quarantined
                ));
            }
            s.push('\n');
        }
        s
    }
}
