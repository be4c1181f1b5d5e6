//! Estimation report rendering: plain text, flat key-value, and the
//! first-stage instrument table.
//!
//! The key-value format has one `key=value` pair per line, keys in a fixed
//! order, floats in shortest round-trip form:
//!
//! ```text
//! schema=plantiv.report.v1
//! estimator=iv_lasso
//! subsample=all
//! fixed_effects=county+year
//! n=1200
//! n_clusters=40
//! n_candidates=112
//! dropped_instruments=<comma-separated>
//! coef.<name>.estimate=...        (also std_error, t_stat, p_value, ci_low, ci_high)
//! first_stage.<endog>.n_selected=...
//! first_stage.<endog>.selected=<comma-separated>
//! first_stage.<endog>.own_selection=<comma-separated>
//! first_stage.<endog>.f_stat=...   (plus f_stat_kind, r2, adj_r2, n)
//! first_stage.<endog>.coef.<instrument>=...
//! first_stage.<endog>.se.<instrument>=...
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::estimator::iv::{Coefficient, EstimatorKind, FirstStageResult, IvEstimate, PanelDesign};

pub const REPORT_SCHEMA: &str = "plantiv.report.v1";

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub estimator: EstimatorKind,
    pub subsample: String,
    pub fixed_effects: String,
    pub n: usize,
    pub n_clusters: usize,
    pub n_candidates: usize,
    pub dropped_instruments: Vec<String>,
    pub first_stage: Vec<FirstStageResult>,
    pub coefficients: Vec<Coefficient>,
}

impl EstimationReport {
    pub fn new(estimate: &IvEstimate, design: &PanelDesign, subsample: &str) -> Self {
        Self {
            estimator: estimate.estimator,
            subsample: subsample.to_string(),
            fixed_effects: design.fe_label.clone(),
            n: estimate.n,
            n_clusters: estimate.n_clusters,
            n_candidates: estimate.n_candidates,
            dropped_instruments: design.dropped_instruments.clone(),
            first_stage: estimate.first_stage.clone(),
            coefficients: estimate.coefficients.clone(),
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("schema", REPORT_SCHEMA.into());
        kv("estimator", self.estimator.name().into());
        kv("subsample", self.subsample.clone());
        kv("fixed_effects", self.fixed_effects.clone());
        kv("n", self.n.to_string());
        kv("n_clusters", self.n_clusters.to_string());
        kv("n_candidates", self.n_candidates.to_string());
        kv("dropped_instruments", self.dropped_instruments.join(","));
        for c in &self.coefficients {
            kv(&format!("coef.{}.estimate", c.name), c.estimate.to_string());
            kv(
                &format!("coef.{}.std_error", c.name),
                c.std_error.to_string(),
            );
            kv(&format!("coef.{}.t_stat", c.name), c.t_stat.to_string());
            kv(&format!("coef.{}.p_value", c.name), c.p_value.to_string());
            kv(&format!("coef.{}.ci_low", c.name), c.ci_low.to_string());
            kv(&format!("coef.{}.ci_high", c.name), c.ci_high.to_string());
        }
        for fs in &self.first_stage {
            let p = format!("first_stage.{}", fs.endogenous_name);
            kv(
                &format!("{p}.n_selected"),
                fs.selected_instruments.len().to_string(),
            );
            kv(&format!("{p}.selected"), fs.selected_instruments.join(","));
            kv(&format!("{p}.own_selection"), fs.own_selection.join(","));
            kv(&format!("{p}.f_stat"), fs.f_stat_excluded.to_string());
            kv(&format!("{p}.f_stat_kind"), fs.f_stat_kind.name().into());
            kv(&format!("{p}.r2"), fs.r2.to_string());
            kv(&format!("{p}.adj_r2"), fs.adj_r2.to_string());
            kv(&format!("{p}.n"), fs.n.to_string());
            for name in &fs.selected_instruments {
                kv(
                    &format!("{p}.coef.{name}"),
                    fs.coefficients[name].to_string(),
                );
                kv(&format!("{p}.se.{name}"), fs.std_errors[name].to_string());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Estimator: {}", self.estimator);
        let _ = writeln!(out, "Subsample: {}", self.subsample);
        let _ = writeln!(out, "Fixed effects: {}", self.fixed_effects);
        let _ = writeln!(
            out,
            "Observations: {}   Clusters (province): {}   Candidate instruments: {}",
            self.n, self.n_clusters, self.n_candidates
        );
        if !self.dropped_instruments.is_empty() {
            let _ = writeln!(
                out,
                "Dropped (no within variation): {}",
                self.dropped_instruments.len()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>14} {:>9} {:>9}",
            "variable", "estimate", "cluster se", "t", "p"
        );
        for c in &self.coefficients {
            let _ = writeln!(
                out,
                "{:<28} {:>14.6e} {:>14.6e} {:>9.3} {:>9.4}{}",
                c.name,
                c.estimate,
                c.std_error,
                c.t_stat,
                c.p_value,
                stars(c.p_value)
            );
        }
        for fs in &self.first_stage {
            let _ = writeln!(out);
            let _ = writeln!(out, "First stage: {}", fs.endogenous_name);
            let _ = writeln!(out, "  instruments: {}", fs.selected_instruments.len());
            let _ = writeln!(
                out,
                "  F-stat ({}): {:.3}",
                fs.f_stat_kind.name(),
                fs.f_stat_excluded
            );
            let _ = writeln!(
                out,
                "  R-squared: {:.4}   adjusted: {:.4}",
                fs.r2, fs.adj_r2
            );
        }
        out
    }

    /// First-stage table with one column per endogenous variable. Each
    /// instrument contributes a `coef` row and an `se` row; cells are empty
    /// where the instrument is not in that first stage.
    pub fn first_stage_table(&self) -> String {
        let mut out = String::from("row,stat");
        for fs in &self.first_stage {
            out.push(',');
            out.push_str(&fs.endogenous_name);
        }
        out.push('\n');
        let mut order: Vec<&String> = Vec::new();
        let mut seen = BTreeSet::new();
        for fs in &self.first_stage {
            for name in &fs.selected_instruments {
                if seen.insert(name) {
                    order.push(name);
                }
            }
        }
        for name in order {
            for (stat, pick) in [("coef", 0), ("se", 1)] {
                out.push_str(&format!("{name},{stat}"));
                for fs in &self.first_stage {
                    out.push(',');
                    let map = if pick == 0 {
                        &fs.coefficients
                    } else {
                        &fs.std_errors
                    };
                    if let Some(v) = map.get(name) {
                        out.push_str(&v.to_string());
                    }
                }
                out.push('\n');
            }
        }
        let footer: [(&str, Box<dyn Fn(&FirstStageResult) -> String>); 5] = [
            (
                "instruments_selected",
                Box::new(|f| f.selected_instruments.len().to_string()),
            ),
            ("sample_size", Box::new(|f| f.n.to_string())),
            ("r_squared", Box::new(|f| f.r2.to_string())),
            ("adj_r_squared", Box::new(|f| f.adj_r2.to_string())),
            ("f_stat", Box::new(|f| f.f_stat_excluded.to_string())),
        ];
        for (label, get) in footer.iter() {
            out.push_str(&format!("{label},value"));
            for fs in &self.first_stage {
                out.push(',');
                out.push_str(&get(fs));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "fixed_effects,value{}\n",
            format!(",{}", self.fixed_effects).repeat(self.first_stage.len())
        ));
        out
    }
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
