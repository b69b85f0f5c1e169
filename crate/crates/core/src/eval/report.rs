//! Report assembly and emission: a machine-readable JSON document, an
//! aligned plain-text table, and a long-format CSV for external charting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::MetricResult;

/// Label of the equal-weight ensemble baseline.
pub const UNIFORM_MODEL: &str = "uniform";
/// Label of the agent-weighted ensemble.
pub const RL_MODEL: &str = "rl_ensemble";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRows {
    pub seed: u64,
    pub rows: Vec<MetricResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub farm_id: String,
    pub metric: String,
    pub rl_value: f64,
    pub uniform_value: f64,
    pub best_base_model: String,
    pub best_base_value: f64,
    pub vs_uniform_pct: f64,
    pub vs_best_base_pct: f64,
}

/// Mean weight the agent placed on each base model within one regime, plus
/// each base model's accuracy there. Present only for labeled corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeAttribution {
    pub seed: u64,
    pub slot: usize,
    pub regime_name: String,
    pub model_mean_weight: Vec<(String, f64)>,
    pub model_mae: Vec<(String, f64)>,
}

impl RegimeAttribution {
    /// The base model with the lowest MAE inside this regime.
    pub fn best_model(&self) -> Option<&str> {
        self.model_mae
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(m, _)| m.as_str())
    }

    pub fn weight_of(&self, model: &str) -> Option<f64> {
        self.model_mean_weight
            .iter()
            .find(|(m, _)| m == model)
            .map(|&(_, w)| w)
    }
}

/// The full outcome of one `run_experiment` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub fingerprint: String,
    pub master_seed: u64,
    pub metric_scale: String,
    pub repetitions: usize,
    pub models: Vec<String>,
    pub farms: Vec<String>,
    /// Per (model, farm) metrics averaged over the seeded repetitions.
    pub rows_mean: Vec<MetricResult>,
    /// Per-seed rows, retained for dispersion checks.
    pub per_seed: Vec<SeedRows>,
    pub improvements: Vec<ImprovementRow>,
    #[serde(default)]
    pub attribution: Vec<RegimeAttribution>,
}

impl ForecastReport {
    fn find<'a>(rows: &'a [MetricResult], model: &str, farm: &str) -> Option<&'a MetricResult> {
        rows.iter().find(|r| r.model == model && r.farm_id == farm)
    }

    /// Mean over farms of the per-farm metric, from the seed-averaged rows.
    pub fn overall(&self, model: &str, metric: &str) -> Result<f64> {
        let values: Vec<f64> = self
            .farms
            .iter()
            .filter_map(|farm| Self::find(&self.rows_mean, model, farm))
            .map(|r| match metric {
                "mae" => r.mae,
                _ => r.rmse,
            })
            .collect();
        if values.len() != self.farms.len() {
            return Err(Error::invalid(format!("model `{model}` missing from report")));
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Same, for one repetition.
    pub fn overall_for_seed(&self, seed: u64, model: &str, metric: &str) -> Result<f64> {
        let rows = &self
            .per_seed
            .iter()
            .find(|s| s.seed == seed)
            .ok_or_else(|| Error::invalid(format!("seed {seed} missing from report")))?
            .rows;
        let values: Vec<f64> = self
            .farms
            .iter()
            .filter_map(|farm| Self::find(rows, model, farm))
            .map(|r| match metric {
                "mae" => r.mae,
                _ => r.rmse,
            })
            .collect();
        if values.len() != self.farms.len() {
            return Err(Error::invalid(format!("model `{model}` missing from report")));
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report: {e}")))
    }

    /// Aligned text tables, one per metric: models down, farms across.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for metric in ["mae", "rmse"] {
            out.push_str(&format!(
                "{} on the test split ({} scale, mean over {} repetition(s))\n",
                metric.to_uppercase(),
                self.metric_scale,
                self.repetitions
            ));
            let name_width = self
                .models
                .iter()
                .map(String::len)
                .max()
                .unwrap_or(5)
                .max("model".len());
            let col = 12usize;
            out.push_str(&format!("{:<name_width$}", "model"));
            for farm in &self.farms {
                out.push_str(&format!(" {farm:>col$}"));
            }
            out.push('\n');
            for model in &self.models {
                out.push_str(&format!("{model:<name_width$}"));
                for farm in &self.farms {
                    let cell = Self::find(&self.rows_mean, model, farm)
                        .map(|r| {
                            let v = if metric == "mae" { r.mae } else { r.rmse };
                            format!("{v:.4}")
                        })
                        .unwrap_or_else(|| "-".into());
                    out.push_str(&format!(" {cell:>col$}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        if !self.improvements.is_empty() {
            out.push_str("improvement of the weighted ensemble\n");
            for row in &self.improvements {
                out.push_str(&format!(
                    "  {} [{}]: {:+.2}% vs uniform ({:.4}), {:+.2}% vs best base `{}` ({:.4})\n",
                    row.farm_id,
                    row.metric,
                    row.vs_uniform_pct,
                    row.uniform_value,
                    row.vs_best_base_pct,
                    row.best_base_model,
                    row.best_base_value,
                ));
            }
        }
        out
    }

    /// Long-format CSV: seed,model,farm_id,metric,value. The seed column
    /// carries `mean` for the seed-averaged rows.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("seed,model,farm_id,metric,value\n");
        let mut push_rows = |tag: &str, rows: &[MetricResult]| {
            for r in rows {
                out.push_str(&format!(
                    "{tag},{},{},mae,{:.12e}\n",
                    r.model, r.farm_id, r.mae
                ));
                out.push_str(&format!(
                    "{tag},{},{},rmse,{:.12e}\n",
                    r.model, r.farm_id, r.rmse
                ));
            }
        };
        for seed_rows in &self.per_seed {
            push_rows(&seed_rows.seed.to_string(), &seed_rows.rows);
        }
        push_rows("mean", &self.rows_mean);
        out
    }
}
