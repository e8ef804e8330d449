use super::{population_std, train, HarnessError, MetricCurve, Strategy, TrainConfig};
use crate::gnn::GnnModel;
use crate::graph::Dataset;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub strategy: Strategy,
    pub seed: u64,
    /// Test metric after the last epoch.
    pub test_metric: f64,
    pub curve: MetricCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub trainable_params: usize,
    pub total_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<SeedRun>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,mean,std,trainable_params,total_params\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.strategy, r.mean, r.std, r.trainable_params, r.total_params)
                .expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// One `curve_{strategy}_seed{seed}.csv` per run.
    pub fn write_curves(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for run in &self.runs {
            run.curve
                .write_csv(&dir.join(format!("curve_{}_seed{}.csv", run.strategy, run.seed)))?;
        }
        Ok(())
    }
}

/// Trains each strategy from `backbone` with seeds `cfg.seed .. cfg.seed +
/// n_seeds`, runs in parallel. Rows keep the order of `strategies`.
pub fn compare_strategies(
    backbone: &GnnModel,
    ds: &Dataset,
    strategies: &[Strategy],
    cfg: &TrainConfig,
    n_seeds: usize,
) -> Result<Comparison, HarnessError> {
    if n_seeds == 0 {
        return Err(HarnessError::Config("need at least one seed".into()));
    }
    cfg.validate()?;
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| (0..n_seeds as u64).map(move |k| (s, cfg.seed + k)))
        .collect();
    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(strategy, seed)| {
            let model = strategy.prepare(backbone, seed)?;
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let out = train(&model, strategy, ds, &run_cfg)?;
            let test_metric = out.curve.last().map_or(f64::NAN, |r| r.test_metric);
            log::info!("{strategy} seed {seed}: test metric {test_metric:.4}");
            Ok(SeedRun {
                strategy,
                seed,
                test_metric,
                curve: out.curve,
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut rows = Vec::with_capacity(strategies.len());
    for (i, &strategy) in strategies.iter().enumerate() {
        let values: Vec<f64> = runs[i * n_seeds..(i + 1) * n_seeds].iter().map(|r| r.test_metric).collect();
        let model = strategy.prepare(backbone, cfg.seed)?;
        rows.push(ComparisonRow {
            strategy,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            std: population_std(&values),
            trainable_params: strategy.trainable_param_count(&model)?,
            total_params: strategy.total_param_count(&model),
        });
    }
    Ok(Comparison { rows, runs })
}
