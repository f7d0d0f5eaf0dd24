use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::HarnessError;
use crate::curriculum::{ScheduleKind, ScheduleParams};
use crate::training::{train_on, Dataset, RunConfig, TrainOptions, TrainOutcome, FINAL_WINDOW};

pub const GRID_HEADER: &str = "alpha,beta,seed,word_acc,char_acc,final_loss";
pub const GRID_FILE: &str = "grid.csv";
pub const SUMMARY_FILE: &str = "grid_summary.csv";

/// Cartesian α × β × seed grid of loss-aware runs around a base config.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: RunConfig,
}

/// Headline numbers of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub word_acc: f64,
    pub char_acc: f64,
    pub final_loss: f64,
}

impl RunSummary {
    pub fn of(outcome: &TrainOutcome) -> Self {
        let eval = outcome.final_eval.as_ref();
        Self {
            word_acc: eval.map_or(0.0, |e| e.overall.word_acc),
            char_acc: eval.map_or(0.0, |e| e.overall.char_acc),
            final_loss: outcome.tail_loss(FINAL_WINDOW),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub word_acc: f64,
    pub char_acc: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub alpha: f64,
    pub beta: f64,
    pub mean_word_acc: f64,
    pub std_word_acc: f64,
    pub mean_char_acc: f64,
    pub std_char_acc: f64,
    /// Mean word accuracy minus the baseline's, when a baseline was run.
    pub delta_vs_baseline: Option<f64>,
    pub argmax: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Injection-disabled runs, one per seed.
    pub baseline: Vec<(u64, RunSummary)>,
    pub cells: Vec<CellSummary>,
}

impl GridReport {
    pub fn argmax(&self) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.argmax)
    }

    pub fn baseline_word_acc(&self) -> Option<f64> {
        (!self.baseline.is_empty())
            .then(|| self.baseline.iter().map(|(_, s)| s.word_acc).sum::<f64>() / self.baseline.len() as f64)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-cell mean ± std (population) and the argmax by mean word accuracy;
/// ties go to the first cell in grid order.
pub fn summarize(rows: Vec<GridRow>, baseline: Vec<(u64, RunSummary)>) -> GridReport {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in &rows {
        if !keys.contains(&(r.alpha, r.beta)) {
            keys.push((r.alpha, r.beta));
        }
    }
    let base = (!baseline.is_empty())
        .then(|| baseline.iter().map(|(_, s)| s.word_acc).sum::<f64>() / baseline.len() as f64);
    let mut cells: Vec<CellSummary> = keys
        .into_iter()
        .map(|(alpha, beta)| {
            let cell: Vec<&GridRow> = rows.iter().filter(|r| r.alpha == alpha && r.beta == beta).collect();
            let (mw, sw) = mean_std(&cell.iter().map(|r| r.word_acc).collect::<Vec<_>>());
            let (mc, sc) = mean_std(&cell.iter().map(|r| r.char_acc).collect::<Vec<_>>());
            CellSummary {
                alpha,
                beta,
                mean_word_acc: mw,
                std_word_acc: sw,
                mean_char_acc: mc,
                std_char_acc: sc,
                delta_vs_baseline: base.map(|b| mw - b),
                argmax: false,
            }
        })
        .collect();
    if let Some(best) = (0..cells.len()).reduce(|a, b| if cells[b].mean_word_acc > cells[a].mean_word_acc { b } else { a }) {
        cells[best].argmax = true;
    }
    GridReport { rows, baseline, cells }
}

fn cell_dir(alpha: f64, beta: f64) -> String {
    format!("alpha{alpha}_beta{beta}")
}

/// Runs every grid cell (and, with `with_baseline`, one injection-disabled
/// run per seed) through `run`, which maps a run config to its summary.
pub fn ablate_with<F>(grid: &AblationGrid, with_baseline: bool, mut run: F) -> Result<GridReport, HarnessError>
where
    F: FnMut(&RunConfig) -> Result<RunSummary, HarnessError>,
{
    if grid.alphas.is_empty() || grid.betas.is_empty() || grid.seeds.is_empty() {
        return Err(HarnessError::Contract("ablation grid needs at least one alpha, beta and seed".into()));
    }
    let out = &grid.base.out_dir;
    let mut baseline = Vec::new();
    if with_baseline {
        for &seed in &grid.seeds {
            let cfg = RunConfig {
                schedule: ScheduleParams::of_kind(ScheduleKind::None),
                seed,
                model: crate::model::ModelConfig { seed, ..grid.base.model.clone() },
                out_dir: out.join("baseline").join(format!("seed{seed}")),
                ..grid.base.clone()
            };
            baseline.push((seed, run(&cfg)?));
        }
    }
    let mut rows = Vec::new();
    for &alpha in &grid.alphas {
        for &beta in &grid.betas {
            for &seed in &grid.seeds {
                let cfg = RunConfig {
                    schedule: ScheduleParams {
                        alpha,
                        beta,
                        ..ScheduleParams::of_kind(ScheduleKind::LossAware)
                    },
                    seed,
                    model: crate::model::ModelConfig { seed, ..grid.base.model.clone() },
                    out_dir: out.join(cell_dir(alpha, beta)).join(format!("seed{seed}")),
                    ..grid.base.clone()
                };
                let s = run(&cfg)?;
                rows.push(GridRow {
                    alpha,
                    beta,
                    seed,
                    word_acc: s.word_acc,
                    char_acc: s.char_acc,
                    final_loss: s.final_loss,
                });
            }
        }
    }
    Ok(summarize(rows, baseline))
}

/// Trains the whole grid on `data` and writes the grid and summary CSVs into
/// the base config's output directory.
pub fn ablate(grid: &AblationGrid, data: &Dataset, opts: TrainOptions, with_baseline: bool) -> Result<GridReport, HarnessError> {
    let report = ablate_with(grid, with_baseline, |cfg| Ok(RunSummary::of(&train_on(cfg, data, opts)?)))?;
    write_grid_csv(&grid.base.out_dir.join(GRID_FILE), &report.rows)?;
    write_summary_csv(&grid.base.out_dir.join(SUMMARY_FILE), &report)?;
    Ok(report)
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{GRID_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{},{}", r.alpha, r.beta, r.seed, r.word_acc, r.char_acc, r.final_loss)?;
    }
    f.flush()?;
    Ok(())
}

/// Per-cell summary. Cells are compared against the tier-averaged desk
/// corpus, an analogue of (not a substitute for) benchmark averages.
pub fn write_summary_csv(path: &Path, report: &GridReport) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "alpha,beta,mean_word_acc,std_word_acc,mean_char_acc,std_char_acc,delta_vs_baseline,argmax"
    )?;
    for c in &report.cells {
        let delta = c.delta_vs_baseline.map_or(String::new(), |d| d.to_string());
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            c.alpha, c.beta, c.mean_word_acc, c.std_word_acc, c.mean_char_acc, c.std_char_acc, delta, c.argmax
        )?;
    }
    if let Some(b) = report.baseline_word_acc() {
        writeln!(f, "baseline,,{b},,,,,")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn grid(alphas: Vec<f64>, betas: Vec<f64>, seeds: Vec<u64>) -> AblationGrid {
        let base = RunConfig::new(ModelConfig::default(), ScheduleParams::loss_aware(2.0, 0.1), Path::new("d"), Path::new("o"));
        AblationGrid { alphas, betas, seeds, base }
    }

    fn fake(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
        let acc = if cfg.schedule.injects() { cfg.schedule.alpha / 10.0 + cfg.schedule.beta + cfg.seed as f64 / 100.0 } else { 0.1 };
        Ok(RunSummary { word_acc: acc, char_acc: acc, final_loss: 1.0 })
    }

    #[test]
    fn every_cell_and_seed_runs_once() {
        let mut seen = Vec::new();
        let g = grid(vec![0.5, 2.0], vec![0.01, 0.1], vec![0, 1, 2]);
        let r = ablate_with(&g, true, |cfg| {
            seen.push(cfg.out_dir.clone());
            fake(cfg)
        })
        .unwrap();
        assert_eq!(r.rows.len(), 12);
        assert_eq!(r.baseline.len(), 3);
        let mut uniq = seen.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), seen.len());
        let best = r.argmax().unwrap();
        assert_eq!((best.alpha, best.beta), (2.0, 0.1));
        assert_eq!(r.cells.iter().filter(|c| c.argmax).count(), 1);
        assert!((best.delta_vs_baseline.unwrap() - (0.2 + 0.1 + 0.01 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn single_cell_grid() {
        let g = grid(vec![2.0], vec![0.1], vec![4]);
        let r = ablate_with(&g, false, fake).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.cells[0].argmax);
        assert_eq!(r.cells[0].std_word_acc, 0.0);
        assert!(ablate_with(&grid(vec![], vec![0.1], vec![0]), false, fake).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(GRID_FILE);
        let r = ablate_with(&grid(vec![0.5], vec![0.01], vec![0]), false, fake).unwrap();
        write_grid_csv(&p, &r.rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), GRID_HEADER);
        assert_eq!(text.lines().count(), 2);
    }
}
