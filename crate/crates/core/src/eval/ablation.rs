//! Runs configuration cells over the synthetic suite and tabulates them.
//!
//! A matrix file holds shared `key = value` lines followed by one
//! `[name]` section per cell. Inside a section, `use = <named cell>`
//! applies a predefined cell (see [`RunConfig::named`]), `checkpoint =
//! <path>` names the pretrained network, and any other key overrides the
//! configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::eval::config::{parse_pairs, RunConfig};
use crate::eval::metrics::{evaluate, pooled, EvalResult};
use crate::eval::synth::{generate_sequence, suite, SuiteEntry, Tier};
use crate::network::Network;
use crate::tracker::{track_sequence, TrackRun};

/// The fixed suite with its frames rendered.
pub fn load_suite() -> Result<Vec<(SuiteEntry, Sequence)>> {
    suite()
        .into_iter()
        .map(|e| {
            let mut s = generate_sequence(&e.spec, e.seed)?;
            s.name = e.name.clone();
            Ok((e, s))
        })
        .collect()
}

/// Tracking seed for one suite sequence under a run seed.
pub fn sequence_seed(run_seed: u64, entry: &SuiteEntry) -> u64 {
    run_seed.wrapping_mul(1_000_003).wrapping_add(entry.seed)
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub name: String,
    pub tier: Tier,
    pub eval: EvalResult,
    pub run: TrackRun,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub name: String,
    pub hash: String,
    pub sequences: Vec<SequenceResult>,
    pub pooled: EvalResult,
}

impl CellResult {
    /// Mean per-sequence AUC.
    pub fn mean_auc(&self) -> f64 {
        self.sequences.iter().map(|s| s.eval.auc).sum::<f64>() / self.sequences.len() as f64
    }

    pub fn tier_mean_auc(&self, tier: Tier) -> f64 {
        let v: Vec<f64> = self
            .sequences
            .iter()
            .filter(|s| s.tier == tier)
            .map(|s| s.eval.auc)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Tracks every suite sequence with `network` under `config.tracker`.
pub fn run_cell(
    name: &str,
    config: &RunConfig,
    network: &Network,
    suite: &[(SuiteEntry, Sequence)],
    seed: u64,
) -> Result<CellResult> {
    if network.config != config.network {
        return Err(Error::Config(format!(
            "cell '{name}': checkpoint network does not match the configured network"
        )));
    }
    let mut sequences = Vec::with_capacity(suite.len());
    for (entry, seq) in suite {
        let run = track_sequence(
            network,
            seq,
            config.tracker.clone(),
            sequence_seed(seed, entry),
        )?;
        let eval = evaluate(&run.boxes(), &seq.groundtruth)?;
        sequences.push(SequenceResult {
            name: entry.name.clone(),
            tier: entry.tier,
            eval,
            run,
        });
    }
    let evals: Vec<EvalResult> = sequences.iter().map(|s| s.eval.clone()).collect();
    Ok(CellResult {
        name: name.to_string(),
        hash: config.hash(),
        pooled: pooled(&evals)?,
        sequences,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub config: RunConfig,
    pub checkpoint: Option<PathBuf>,
}

/// Parses a matrix file; relative checkpoint paths resolve against `dir`.
pub fn parse_matrix(text: &str, dir: &Path) -> Result<Vec<AblationCell>> {
    let mut shared = String::new();
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let t = line.split('#').next().unwrap_or("").trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            sections.push((name.trim().to_string(), String::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        } else {
            shared.push_str(line);
            shared.push('\n');
        }
    }
    if sections.is_empty() {
        return Err(Error::Config(
            "ablation matrix has no [cell] sections".into(),
        ));
    }
    let base = RunConfig::from_text(&shared)?;
    let mut cells = Vec::with_capacity(sections.len());
    for (name, body) in sections {
        if cells.iter().any(|c: &AblationCell| c.name == name) {
            return Err(Error::Config(format!("cell '{name}' appears twice")));
        }
        let mut config = base.clone();
        let mut checkpoint = None;
        let pairs = parse_pairs(&body)?;
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "use") {
            config = config.named(v)?;
        }
        for (k, v) in &pairs {
            match k.as_str() {
                "use" => {}
                "checkpoint" => checkpoint = Some(dir.join(v)),
                _ => config.set(k, v)?,
            }
        }
        config.validate()?;
        cells.push(AblationCell {
            name,
            config,
            checkpoint,
        });
    }
    Ok(cells)
}

/// Loads each cell's checkpoint and runs it over `suite`.
pub fn run_ablation(
    cells: &[AblationCell],
    suite: &[(SuiteEntry, Sequence)],
    seed: u64,
) -> Result<Vec<CellResult>> {
    cells
        .iter()
        .map(|cell| {
            let path = cell.checkpoint.as_ref().ok_or_else(|| {
                Error::Config(format!("cell '{}' names no checkpoint", cell.name))
            })?;
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "cell '{}': checkpoint {} does not exist",
                    cell.name,
                    path.display()
                )));
            }
            let network = Network::from_checkpoint(&Checkpoint::load(path)?)?;
            run_cell(&cell.name, &cell.config, &network, suite, seed)
        })
        .collect()
}

/// One row per cell: name, config hash prefix, mean AUC, pooled
/// precision@20 and per-tier mean AUC.
pub fn format_table(results: &[CellResult]) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{:<16} {:<12} {:>8} {:>8}",
        "cell", "config", "auc", "prec@20"
    );
    for t in Tier::ALL {
        let _ = write!(s, " {:>11}", t.name());
    }
    s.push('\n');
    for r in results {
        let _ = write!(
            s,
            "{:<16} {:<12} {:>8.4} {:>8.4}",
            r.name,
            &r.hash[..12],
            r.mean_auc(),
            r.pooled.precision_20
        );
        for t in Tier::ALL {
            let _ = write!(s, " {:>11.4}", r.tier_mean_auc(t));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_sections_and_named_cells() {
        let text = "preset = toy\ntracker.n_candidates = 64\n[a]\nuse = pooling\ncheckpoint = a.ckpt\n[b]\nuse = ours-bbr-iel\n";
        let cells = parse_matrix(text, Path::new("/tmp")).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(
            cells[0].checkpoint.as_deref(),
            Some(Path::new("/tmp/a.ckpt"))
        );
        assert_eq!(cells[0].config.tracker.n_candidates, 64);
        assert_eq!(cells[1].config.pretrain.alpha, 0.0);
        assert!(!cells[1].config.tracker.bbox_regression);
        assert!(parse_matrix("preset = toy\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_checkpoint_is_a_config_error() {
        let cells = parse_matrix(
            "preset = toy\n[x]\ncheckpoint = nope.ckpt\n[y]\n",
            Path::new("/nonexistent"),
        )
        .unwrap();
        for c in &cells {
            assert!(matches!(
                run_ablation(std::slice::from_ref(c), &[], 0),
                Err(Error::Config(_))
            ));
        }
    }
}
