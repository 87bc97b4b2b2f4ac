//! Trains all three models on a default-size synthetic dataset and prints
//! the comparison table.
//!
//! cargo run --release --example benchmark -- [seed] [epochs]

use std::time::Instant;

use caltv::dataset::{generate_synthetic, GeneratorConfig};
use caltv::evaluation::{render_comparison, EvalConfig};
use caltv::labeling::{label_samples, LabelConfig};
use caltv::model::ModelKind;
use caltv::pipeline::{evaluate_model, train_model, ModelConfig, ProtocolConfig};
use caltv::train::{FinetuneConfig, TrainConfig};

fn main() -> caltv::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.get(2).map_or(10, |s| s.parse().expect("epochs"));
    let start = Instant::now();
    let mut ds = generate_synthetic(&GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    })?;
    label_samples(
        &mut ds.samples,
        &LabelConfig::new(24.0, ds.catalog.clone())?,
    );
    eprintln!("generated in {:.1?}", start.elapsed());
    let eval = EvalConfig::default();
    let mut rows = Vec::new();
    for kind in ModelKind::ALL {
        let t = Instant::now();
        let train = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let trained = train_model(
            kind,
            &ds,
            &ModelConfig::default(),
            &train,
            &ProtocolConfig::default(),
        )?;
        let ev = evaluate_model(
            &trained.model,
            &trained.params,
            &ds,
            &train,
            &FinetuneConfig::default(),
            &ProtocolConfig::default(),
            &eval,
        )?;
        eprintln!(
            "{kind}: {:.1?}, loss {:.4} -> {:.4}, mean daily AULC {:?}",
            t.elapsed(),
            trained.log.initial_loss,
            trained.log.final_loss,
            ev.report.mean_daily_aulc
        );
        rows.push((kind.to_string(), ev.report.pooled));
    }
    print!("{}", render_comparison(&rows, eval.top_fraction));
    eprintln!("total {:.1?}", start.elapsed());
    Ok(())
}
