//! Runs the desk configuration once and prints the suspect table.
//!
//! cargo run --release --example desk_run -- [seed]

use spectraprint::pipeline::{run_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let cfg = PipelineConfig { seed, ..PipelineConfig::desk() };
    let out = run_pipeline(&cfg)?;
    for s in &out.summary.suspects {
        println!("{:<18} {:<22} {:<7} {:.3}", s.id, format!("{:?}", s.expectation), format!("{:?}", s.verdict), s.fraction);
    }
    let m = &out.summary.core_metrics;
    println!("fresh models: TPR {:.3} TNR {:.3} BA {:.3}", m.tpr, m.tnr, m.ba);
    println!("total {:.1}s", out.timing.total_s);
    Ok(())
}
