//! The three cross-entropy surrogate targets on thresholded data.

use spatial_adapter::experiment::run_ablation_seed;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.ablation.dgp = DgpConfig { n_sites: 32, n_times: 120, binary: true, ..DgpConfig::default() };
    cfg.ablation.max_iters = 60;

    for variant in [BceVariant::A, BceVariant::B, BceVariant::C] {
        let run = run_ablation_seed(&cfg, 5, variant)?;
        println!(
            "{variant:?}: acc {:.3} f1 {:.3} auc {:.3} ece {:.3} off-basis {:.2e}",
            run.accuracy,
            run.f1,
            run.auc.unwrap_or(f64::NAN),
            run.ece,
            run.off_basis_ratio
        );
    }
    Ok(())
}
