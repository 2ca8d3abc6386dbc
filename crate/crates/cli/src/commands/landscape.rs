use std::fs;

use upanets::landscape::{
    find_visualizable_range, make_directions, sample_grid, to_pgm, ModelObjective, DEFAULT_RANGE, DEFAULT_STEPS,
    COMPARISON_PRESET_RANGE,
};
use upanets::train::load_checkpoint;
use upanets::Result;

use crate::args::{LandscapeArgs, Preset};
use crate::common::{describe_model, describe_norm, load_data, Manifest};

/// Candidate half-widths tried by `--search-range`, largest first.
const SEARCH_CANDIDATES: [f64; 7] = [1.0, 0.5, 0.25, 0.1, 0.05, 0.0375, 0.01];

pub fn run(args: &LandscapeArgs) -> Result<()> {
    let mut m = Manifest::new(&args.out, "landscape")?;
    m.set("checkpoint", args.checkpoint.display());
    m.write()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = ckpt.model.config().clone();
    describe_model(&mut m, &cfg);
    describe_norm(&mut m, &ckpt.meta.norm);
    let data = load_data(&args.data, cfg.classes, args.seed, &mut m)?;
    let eval_set = if args.full_set {
        data.splits.test
    } else {
        data.splits.test.head(args.subset)
    };
    m.set("split", "test");
    m.set("eval_images", eval_set.len());
    m.set("direction_seed", args.seed);
    m.set("preset", args.preset.map_or("none", |_| "paper-comparison"));

    let (delta, eta) = make_directions(&ckpt.model.params, args.seed)?;
    let mut objective = ModelObjective::new(&ckpt.model, &eval_set, ckpt.meta.norm, args.batch_size);
    let (mut range, steps) = match args.preset {
        Some(Preset::PaperComparison) => (COMPARISON_PRESET_RANGE, DEFAULT_STEPS),
        None => (args.range.unwrap_or(DEFAULT_RANGE), args.steps.unwrap_or(DEFAULT_STEPS)),
    };
    if args.search_range {
        range = find_visualizable_range(&ckpt.model.params, &mut objective, &delta, &eta, &SEARCH_CANDIDATES)?;
        m.set("range_search", "probe5x5");
    }
    m.set("range", range);
    m.set("steps", steps);
    m.write()?;
    log::info!(
        "sampling a {steps}×{steps} grid over [-{range}, {range}]² on {} images",
        eval_set.len()
    );

    let grid = sample_grid(&ckpt.model.params, &mut objective, &delta, &eta, range, steps)?;
    fs::write(args.out.join("landscape.csv"), grid.to_csv()?)?;
    fs::write(args.out.join("loss.pgm"), to_pgm(&grid.scaled_loss()?, steps)?)?;
    fs::write(args.out.join("top1_error.pgm"), to_pgm(&grid.scaled_top1()?, steps)?)?;
    m.set("nonfinite_cells", grid.nonfinite_count);
    m.write()?;
    let finite = grid.loss.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    println!(
        "{}×{} grid over [-{range}, {range}]²: loss in [{lo:.4}, {hi:.4}], {} non-finite cells",
        steps, steps, grid.nonfinite_count
    );
    Ok(())
}
