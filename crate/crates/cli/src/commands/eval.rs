use upanets::train::{evaluate, load_checkpoint};
use upanets::Result;

use crate::args::EvalArgs;
use crate::common::{describe_model, describe_norm, load_data, Manifest};

pub fn run(args: &EvalArgs) -> Result<()> {
    let mut m = Manifest::new(&args.out, "eval")?;
    m.set("checkpoint", args.checkpoint.display());
    m.write()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = ckpt.model.config().clone();
    describe_model(&mut m, &cfg);
    describe_norm(&mut m, &ckpt.meta.norm);
    m.set("checkpoint_epoch", ckpt.meta.epoch);
    m.set("batch_size", args.batch_size);
    let data = load_data(&args.data, cfg.classes, args.seed, &mut m)?;
    m.write()?;

    let report = evaluate(&ckpt.model, &data.splits.test, &ckpt.meta.norm, args.batch_size)?;
    m.set("test_top1", report.top1);
    m.set("test_loss", report.loss);
    m.write()?;
    println!(
        "test accuracy {:.2}% ({} images), loss {:.4}",
        100.0 * report.top1,
        report.count,
        report.loss
    );
    Ok(())
}
