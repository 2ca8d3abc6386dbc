use std::fs;

use upanets::arch::Model;
use upanets::dataio::AugmentSpec;
use upanets::train::{efficiency, history_csv, save_checkpoint, train, CheckpointMeta, EpochRecord, TrainConfig};
use upanets::Result;

use crate::args::TrainArgs;
use crate::common::{describe_model, describe_norm, load_data, model_config, Manifest};

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut m = Manifest::new(&args.out, "train")?;
    let cfg = model_config(&args.model)?;
    describe_model(&mut m, &cfg);
    m.set("seed", args.seed);
    m.write()?;
    let data = load_data(&args.data, cfg.classes, args.seed, &mut m)?;

    let augment = if args.no_augment {
        AugmentSpec {
            norm: data.norm,
            ..AugmentSpec::identity()
        }
    } else {
        AugmentSpec::standard(data.norm)
    };
    let tc = TrainConfig {
        lr0: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        augment,
    };
    tc.validate()?;
    let mut model = Model::<f32>::new(cfg, args.seed)?;
    let params = model.param_count();
    m.set("params", params);
    m.set("params_millions", format!("{:.3}", params as f64 / 1e6));
    m.set("epochs", tc.epochs);
    m.set("batch_size", tc.batch_size);
    m.set("lr0", tc.lr0);
    m.set("momentum", tc.momentum);
    m.set("weight_decay", tc.weight_decay);
    m.set("schedule", "cosine_half_cycle_per_step");
    m.set("augment_pad", tc.augment.pad);
    m.set("augment_hflip_prob", tc.augment.hflip_prob);
    describe_norm(&mut m, &data.norm);
    m.write()?;
    log::info!("training {} parameters on {} images", params, data.splits.train.len());

    let best_path = args.out.join("best.upac");
    let history_path = args.out.join("history.csv");
    let init_meta = CheckpointMeta {
        epoch: 0,
        best_top1: 0.0,
        norm: data.norm,
    };
    // A zero-epoch run still leaves a loadable checkpoint of the initialization.
    save_checkpoint(&best_path, &model, &init_meta)?;
    fs::write(&history_path, history_csv(&[]))?;

    let mut history: Vec<EpochRecord> = Vec::new();
    let outcome = train(&mut model, &data.splits, &tc, |record, best| {
        history.push(*record);
        fs::write(&history_path, history_csv(&history))?;
        if let Some(best) = best {
            save_checkpoint(&best_path, &best.model, &best.meta)?;
        }
        println!(
            "epoch {:>3}  loss {:.4}  train {:6.2}%  test {:6.2}%  lr {:.5}",
            record.epoch,
            record.train_loss,
            100.0 * record.train_top1,
            100.0 * record.test_top1,
            record.lr
        );
        Ok(())
    })?;
    let last_epoch = outcome.history.last().map_or(0, |r| r.epoch);
    save_checkpoint(
        &args.out.join("final.upac"),
        &model,
        &CheckpointMeta {
            epoch: last_epoch,
            ..outcome.best.as_ref().map_or(init_meta, |b| b.meta)
        },
    )?;

    let best_top1 = outcome.best.as_ref().map_or(0.0, |b| b.meta.best_top1);
    let report = efficiency(100.0 * best_top1, params as f64 / 1e6)?;
    let text = format!(
        "accuracy_percent={}\nparams_millions={}\nefficiency={}\n",
        report.accuracy_percent, report.params_millions, report.efficiency
    );
    fs::write(args.out.join("efficiency.txt"), &text)?;
    m.set("best_epoch", outcome.best.as_ref().map_or(0, |b| b.meta.epoch));
    m.set("best_test_top1", best_top1);
    m.set("efficiency", report.efficiency);
    m.write()?;
    println!(
        "best test accuracy {:.2}% with {:.3}M parameters: efficiency {:.2}",
        report.accuracy_percent, report.params_millions, report.efficiency
    );
    Ok(())
}
