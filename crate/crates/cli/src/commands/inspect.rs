use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upanets::arch::Mode;
use upanets::dataio::{normalize, CHANNELS, SIDE};
use upanets::tensor::{Graph, Tensor};
use upanets::train::load_checkpoint;
use upanets::{Error, Result};

use crate::args::{InspectArgs, Source};
use crate::common::{describe_model, load_data, Manifest};

/// Feature groups written per channel, in file-name order.
pub const GROUPS: [&str; 3] = ["conv", "cpa", "sum"];

/// Binary 8-bit graymap of one channel, min-max scaled; a constant map is black.
fn channel_pgm(plane: &[f32], h: usize, w: usize) -> Vec<u8> {
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| {
        if span > 0.0 && span.is_finite() {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn run(args: &InspectArgs) -> Result<()> {
    let mut m = Manifest::new(&args.out, "inspect")?;
    m.set("checkpoint", args.checkpoint.display());
    m.write()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = ckpt.model.config().clone();
    describe_model(&mut m, &cfg);
    m.set("tap", &args.tap);
    m.set("count", args.count);
    m.set("seed", args.seed);

    let block = ckpt.model.net.find_block(&args.tap).ok_or_else(|| {
        Error::Config(format!(
            "unknown tap {:?}; valid taps: {}",
            args.tap,
            ckpt.model.net.block_paths().join(", ")
        ))
    })?;
    if !block.cfg.use_cpa {
        return Err(Error::Config(format!("tap {} has no CPA path to compare", args.tap)));
    }
    if args.count == 0 || args.count > block.cfg.out_channels {
        return Err(Error::Config(format!(
            "--count must be in 1..={} for {}",
            block.cfg.out_channels, args.tap
        )));
    }

    let side = cfg.image_size;
    let x = match args.source {
        Source::Noise => {
            m.set("source", "noise");
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            Tensor::randn(vec![1, CHANNELS, side, side], 1.0, &mut rng)
        }
        Source::Image => {
            m.set("source", "image");
            m.set("image_index", args.image_index);
            let data = load_data(&args.data, cfg.classes, args.seed, &mut m)?;
            let test = &data.splits.test;
            if args.image_index >= test.len() {
                return Err(Error::Config(format!(
                    "--image-index {} outside the {} test images",
                    args.image_index,
                    test.len()
                )));
            }
            let img = normalize(test.image(args.image_index), &ckpt.meta.norm);
            Tensor::new(vec![1, CHANNELS, SIDE, SIDE], img)?
        }
    };
    m.write()?;

    let graph = Graph::with_finite_checks(false);
    let xv = graph.constant(x);
    let pass = ckpt.model.forward(&graph, xv, Mode::Eval, false)?;
    let mut written = 0;
    for group in GROUPS {
        let name = format!("{}.{group}", args.tap);
        let var = pass
            .trace
            .iter()
            .rev()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::State(format!("forward pass recorded no {name}")))?;
        let t = graph.value(var);
        let (_, _, h, w) = t.dims4("inspect")?;
        for (c, plane) in t.data().chunks_exact(h * w).take(args.count).enumerate() {
            fs::write(args.out.join(format!("{group}_{c:03}.pgm")), channel_pgm(plane, h, w))?;
            written += 1;
        }
    }
    m.set("images", written);
    m.write()?;
    println!("wrote {written} feature maps of {} to {}", args.tap, args.out.display());
    Ok(())
}
