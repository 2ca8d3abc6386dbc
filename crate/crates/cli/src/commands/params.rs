use std::fs;

use upanets::arch::{render_summary, Model};
use upanets::train::efficiency;
use upanets::Result;

use crate::args::ParamsArgs;
use crate::common::{describe_model, model_config, Manifest};

pub fn run(args: &ParamsArgs) -> Result<()> {
    let mut m = Manifest::new(&args.out, "params")?;
    let cfg = model_config(&args.model)?;
    describe_model(&mut m, &cfg);
    let model = Model::<f32>::new(cfg, 0)?;
    let table = render_summary(&model.summary(1));
    let total = model.param_count();
    let millions = args.size.unwrap_or(total as f64 / 1e6);
    m.set("params", total);
    m.set("params_millions", format!("{:.3}", total as f64 / 1e6));
    print!("{table}");
    fs::write(args.out.join("summary.txt"), &table)?;
    println!("parameters: {total} ({:.3}M)", total as f64 / 1e6);
    if let Some(acc) = args.accuracy {
        let report = efficiency(acc, millions)?;
        m.set("accuracy_percent", acc);
        m.set("size_millions", millions);
        m.set("efficiency", report.efficiency);
        println!(
            "efficiency: {:.2}% / {}M = {:.2}",
            report.accuracy_percent, report.params_millions, report.efficiency
        );
    }
    m.write()?;
    Ok(())
}
