use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brunet::arch::{
    block_param_counts, build_block, build_network, count_parameters, node_receptive_field, receptive_field,
    unet_simplified_bound, Arch, BlockKind, Init, NetConfig,
};
use brunet::data::{
    generate_dataset, is_convex, list_samples, pad_sample, pad_to_square, read_sample, sample_file_name, split_folds,
    unpad, write_pgm, write_sample, Sample, NUM_CLASSES, NUM_LAYERS,
};
use brunet::gradcheck::suite::{network_cases, op_cases, TOLERANCE};
use brunet::metrics::{compare as compare_scores, evaluate, parse_scores_csv};
use brunet::train::{predict, pretrain_autoencoder, quantize, train as run_training, Checkpoint, Target};
use brunet::Scalar;

use crate::config::RunConfig;

/// Relative tolerance of the parameter-count claims.
const CLAIM_TOLERANCE: f64 = 0.20;
/// Graymap intensity per class.
const LABEL_SCALE: u8 = 36;

struct Row {
    section: &'static str,
    item: String,
    value: String,
    target: String,
    status: &'static str,
}

impl Row {
    fn info(section: &'static str, item: impl Into<String>, value: impl ToString) -> Self {
        Row { section, item: item.into(), value: value.to_string(), target: String::new(), status: "" }
    }

    fn claim(item: impl Into<String>, value: impl ToString, target: impl ToString, pass: bool) -> Self {
        Row {
            section: "claim",
            item: item.into(),
            value: value.to_string(),
            target: target.to_string(),
            status: if pass { "PASS" } else { "FAIL" },
        }
    }
}

fn full_scale_count(arch: Arch, depth: usize, cap: Option<usize>) -> Result<usize> {
    let mut c = NetConfig::full_scale(arch, depth);
    if let Some(cap) = cap {
        c.filter_cap = cap;
    }
    Ok(build_network::<f32>(&c, Init::Zeros)?.parameter_count())
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let base = cfg.net_config()?;
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for arch in [Arch::BruNet, Arch::UNet] {
        let c = NetConfig { arch, ..base.clone() };
        for (l, f) in c.level_filters().iter().enumerate() {
            rows.push(Row::info("filters", format!("{arch}.level{l}"), f));
        }
        let net = build_network::<f32>(&c, Init::Zeros)?;
        for (group, n) in block_param_counts(&net.graph) {
            rows.push(Row::info("params", format!("{arch}.{group}"), n));
        }
        let total = count_parameters(&net.graph);
        totals.push(total);
        rows.push(Row::info("params", format!("{arch}.total"), total));
        let rf = receptive_field(&c)?;
        rows.push(Row::info("receptive_field", format!("{arch}.deepest"), rf.deepest));
        rows.push(Row::info("receptive_field", format!("{arch}.output"), rf.output));
    }
    rows.push(Row::info("params", "unet/brunet", format!("{:.3}", totals[1] as f64 / totals[0] as f64)));

    let within = |v: usize, t: f64| (v as f64 - t).abs() <= CLAIM_TOLERANCE * t;
    let mut full = std::collections::HashMap::new();
    for (arch, depth, target) in
        [(Arch::BruNet, 5, 21e6), (Arch::BruNet, 6, 55e6), (Arch::UNet, 5, 44e6), (Arch::UNet, 6, 176e6)]
    {
        let n = full_scale_count(arch, depth, None)?;
        full.insert((arch, depth), n);
        rows.push(Row::claim(format!("{arch}.depth{depth}.total"), n, target, within(n, target)));
    }
    for (depth, target) in [(5, 2.0), (6, 3.0)] {
        let ratio = full[&(Arch::UNet, depth)] as f64 / full[&(Arch::BruNet, depth)] as f64;
        rows.push(Row::claim(
            format!("unet/brunet.depth{depth}"),
            format!("{ratio:.3}"),
            format!(">={target}"),
            ratio >= target,
        ));
    }
    let bound = unet_simplified_bound(5);
    rows.push(Row::claim("unet.simplified_bound.depth5", bound, 96, bound == 96));
    let block = build_block::<f32>(BlockKind::Down, 1, base.base_filters, &base.dilations, Init::Zeros)?;
    let pre_pool = node_receptive_field(&block, "block.relu")?;
    rows.push(Row::claim("brunet.block_d.pre_pool_field", pre_pool, 11, pre_pool == 11));
    let uncapped = full_scale_count(Arch::BruNet, 6, Some(usize::MAX))?;
    rows.push(Row::info("claim", "brunet.depth6.total_uncapped", uncapped));

    let mut w = csv::Writer::from_path(cfg.output.dir.join("analyze.csv"))?;
    w.write_record(["section", "item", "value", "target", "status"])?;
    for r in &rows {
        println!("{:<16} {:<36} {:>14} {:>12} {}", r.section, r.item, r.value, r.target, r.status);
        w.write_record([r.section, &r.item, &r.value, &r.target, r.status])?;
    }
    w.flush()?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let params = cfg.gen_params();
    let samples = generate_dataset(&params, cfg.data.patients, cfg.data.samples_per_patient)?;
    let dir = &cfg.output.dir;
    let mut index = vec![0usize; cfg.data.patients as usize];
    let mut counts = [0usize; NUM_CLASSES];
    for s in &samples {
        let i = &mut index[s.patient as usize];
        write_sample(&dir.join(sample_file_name(s.patient, *i)), s)
            .with_context(|| format!("writing into {}", dir.display()))?;
        *i += 1;
        for (c, n) in counts.iter_mut().zip(s.class_histogram()) {
            *c += n;
        }
    }
    let total: usize = counts.iter().sum();
    println!(
        "{} samples ({} patients x {}) in {}",
        samples.len(),
        cfg.data.patients,
        cfg.data.samples_per_patient,
        dir.display()
    );
    println!("class  pixels  fraction");
    for (c, n) in counts.iter().enumerate() {
        println!("{c:>5}  {n:>8}  {:.4}", *n as f64 / total as f64);
    }
    if params.drusen_count == 0 {
        let convex = samples.iter().filter(|s| is_convex(s, 1.0)).count();
        println!("convex boundaries: {convex}/{}", samples.len());
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let files = list_samples(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    if files.is_empty() {
        bail!("no sample files in {} (run gen-data first)", dir.display());
    }
    files.iter().map(|f| read_sample(f).with_context(|| format!("reading {}", f.display()))).collect()
}

fn square(samples: &[Sample], size: usize) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| if s.height == size && s.width == size { Ok(s.clone()) } else { Ok(pad_sample(s, size)?) })
        .collect()
}

pub fn train<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let net_cfg = cfg.net_config()?;
    let tc = cfg.train_config();
    let samples = square(&load_dataset(&cfg.data.dir)?, net_cfg.input_size)?;
    let folds = split_folds(&samples, cfg.folds.k, tc.val_fraction)?;
    let fold = &folds[cfg.folds.fold];
    let (tr, va, _) = fold.select(&samples);
    println!(
        "{} (depth {}, {} parameters), fold {}: train patients {:?}, val {:?}, test {:?}",
        net_cfg.arch,
        net_cfg.depth,
        build_network::<f32>(&net_cfg, Init::Zeros)?.parameter_count(),
        cfg.folds.fold,
        fold.train,
        fold.val,
        fold.test
    );
    let start = Instant::now();
    let (mut net, pre) = pretrain_autoencoder::<T>(&net_cfg, Init::Seeded(cfg.seed), &tr, &va, &tc)?;
    if let Some(pre) = pre {
        std::fs::write(cfg.output.dir.join("pretrain_history.csv"), pre.history_csv())?;
        println!("pretraining: {} epochs, best reconstruction loss {:.6}", pre.history.len(), pre.best_val);
    }
    let out = run_training(&mut net, &tr, &va, Target::Labels, &tc)?;
    let s = &out.summary;
    std::fs::write(cfg.output.dir.join("history.csv"), s.history_csv())?;
    out.checkpoint(&net).save(&cfg.output.dir.join("checkpoint.bin"))?;
    println!(
        "{} epochs{}, best validation loss {:.6} at epoch {}, final lr {:e}, {:.1}s",
        s.history.len(),
        if s.stopped_early { " (early stop)" } else { "" },
        s.best_val,
        s.best_epoch,
        s.final_lr,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn side_by_side(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * h * w);
    for r in 0..h {
        out.extend(pred[r * w..(r + 1) * w].iter().map(|&v| v * LABEL_SCALE));
        out.extend(gt[r * w..(r + 1) * w].iter().map(|&v| v * LABEL_SCALE));
    }
    out
}

pub fn eval<T: Scalar>(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let net_cfg = cfg.net_config()?;
    let samples = load_dataset(&cfg.data.dir)?;
    let folds = split_folds(&samples, cfg.folds.k, cfg.train.val_fraction)?;
    let (_, _, test) = folds[cfg.folds.fold].select(&samples);
    let preds: Vec<Vec<u8>> = match checkpoint {
        None => test.iter().map(|s| s.labels.clone()).collect(),
        Some(path) => {
            let mut net = build_network::<T>(&net_cfg, Init::Zeros)?;
            Checkpoint::load(path)
                .with_context(|| format!("loading {}", path.display()))?
                .apply(&mut net.graph.params)
                .with_context(|| format!("checkpoint {} does not fit the configured network", path.display()))?;
            let size = net_cfg.input_size;
            let owned = square(&test.iter().map(|&s| s.clone()).collect::<Vec<_>>(), size)?;
            let refs: Vec<&Sample> = owned.iter().collect();
            let raw = predict(&mut net, &refs, cfg.train.batch_size)?;
            raw.iter()
                .zip(&test)
                .map(|(p, s)| {
                    let q = quantize(p);
                    let (_, offset) = pad_to_square(&s.labels, s.height, s.width, size)?;
                    Ok(unpad(&q, size, offset, s.height, s.width))
                })
                .collect::<Result<_>>()?
        }
    };
    let report = evaluate(&preds, &test)?;
    let dir = &cfg.output.dir;
    std::fs::write(dir.join("report.csv"), report.to_csv())?;
    std::fs::write(dir.join("scores.csv"), report.scores_csv())?;
    let pgm = dir.join("pgm");
    std::fs::create_dir_all(&pgm)?;
    let mut index = std::collections::HashMap::new();
    for (p, s) in preds.iter().zip(&test) {
        let i = index.entry(s.patient).or_insert(0usize);
        write_pgm(
            &pgm.join(format!("p{:03}_s{:03}.pgm", s.patient, i)),
            s.height,
            2 * s.width,
            &side_by_side(p, &s.labels, s.height, s.width),
        )?;
        *i += 1;
    }
    println!("{} test samples from {} patients", test.len(), report.patients.len());
    println!("layer  dice            chamfer");
    for (k, l) in report.layers.iter().enumerate() {
        println!(
            "{:>5}  {:.4} +- {:.4}  {:.3} +- {:.3}",
            k + 1,
            l.dice.mean,
            l.dice.std,
            l.chamfer.mean,
            l.chamfer.std
        );
    }
    debug_assert_eq!(report.layers.len(), NUM_LAYERS);
    println!("mean_dice={:.6}", report.mean_dice());
    println!("mean_chamfer={:.6}", report.mean_chamfer());
    Ok(())
}

pub fn compare(cfg: &RunConfig, a: &Path, b: &Path, label: &str) -> Result<()> {
    let read = |p: &Path| -> Result<_> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_scores_csv(&text).with_context(|| format!("parsing {}", p.display()))?)
    };
    let c = compare_scores(&read(a)?, &read(b)?)?;
    let table = c.table(label);
    print!("{table}");
    std::fs::write(cfg.output.dir.join("compare.txt"), table)?;
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, ops_only: bool) -> Result<()> {
    let mut cases = op_cases()?;
    if !ops_only {
        cases.extend(network_cases()?);
    }
    let mut w = csv::Writer::from_path(cfg.output.dir.join("gradcheck.csv"))?;
    w.write_record(["case", "max_rel_error", "worst", "checked", "status"])?;
    let mut failed = 0;
    for c in &cases {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        failed += !c.passed() as usize;
        println!(
            "{:<24} {:>10.3e} {:>8} checked  {status}  (worst {})",
            c.name, c.report.max_rel_error, c.report.checked, c.report.worst
        );
        w.write_record([
            c.name.clone(),
            format!("{:e}", c.report.max_rel_error),
            c.report.worst.clone(),
            c.report.checked.to_string(),
            status.into(),
        ])?;
    }
    w.flush()?;
    if failed > 0 {
        bail!("{failed} of {} gradient checks exceed {TOLERANCE:e}", cases.len());
    }
    Ok(())
}
