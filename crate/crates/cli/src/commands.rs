//! Subcommand implementations. Each one reads and validates all of its
//! inputs before the first output is written.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use microseg::dzone::{analyze, DzoneParams};
use microseg::imagecore::{
    load_dataset, load_micrograph, save_labelmap, save_manifest, save_micrograph, save_rgb, ClassTaxonomy, LabelMap,
    ManifestRecord, Mask, Micrograph,
};
use microseg::metrics::{confusion_matrix, ClassMetrics, ConfusionMatrix, MetricsTable};
use microseg::metrology::{
    connected_components, fuse_predictions, ks_consistency_score, ks_two_sample, particle_size_distribution,
    remove_border_particles, Connectivity, EmpiricalDistribution, Unit,
};
use microseg::net::checkpoint::{load_checkpoint, save_checkpoint};
use microseg::net::Model;
use microseg::synthgen::{generate_microconstituent_scene, generate_particle_scene, SceneSpec};
use microseg::training::crossval::run_crossval;
use microseg::training::loss::LossKind;
use microseg::training::{history_csv, train, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{self, load_config, unique_stems};
use crate::plot::Histogram;
use crate::run::Run;
use crate::{
    Cli, Command, CrossvalArgs, DzoneArgs, EvaluateArgs, FuseArgs, KsArgs, LossArg, PredictArgs, PsdArgs, SceneKind,
    SynthArgs, TrainArgs,
};

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Predict(a) => predict(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Crossval(a) => crossval(cli, a),
        Command::Psd(a) => psd(cli, a),
        Command::Dzone(a) => dzone(cli, a),
        Command::Fuse(a) => fuse(cli, a),
        Command::Ks(a) => ks(cli, a),
    }
}

fn threads(cli: &Cli) -> usize {
    match cli.threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
}

/// Applies `f` to every item on up to `threads` scoped threads, keeping order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let chunk = items.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

fn experiment(config: Option<&Path>, loss: Option<LossArg>) -> Result<ExperimentConfig> {
    let mut exp: ExperimentConfig = load_config(config)?;
    if let Some(l) = loss {
        exp.loss.kind = match l {
            LossArg::Focal => LossKind::Focal,
            LossArg::Ce => LossKind::Ce,
        };
    }
    exp.net.validate().context("config field `net`")?;
    exp.train.validate().context("config field `train`")?;
    exp.loss.validate().context("config field `loss`")?;
    Ok(exp)
}

fn check_classes(exp: &ExperimentConfig, taxonomy: &ClassTaxonomy) -> Result<()> {
    ensure!(
        exp.net.num_classes == taxonomy.len(),
        "config field `net.num_classes` is {} but the {}-class taxonomy was requested",
        exp.net.num_classes,
        taxonomy.len()
    );
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut spec: SceneSpec = load_config(a.config.as_deref())?;
    if let Some(s) = a.size {
        spec.height = s;
        spec.width = s;
    }
    spec.validate().context("scene configuration")?;
    ensure!(a.count > 0, "--count must be positive");
    ensure!(
        a.holdout < a.count,
        "--holdout {} leaves no training scenes out of {}",
        a.holdout,
        a.count
    );
    let mut run = Run::new("synth", &a.out, cli.seed, threads(cli));
    run.config(&spec)?;
    if let Some(c) = &a.config {
        run.input(c)?;
    }
    run.dir("images")?;
    run.dir("labels")?;
    let mut records = Vec::with_capacity(a.count);
    let mut radii = String::from("scene,particle,radius_px\n");
    for i in 0..a.count {
        let name = format!("scene_{i:03}");
        let scene = SceneSpec {
            seed: cli.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        let (image, labels) = match a.kind {
            SceneKind::Microconstituent => generate_microconstituent_scene(&scene)?,
            SceneKind::Particle => {
                let (image, labels, truth) = generate_particle_scene(&scene)?;
                for (j, p) in truth.particles.iter().enumerate() {
                    radii.push_str(&format!("{name},{j},{:.6}\n", p.equivalent_radius()));
                }
                (image, labels)
            }
        };
        let image = image.with_scale(Some(spec.um_per_px));
        let image_rel = PathBuf::from(format!("images/{name}.png"));
        let label_rel = PathBuf::from(format!("labels/{name}.png"));
        save_micrograph(&image, run.output(&image_rel))?;
        run.output(format!("images/{name}.json"));
        save_labelmap(&labels, run.output(&label_rel))?;
        let split = if i >= a.count - a.holdout { "test" } else { "train" };
        records.push(ManifestRecord {
            image_path: image_rel,
            label_path: label_rel,
            um_per_px: Some(spec.um_per_px),
            split_tags: if a.holdout > 0 { vec![split.into()] } else { Vec::new() },
        });
    }
    save_manifest(&records, run.output("manifest.json"))?;
    if a.holdout > 0 {
        for split in ["train", "test"] {
            let part: Vec<ManifestRecord> = records
                .iter()
                .filter(|r| r.split_tags.iter().any(|t| t == split))
                .cloned()
                .collect();
            save_manifest(&part, run.output(format!("manifest_{split}.json")))?;
        }
    }
    if a.kind == SceneKind::Particle {
        run.write("true_radii.csv", radii)?;
    }
    info!("wrote {} scenes to {}", a.count, a.out.display());
    run.finish()
}

fn load_samples(run: &mut Run, path: &Path, taxonomy: &ClassTaxonomy) -> Result<Vec<microseg::imagecore::Sample>> {
    let records = io::manifest(path)?;
    run.input(path)?;
    for r in &records {
        run.input(&r.image_path)?;
        run.input(&r.label_path)?;
    }
    load_dataset(&records, taxonomy).with_context(|| format!("loading dataset {}", path.display()))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let taxonomy = io::taxonomy(&a.taxonomy)?;
    let mut exp = experiment(a.config.as_deref(), a.loss)?;
    check_classes(&exp, &taxonomy)?;
    exp.train.seed = cli.seed;
    let mut run = Run::new("train", &a.out, cli.seed, threads(cli));
    if let Some(c) = &a.config {
        run.input(c)?;
    }
    run.config(&exp)?;
    let data = load_samples(&mut run, &a.manifest, &taxonomy)?;
    let model = Model::<f32>::init(&exp.net, &mut ChaCha8Rng::seed_from_u64(cli.seed))?;
    info!(
        "training on {} images, {} updates",
        data.len(),
        exp.train.total_updates()
    );
    let (model, history) = train(model, &data, &exp.train, &exp.loss)?;
    run.dir("")?;
    save_checkpoint(&model, &taxonomy, run.output("model.ckpt"))?;
    run.write("history.csv", history_csv(&history))?;
    run.write_json("config.json", &exp)?;
    if let Some(last) = history.last() {
        info!("final loss {:.5}", last.loss);
    }
    run.finish()
}

/// Loads a checkpoint and insists that its classes are the requested ones.
fn checked_model(run: &mut Run, path: &Path, taxonomy: &ClassTaxonomy) -> Result<Model<f32>> {
    run.input(path)?;
    let (model, stored) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ensure!(
        stored.len() == taxonomy.len(),
        "checkpoint {} predicts {} classes ({}) but the requested taxonomy has {} ({})",
        path.display(),
        stored.len(),
        stored.names.join(", "),
        taxonomy.len(),
        taxonomy.names.join(", ")
    );
    if stored.names != taxonomy.names {
        warn!(
            "checkpoint class names [{}] differ from [{}]",
            stored.names.join(", "),
            taxonomy.names.join(", ")
        );
    }
    run.config(model.config())?;
    Ok(model)
}

struct Predicted {
    labels: LabelMap,
    probabilities: Vec<Vec<f32>>,
}

fn predict_images(
    model: &Model<f32>,
    images: &[Micrograph],
    taxonomy: &ClassTaxonomy,
    tile: usize,
    threads: usize,
) -> Result<Vec<Predicted>> {
    par_map(images, threads, |m| {
        let p = model.predict_dense(m, taxonomy, tile)?;
        Ok(Predicted {
            labels: p.labels,
            probabilities: p.probabilities,
        })
    })
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let taxonomy = io::taxonomy(&a.taxonomy)?;
    ensure!(a.tile_pixels > 0, "--tile-pixels must be positive");
    let mut run = Run::new("predict", &a.out, cli.seed, threads(cli));
    let model = checked_model(&mut run, &a.checkpoint, &taxonomy)?;
    let records = io::manifest(&a.manifest)?;
    run.input(&a.manifest)?;
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        run.input(&r.image_path)?;
        images.push(load_micrograph(&r.image_path).with_context(|| format!("loading {}", r.image_path.display()))?);
    }
    let preds = predict_images(&model, &images, &taxonomy, a.tile_pixels, threads(cli))?;
    run.dir("predictions")?;
    if a.probabilities {
        run.dir("probabilities")?;
    }
    let stems = unique_stems(&records.iter().map(|r| &r.image_path).collect::<Vec<_>>());
    let mut out_records = Vec::with_capacity(records.len());
    for ((r, p), stem) in records.iter().zip(&preds).zip(&stems) {
        let rel = PathBuf::from(format!("predictions/{stem}.png"));
        save_labelmap(&p.labels, run.output(&rel))?;
        if a.probabilities {
            for (c, plane) in p.probabilities.iter().enumerate() {
                let m = Micrograph::new(p.labels.height(), p.labels.width(), plane.clone())?;
                save_micrograph(
                    &m,
                    run.output(format!("probabilities/{stem}_{}.png", taxonomy.names[c])),
                )?;
            }
        }
        out_records.push(ManifestRecord {
            image_path: std::path::absolute(&r.image_path).unwrap_or_else(|_| r.image_path.clone()),
            label_path: rel,
            um_per_px: r.um_per_px,
            split_tags: r.split_tags.clone(),
        });
    }
    save_manifest(&out_records, run.output("predictions.json"))?;
    run.finish()
}

#[derive(Serialize)]
struct ImageMetrics {
    image: PathBuf,
    metrics: ClassMetrics,
}

#[derive(Serialize)]
struct EvaluationReport {
    table: MetricsTable,
    pooled: ClassMetrics,
    confusion: ConfusionMatrix,
    images: Vec<ImageMetrics>,
}

fn confusion_csv(cm: &ConfusionMatrix, names: &[String]) -> String {
    let mut s = String::from("truth\\predicted");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (i, n) in names.iter().enumerate() {
        s.push_str(n);
        for j in 0..names.len() {
            s.push_str(&format!(",{}", cm.get(i, j)));
        }
        s.push('\n');
    }
    s
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let taxonomy = io::taxonomy(&a.taxonomy)?;
    let mut run = Run::new("evaluate", &a.out, cli.seed, threads(cli));
    let records = io::manifest(&a.manifest)?;
    run.input(&a.manifest)?;
    let mut truth = Vec::with_capacity(records.len());
    for r in &records {
        run.input(&r.label_path)?;
        truth.push(io::labels(r, &taxonomy)?);
    }
    let predicted: Vec<LabelMap> = match (&a.predictions, &a.checkpoint) {
        (Some(p), _) => {
            let preds = io::manifest(p)?;
            run.input(p)?;
            ensure!(
                preds.len() == records.len(),
                "{} lists {} predictions for {} ground-truth images",
                p.display(),
                preds.len(),
                records.len()
            );
            preds
                .iter()
                .map(|r| {
                    run.input(&r.label_path)?;
                    io::labels(r, &taxonomy)
                })
                .collect::<Result<_>>()?
        }
        (None, Some(ckpt)) => {
            let model = checked_model(&mut run, ckpt, &taxonomy)?;
            let mut images = Vec::with_capacity(records.len());
            for r in &records {
                run.input(&r.image_path)?;
                images.push(
                    load_micrograph(&r.image_path).with_context(|| format!("loading {}", r.image_path.display()))?,
                );
            }
            predict_images(&model, &images, &taxonomy, 1 << 14, threads(cli))?
                .into_iter()
                .map(|p| p.labels)
                .collect()
        }
        (None, None) => bail!("give --predictions or --checkpoint"),
    };
    let mut pooled = ConfusionMatrix::zeros(taxonomy.len());
    let mut images = Vec::with_capacity(records.len());
    for ((r, gt), pred) in records.iter().zip(&truth).zip(&predicted) {
        let cm =
            confusion_matrix(pred, gt, None).with_context(|| format!("comparing with {}", r.label_path.display()))?;
        pooled.add(&cm)?;
        images.push(ImageMetrics {
            image: r.label_path.clone(),
            metrics: ClassMetrics::from_confusion(&cm, &taxonomy.names),
        });
    }
    let per_image: Vec<ClassMetrics> = images.iter().map(|m| m.metrics.clone()).collect();
    let report = EvaluationReport {
        table: MetricsTable::from_images(&per_image, &taxonomy.names),
        pooled: ClassMetrics::from_confusion(&pooled, &taxonomy.names),
        confusion: pooled.clone(),
        images,
    };
    run.write_json("metrics.json", &report)?;
    run.write("metrics.txt", report.table.to_text())?;
    run.write("confusion.csv", confusion_csv(&pooled, &taxonomy.names))?;
    print!("{}", report.table.to_text());
    run.finish()
}

fn crossval(cli: &Cli, a: &CrossvalArgs) -> Result<()> {
    let taxonomy = io::taxonomy(&a.taxonomy)?;
    let exp = experiment(a.config.as_deref(), a.loss)?;
    check_classes(&exp, &taxonomy)?;
    let mut run = Run::new("crossval", &a.out, cli.seed, threads(cli));
    if let Some(c) = &a.config {
        run.input(c)?;
    }
    run.config(&exp)?;
    let data = load_samples(&mut run, &a.manifest, &taxonomy)?;
    ensure!(
        a.folds >= 2 && a.folds <= data.len(),
        "--folds {} needs between 2 and {} (the number of images)",
        a.folds,
        data.len()
    );
    let report = run_crossval(&data, a.folds, &exp, cli.seed)?;
    run.write_json("crossval.json", &report)?;
    run.write("metrics.txt", report.table.to_text())?;
    print!("{}", report.table.to_text());
    run.finish()
}

/// Class index named `spheroidite`, the particle class in both taxonomies.
fn particle_class(taxonomy: &ClassTaxonomy) -> Result<u8> {
    taxonomy
        .names
        .iter()
        .position(|n| n == "spheroidite")
        .map(|c| c as u8)
        .context("taxonomy has no spheroidite class")
}

#[derive(Serialize)]
struct PsdSummary {
    connectivity: u8,
    min_area: usize,
    exclude_border: bool,
    images: Vec<PsdImage>,
    overall: microseg::metrology::DistributionSummary,
}

#[derive(Serialize)]
struct PsdImage {
    labels: PathBuf,
    particles: usize,
    summary: microseg::metrology::DistributionSummary,
}

/// All per-image samples share a unit: µm when every image has a scale.
fn common_unit(scales: &[Option<f64>]) -> Unit {
    if scales.iter().all(Option::is_some) {
        Unit::Micrometre
    } else {
        if scales.iter().any(Option::is_some) {
            warn!("some images lack a scale; reporting every measurement in pixels");
        }
        Unit::Pixel
    }
}

fn psd(cli: &Cli, a: &PsdArgs) -> Result<()> {
    let taxonomy = io::taxonomy(&a.taxonomy)?;
    let class = particle_class(&taxonomy)?;
    let connectivity = Connectivity::from_count(a.connectivity).context("--connectivity must be 4 or 8")?;
    let mut run = Run::new("psd", &a.out, cli.seed, threads(cli));
    run.config(&serde_json::json!({
        "taxonomy": a.taxonomy,
        "min_area": a.min_area,
        "connectivity": a.connectivity,
        "exclude_border": !a.keep_border,
        "bins": a.bins,
    }))?;
    let records = io::manifest(&a.manifest)?;
    run.input(&a.manifest)?;
    let mut maps = Vec::with_capacity(records.len());
    for r in &records {
        run.input(&r.label_path)?;
        maps.push(io::labels(r, &taxonomy)?);
    }
    let unit = common_unit(&records.iter().map(|r| r.um_per_px).collect::<Vec<_>>());
    let mut csv =
        String::from("labels,particle,area_px,radius_px,radius_um,centroid_row,centroid_col,touches_border\n");
    let mut all = Vec::new();
    let mut images = Vec::with_capacity(records.len());
    for (r, map) in records.iter().zip(&maps) {
        let mut set = connected_components(&Mask::from_labels(map, class), connectivity).with_min_area(a.min_area);
        if !a.keep_border {
            set = remove_border_particles(&set);
        }
        set.um_per_px = if unit == Unit::Micrometre { r.um_per_px } else { None };
        for (j, p) in set.particles.iter().enumerate() {
            let rp = p.equivalent_radius();
            let um = r.um_per_px.map(|s| format!("{:.6}", rp * s)).unwrap_or_default();
            csv.push_str(&format!(
                "{},{j},{},{rp:.6},{um},{:.3},{:.3},{}\n",
                r.label_path.display(),
                p.area(),
                p.centroid.0,
                p.centroid.1,
                p.touches_border
            ));
        }
        let d = particle_size_distribution(&set);
        all.extend_from_slice(d.values());
        images.push(PsdImage {
            labels: r.label_path.clone(),
            particles: set.len(),
            summary: d.summary(),
        });
    }
    let overall = EmpiricalDistribution::new(all, unit)?;
    if overall.is_empty() {
        warn!("no particles found");
    }
    let hist = Histogram::of(&overall, a.bins);
    run.write("psd.csv", csv)?;
    run.write_json(
        "psd.json",
        &PsdSummary {
            connectivity: a.connectivity,
            min_area: a.min_area,
            exclude_border: !a.keep_border,
            images,
            overall: overall.summary(),
        },
    )?;
    run.write("psd_hist.csv", hist.csv())?;
    run.write(
        "psd_hist.svg",
        hist.svg("Particle size distribution", "equivalent radius"),
    )?;
    run.finish()
}

const NETWORK_INTERFACE: [u8; 3] = [220, 30, 30];
const ZONE_BOUNDARY: [u8; 3] = [255, 255, 255];

fn dzone_overlay(cleaned: &LabelMap, network_interface: &Mask, zone_boundary: &Mask) -> Vec<u8> {
    let colors = &cleaned.taxonomy().colors;
    let mut rgb = Vec::with_capacity(3 * cleaned.labels().len());
    for (i, &l) in cleaned.labels().iter().enumerate() {
        let c = if zone_boundary.data()[i] {
            ZONE_BOUNDARY
        } else if network_interface.data()[i] {
            NETWORK_INTERFACE
        } else {
            colors[l as usize]
        };
        rgb.extend_from_slice(&c);
    }
    rgb
}

#[derive(Serialize)]
struct DzoneSummary {
    params: DzoneParams,
    images: Vec<DzoneImage>,
    overall: microseg::metrology::DistributionSummary,
}

#[derive(Serialize)]
struct DzoneImage {
    labels: PathBuf,
    summary: microseg::metrology::DistributionSummary,
}

fn dzone(cli: &Cli, a: &DzoneArgs) -> Result<()> {
    let taxonomy = ClassTaxonomy::microconstituent();
    let base = DzoneParams {
        closing_radius: a.closing_radius,
        min_network_size: a.min_network_size,
        um_per_px: None,
    };
    let mut run = Run::new("dzone", &a.out, cli.seed, threads(cli));
    run.config(&serde_json::json!({ "params": base, "bins": a.bins }))?;
    let records = io::manifest(&a.manifest)?;
    run.input(&a.manifest)?;
    let mut maps = Vec::with_capacity(records.len());
    for r in &records {
        run.input(&r.label_path)?;
        maps.push(io::labels(r, &taxonomy)?);
    }
    let unit = common_unit(&records.iter().map(|r| r.um_per_px).collect::<Vec<_>>());
    let analyses = par_map(
        &records.iter().zip(&maps).collect::<Vec<_>>(),
        threads(cli),
        |(r, map)| {
            let params = DzoneParams {
                um_per_px: if unit == Unit::Micrometre { r.um_per_px } else { None },
                ..base.clone()
            };
            analyze(map, &params).with_context(|| format!("denuded-zone analysis of {}", r.label_path.display()))
        },
    )?;
    let stems = unique_stems(&records.iter().map(|r| &r.label_path).collect::<Vec<_>>());
    run.dir("annotated")?;
    let mut csv = String::from("labels,row,col,width_px,width_um\n");
    let mut all = Vec::new();
    let mut images = Vec::with_capacity(records.len());
    for ((r, an), stem) in records.iter().zip(&analyses).zip(&stems) {
        let w = an.cleaned.width();
        for (i, _) in an
            .interfaces
            .zone_boundary
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
        {
            let d = an.network_distance.values()[i];
            let um = r.um_per_px.map(|s| format!("{:.6}", d * s)).unwrap_or_default();
            csv.push_str(&format!("{},{},{},{d:.6},{um}\n", r.label_path.display(), i / w, i % w));
        }
        all.extend_from_slice(an.widths.values());
        images.push(DzoneImage {
            labels: r.label_path.clone(),
            summary: an.widths.summary(),
        });
        let rgb = dzone_overlay(
            &an.cleaned,
            &an.interfaces.network_interface,
            &an.interfaces.zone_boundary,
        );
        save_rgb(
            an.cleaned.height(),
            w,
            &rgb,
            run.output(format!("annotated/{stem}.png")),
        )?;
    }
    let overall = EmpiricalDistribution::new(all, unit)?;
    let hist = Histogram::of(&overall, a.bins);
    run.write("dzone_widths.csv", csv)?;
    run.write_json(
        "dzone.json",
        &DzoneSummary {
            params: base,
            images,
            overall: overall.summary(),
        },
    )?;
    run.write("dzone_hist.csv", hist.csv())?;
    run.write("dzone_hist.svg", hist.svg("Denuded zone width distribution", "width"))?;
    run.finish()
}

fn fuse(cli: &Cli, a: &FuseArgs) -> Result<()> {
    let mut run = Run::new("fuse", &a.out, cli.seed, threads(cli));
    let particles = io::manifest(&a.particles)?;
    let micro = io::manifest(&a.microconstituents)?;
    run.input(&a.particles)?;
    run.input(&a.microconstituents)?;
    ensure!(
        particles.len() == micro.len(),
        "{} lists {} maps but {} lists {}",
        a.particles.display(),
        particles.len(),
        a.microconstituents.display(),
        micro.len()
    );
    let mut fused = Vec::with_capacity(particles.len());
    for (p, m) in particles.iter().zip(&micro) {
        run.input(&p.label_path)?;
        run.input(&m.label_path)?;
        let pm = io::labels(p, &ClassTaxonomy::particle())?;
        let mm = io::labels(m, &ClassTaxonomy::microconstituent())?;
        fused.push(
            fuse_predictions(&pm, &mm)
                .with_context(|| format!("fusing {} with {}", p.label_path.display(), m.label_path.display()))?,
        );
    }
    run.dir("fused")?;
    let stems = unique_stems(&particles.iter().map(|r| &r.label_path).collect::<Vec<_>>());
    let mut records = Vec::with_capacity(fused.len());
    for ((p, map), stem) in particles.iter().zip(&fused).zip(&stems) {
        let rel = PathBuf::from(format!("fused/{stem}.png"));
        save_labelmap(map, run.output(&rel))?;
        records.push(ManifestRecord {
            image_path: std::path::absolute(&p.image_path).unwrap_or_else(|_| p.image_path.clone()),
            label_path: rel,
            um_per_px: p.um_per_px,
            split_tags: p.split_tags.clone(),
        });
    }
    save_manifest(&records, run.output("fused.json"))?;
    run.finish()
}

#[derive(Serialize)]
struct KsPair {
    a: PathBuf,
    b: PathBuf,
    n: usize,
    m: usize,
    result: microseg::metrology::KsResult,
}

#[derive(Serialize)]
struct KsReport {
    pairs: Vec<KsPair>,
    consistency_score: f64,
}

fn ks(cli: &Cli, a: &KsArgs) -> Result<()> {
    ensure!(
        a.significance > 0.0 && a.significance < 1.0,
        "--significance must lie in (0, 1), got {}",
        a.significance
    );
    let mut run = Run::new("ks", &a.out, cli.seed, threads(cli));
    run.config(&serde_json::json!({ "significance": a.significance, "column": a.column }))?;
    let files: Vec<(PathBuf, PathBuf)> = match (&a.pairs, &a.a, &a.b) {
        (Some(p), _, _) => {
            run.input(p)?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let list: Vec<(PathBuf, PathBuf)> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {} as a list of [a, b] pairs", p.display()))?;
            ensure!(!list.is_empty(), "{} lists no pairs", p.display());
            let base = p.parent().unwrap_or(Path::new("."));
            list.into_iter().map(|(x, y)| (base.join(x), base.join(y))).collect()
        }
        (None, Some(x), Some(y)) => vec![(x.clone(), y.clone())],
        _ => bail!("give --a and --b, or --pairs"),
    };
    let mut dists = Vec::with_capacity(files.len());
    for (x, y) in &files {
        run.input(x)?;
        run.input(y)?;
        let dx = EmpiricalDistribution::new(io::read_sample(x, a.column.as_deref())?, Unit::Pixel)?;
        let dy = EmpiricalDistribution::new(io::read_sample(y, a.column.as_deref())?, Unit::Pixel)?;
        dists.push((dx, dy));
    }
    let mut pairs = Vec::with_capacity(files.len());
    for ((x, y), (dx, dy)) in files.iter().zip(&dists) {
        let result = ks_two_sample(dx, dy, a.significance)?;
        println!(
            "{} vs {}: D = {:.4}, critical {:.4}, {}",
            x.display(),
            y.display(),
            result.statistic,
            result.critical_value,
            if result.reject { "reject" } else { "consistent" }
        );
        pairs.push(KsPair {
            a: x.clone(),
            b: y.clone(),
            n: dx.len(),
            m: dy.len(),
            result,
        });
    }
    let consistency_score = ks_consistency_score(&dists, a.significance)?;
    println!("consistency score {consistency_score}");
    run.write_json(
        "ks.json",
        &KsReport {
            pairs,
            consistency_score,
        },
    )?;
    run.finish()
}
