//! Implementations of the five subcommands.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use decs_core::autoencoder::{
    ae_backward, pretrain, Autoencoder, AugmentMode, AugmentSpec, PretrainConfig,
};
use decs_core::checkpoint::{autoencoder_checkpoint, read_autoencoder, Checkpoint};
use decs_core::data::{gen_blobs, load_csv, load_idx, BlobSpec, Dataset};
use decs_core::grad::{finite_difference_check, GradCheckConfig};
use decs_core::metrics::{accuracy, nmi};
use decs_core::stability::StabilityParams;
use decs_core::trainer::{train, SnapshotState, TrainConfig};
use decs_core::{Error, Result};

use crate::manifest::{load_config_file, resolve, Manifest};
use crate::{ClusterArgs, DataArgs, EvalArgs, GradcheckArgs, PretrainArgs, SynthArgs};

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    if let Some(csv) = &args.csv {
        return load_csv(csv, args.csv_has_labels);
    }
    if args.images.is_empty() {
        return Err(Error::InvalidParam(
            "no input data: pass --images (with optional --labels) or --csv".into(),
        ));
    }
    if !args.labels.is_empty() && args.labels.len() != args.images.len() {
        return Err(Error::InvalidParam(format!(
            "{} image files but {} label files",
            args.images.len(),
            args.labels.len()
        )));
    }
    let mut dataset: Option<Dataset> = None;
    for (i, images) in args.images.iter().enumerate() {
        let labels = args.labels.get(i).map(|p| p.as_path());
        let part = load_idx(images, labels)?;
        dataset = Some(match dataset {
            None => part,
            Some(d) => d.concat(&part)?,
        });
    }
    Ok(dataset.expect("at least one image file"))
}

fn describe_data(manifest: &mut Manifest, args: &DataArgs, ds: &Dataset) {
    for p in &args.images {
        manifest.set("images", p.display());
    }
    for p in &args.labels {
        manifest.set("labels", p.display());
    }
    if let Some(csv) = &args.csv {
        manifest.set("csv", csv.display());
        manifest.set("csv_has_labels", args.csv_has_labels);
    }
    manifest.set("n_samples", ds.n_samples());
    manifest.set("n_features", ds.n_features());
}

fn augment_from_flags(
    mode: &str,
    ds: &Dataset,
    max_shift_px: usize,
    max_rotate_deg: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Option<AugmentSpec>> {
    match mode {
        "none" => Ok(None),
        "vector" => Ok(Some(AugmentSpec {
            mode: AugmentMode::Vector,
            max_shift_px,
            max_rotate_deg,
            noise_sigma,
            seed,
        })),
        "image" => {
            let (h, w, channels) = ds.image_shape.ok_or_else(|| {
                Error::InvalidParam(
                    "image augmentation requires image-shaped data (IDX input)".into(),
                )
            })?;
            if channels != 1 {
                return Err(Error::InvalidParam(
                    "image augmentation supports single-channel data".into(),
                ));
            }
            Ok(Some(AugmentSpec {
                mode: AugmentMode::Image {
                    height: h,
                    width: w,
                },
                max_shift_px,
                max_rotate_deg,
                noise_sigma,
                seed,
            }))
        }
        other => Err(Error::InvalidParam(format!(
            "unknown augment mode {other:?}; expected image, vector, or none"
        ))),
    }
}

pub fn pretrain_cmd(args: PretrainArgs) -> Result<ExitCode> {
    let file_config = match &args.config {
        Some(path) => load_config_file(path)?,
        None => Default::default(),
    };
    let ds = load_dataset(&args.data)?;

    let epochs = resolve(args.epochs, &file_config, "epochs", 500)?;
    let batch_size = resolve(args.batch_size, &file_config, "batch_size", 256)?;
    let learning_rate = resolve(args.learning_rate, &file_config, "learning_rate", 1e-3)?;
    let seed = resolve(args.seed, &file_config, "seed", 0)?;
    let hidden = resolve(
        args.hidden.map(Csv),
        &file_config,
        "hidden",
        Csv(vec![500, 500, 2000]),
    )?
    .0;
    let latent = resolve(args.latent, &file_config, "latent", 10)?;
    let default_mode = if ds.image_shape.is_some() { "image" } else { "vector" };
    let augment_mode = resolve(
        args.augment,
        &file_config,
        "augment",
        default_mode.to_string(),
    )?;
    let max_shift_px = resolve(args.max_shift_px, &file_config, "max_shift_px", 2)?;
    let max_rotate_deg = resolve(args.max_rotate_deg, &file_config, "max_rotate_deg", 10.0)?;
    let noise_sigma = resolve(args.noise_sigma, &file_config, "noise_sigma", 0.01)?;
    let augment = augment_from_flags(
        &augment_mode,
        &ds,
        max_shift_px,
        max_rotate_deg,
        noise_sigma,
        seed,
    )?;

    let mut dims = vec![ds.n_features()];
    dims.extend(&hidden);
    dims.push(latent);
    let mut ae = Autoencoder::init(&dims, seed)?;

    let config = PretrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        augment,
    };
    let trace = pretrain(&ds.features, &mut ae, &config)?;

    fs::create_dir_all(&args.out_dir)?;
    let ckpt_path = args.out_dir.join("pretrain.decs");
    autoencoder_checkpoint(&ae, None).save(&ckpt_path)?;
    let trace_path = args.out_dir.join("pretrain_loss.csv");
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&trace_path)?);
        writeln!(out, "epoch,loss")?;
        for (epoch, loss) in trace.iter().enumerate() {
            writeln!(out, "{epoch},{loss}")?;
        }
    }

    let mut manifest = Manifest::new("pretrain");
    describe_data(&mut manifest, &args.data, &ds);
    manifest.set("epochs", epochs);
    manifest.set("batch_size", batch_size);
    manifest.set("learning_rate", learning_rate);
    manifest.set("seed", seed);
    manifest.set(
        "hidden",
        hidden.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
    );
    manifest.set("latent", latent);
    manifest.set("augment", &augment_mode);
    manifest.set("max_shift_px", max_shift_px);
    manifest.set("max_rotate_deg", max_rotate_deg);
    manifest.set("noise_sigma", noise_sigma);
    manifest.set("checkpoint", ckpt_path.display());
    manifest.write(&args.out_dir.join("manifest.txt"))?;

    if let Some(last) = trace.last() {
        println!("pretrained {epochs} epochs, final loss {last:.6}");
    } else {
        println!("wrote initialization checkpoint (0 epochs)");
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cluster_cmd(args: ClusterArgs) -> Result<ExitCode> {
    let file_config = match &args.config {
        Some(path) => load_config_file(path)?,
        None => Default::default(),
    };
    let ds = load_dataset(&args.data)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut ae = read_autoencoder(&ckpt)?;
    if ae.encoder.input_dim() != ds.n_features() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {} features, data has {}",
            ae.encoder.input_dim(),
            ds.n_features()
        )));
    }

    let k = resolve(args.k, &file_config, "k", 0)?;
    if k == 0 {
        return Err(Error::InvalidParam("--k is required".into()));
    }
    let seed = resolve(args.seed, &file_config, "seed", 0)?;
    let mut config = TrainConfig::new(k, seed);
    config.alpha = resolve(args.alpha, &file_config, "alpha", config.alpha)?;
    config.lambda = resolve(args.lambda, &file_config, "lambda", config.lambda)?;
    config.batch_size = resolve(args.batch_size, &file_config, "batch_size", config.batch_size)?;
    config.max_iter = resolve(args.max_iter, &file_config, "max_iter", config.max_iter)?;
    config.sgd_lr = resolve(args.sgd_lr, &file_config, "sgd_lr", config.sgd_lr)?;
    config.sgd_momentum = resolve(
        args.sgd_momentum,
        &file_config,
        "sgd_momentum",
        config.sgd_momentum,
    )?;
    config.label_change_tol = resolve(
        args.label_change_tol,
        &file_config,
        "label_change_tol",
        config.label_change_tol,
    )?;
    config.snapshot_every = resolve(
        args.snapshot_every,
        &file_config,
        "snapshot_every",
        config.snapshot_every,
    )?;
    config.include_reconstruction_in_clustering = resolve(
        args.include_reconstruction,
        &file_config,
        "include_reconstruction",
        false,
    )?;
    let augment_mode = resolve(args.augment, &file_config, "augment", "none".to_string())?;
    config.augment = augment_from_flags(&augment_mode, &ds, 2, 10.0, 0.01, seed)?;

    fs::create_dir_all(&args.out_dir)?;
    let snap_dir = args.out_dir.clone();
    let mut write_snapshot = |state: &SnapshotState<'_>| -> Result<()> {
        let emb_path = snap_dir.join(format!("snapshot_{:06}_embeddings.csv", state.iter));
        let mut out = std::io::BufWriter::new(fs::File::create(&emb_path)?);
        for (row, &label) in state.embeddings.rows().into_iter().zip(state.labels) {
            let mut line = String::new();
            for v in row.iter() {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&format!("{label}\n"));
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        let cent_path = snap_dir.join(format!("snapshot_{:06}_centroids.csv", state.iter));
        let mut out = std::io::BufWriter::new(fs::File::create(&cent_path)?);
        for row in state.centroids.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    };

    let (dec_opt, needs_decoder) = (
        &mut ae.decoder,
        config.include_reconstruction_in_clustering,
    );
    let outcome = match train(
        &ds.features,
        &mut ae.encoder,
        needs_decoder.then_some(dec_opt),
        &config,
        Some(&mut write_snapshot),
    ) {
        Ok(out) => out,
        Err(err @ Error::Diverged(_)) => {
            // Leave a diagnostic checkpoint of the half-trained model so the
            // failure state can be inspected.
            let diag = args.out_dir.join("diverged.decs");
            autoencoder_checkpoint(&ae, None).save(&diag)?;
            eprintln!("diagnostic checkpoint: {}", diag.display());
            return Err(err);
        }
        Err(err) => return Err(err),
    };

    let labels_path = args.out_dir.join("labels.csv");
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&labels_path)?);
        for &label in outcome.labels.as_slice() {
            writeln!(out, "{label}")?;
        }
    }
    let history_path = args.out_dir.join("history.csv");
    outcome.history.write_csv(&history_path)?;
    let model_path = args.out_dir.join("model.decs");
    autoencoder_checkpoint(&ae, Some(&outcome.centroids)).save(&model_path)?;

    let mut manifest = Manifest::new("cluster");
    describe_data(&mut manifest, &args.data, &ds);
    manifest.set("checkpoint_in", args.checkpoint.display());
    manifest.set("k", k);
    manifest.set("alpha", config.alpha);
    manifest.set("lambda", config.lambda);
    manifest.set("batch_size", config.batch_size);
    manifest.set("max_iter", config.max_iter);
    manifest.set("sgd_lr", config.sgd_lr);
    manifest.set("sgd_momentum", config.sgd_momentum);
    manifest.set("label_change_tol", config.label_change_tol);
    manifest.set("seed", seed);
    manifest.set("snapshot_every", config.snapshot_every);
    manifest.set(
        "include_reconstruction",
        config.include_reconstruction_in_clustering,
    );
    manifest.set("augment", &augment_mode);
    manifest.set("iterations_run", outcome.history.records.len());
    manifest.set("epochs_run", outcome.history.epochs);
    manifest.set("stopped_by_label_tol", outcome.history.stopped_by_label_tol);
    manifest.set("final_threshold", outcome.history.final_threshold);
    manifest.set(
        "final_mean_stability",
        outcome.history.final_mean_stability,
    );
    manifest.write(&args.out_dir.join("manifest.txt"))?;

    println!(
        "clustered {} samples into {k} clusters in {} iterations ({} epochs{})",
        ds.n_samples(),
        outcome.history.records.len(),
        outcome.history.epochs,
        if outcome.history.stopped_by_label_tol {
            ", stopped by label tolerance"
        } else {
            ""
        }
    );
    println!("labels:  {}", labels_path.display());
    println!("history: {}", history_path.display());
    println!("model:   {}", model_path.display());

    if let Some(truth) = &ds.truth {
        let acc = accuracy(&outcome.labels.to_i64(), truth)?;
        let score = nmi(&outcome.labels.to_i64(), truth)?;
        println!("against provided truth: ACC={acc:.4} NMI={score:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn read_labels_file(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        // Accept either one integer per line or a CSV row whose final
        // column is the label.
        let cell = line.rsplit(',').next().unwrap_or(line).trim();
        labels.push(cell.parse::<i64>().map_err(|_| {
            Error::Format(format!(
                "{}:{}: cannot parse label {cell:?}",
                path.display(),
                line_no + 1
            ))
        })?);
    }
    if labels.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    Ok(labels)
}

pub fn eval_cmd(args: EvalArgs) -> Result<ExitCode> {
    let pred = read_labels_file(&args.pred)?;
    let truth = read_labels_file(&args.truth)?;
    let acc = accuracy(&pred, &truth)?;
    let score = nmi(&pred, &truth)?;
    let n = pred.len();
    let k = pred
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len();

    let text = format!("n={n}\nk={k}\nACC={acc:.6}\nNMI={score:.6}\n");
    print!("{text}");
    if let Some(stem) = &args.out {
        fs::write(stem.with_extension("txt"), &text)?;
        fs::write(
            stem.with_extension("csv"),
            format!("n,k,ACC,NMI\n{n},{k},{acc},{score}\n"),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck_cmd(args: GradcheckArgs) -> Result<ExitCode> {
    if args.configs == 0 {
        return Err(Error::InvalidParam("--configs must be >= 1".into()));
    }
    let thresholds = [0.2, 0.5, 0.8];
    let mut report = String::new();
    let mut all_pass = true;
    let mut worst = (0.0f64, String::new());

    for i in 0..args.configs {
        let seed = args.seed.wrapping_add(i as u64);
        let t = thresholds[i % thresholds.len()];
        let params = StabilityParams::new(1.0, 0.8, t)?;
        let mut config = GradCheckConfig::new(seed, 16, 8, 5, params);
        // Keep the stationary-point criterion three decades below the
        // relative one (1e-5 pairs with 1e-8), so tightening the tolerance
        // below float noise reports failures instead of vacuously passing.
        config.abs_tol = args.tolerance * 1e-3;
        let rep = finite_difference_check(&config, args.tolerance)?;
        report.push_str(&format!("config seed={seed} t={t}\n"));
        report.push_str(&rep.render_text());
        if rep.max_rel_err > worst.0 {
            let offender = rep
                .per_parameter_errors
                .iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(p, _)| p.clone())
                .unwrap_or_default();
            worst = (rep.max_rel_err, format!("seed={seed} {offender}"));
        }
        all_pass &= rep.pass;
    }

    // Autoencoder chain on a small network, same pass rule.
    let ae_worst = ae_gradcheck_worst(args.seed)?;
    report.push_str(&format!(
        "ae analytic-vs-numeric worst_rel_err={ae_worst:.3e} pass={}\n",
        ae_worst <= args.tolerance
    ));
    if ae_worst > worst.0 {
        worst = (ae_worst, "ae backward".into());
    }
    all_pass &= ae_worst <= args.tolerance;

    report.push_str(&format!(
        "sweep configs={} tolerance={:.1e} overall={}\n",
        args.configs,
        args.tolerance,
        if all_pass { "PASS" } else { "FAIL" }
    ));
    if !all_pass {
        report.push_str(&format!(
            "worst offender: {} rel_err={:.3e}\n",
            worst.1, worst.0
        ));
    }
    print!("{report}");
    if let Some(path) = &args.out {
        fs::write(path, &report)?;
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// Smallest |pre-activation| over the ReLU layers of both networks; inputs
/// this close to the activation kink make central differences unreliable.
fn relu_kink_margin(ae: &Autoencoder, x: &ndarray::Array2<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut a = x.clone();
    for mlp in [&ae.encoder, &ae.decoder] {
        for layer in mlp.layers() {
            let mut pre = a.dot(&layer.weights.t());
            for mut row in pre.rows_mut() {
                row += &layer.bias;
            }
            if layer.activation == decs_core::autoencoder::Activation::Relu {
                for &v in pre.iter() {
                    margin = margin.min(v.abs());
                }
                a = pre.mapv(|v| v.max(0.0));
            } else {
                a = pre;
            }
        }
    }
    margin
}

/// Worst gated relative error of the autoencoder backward pass against
/// central differences on a small seeded network.
fn ae_gradcheck_worst(seed: u64) -> Result<f64> {
    // Re-salt the network and input pattern until every ReLU
    // pre-activation sits well clear of the kink, mirroring the q = t
    // exclusion of the clustering checker. A configuration can pin the
    // kink exactly: a sample that dies in every hidden unit produces an
    // all-zero latent and zero decoder pre-activations.
    let mut ae = Autoencoder::init(&[6, 4, 2], seed)?;
    let mut x = ndarray::Array2::zeros((5, 6));
    for salt in 0..1000u64 {
        ae = Autoencoder::init(&[6, 4, 2], seed.wrapping_add(salt.wrapping_mul(7919)))?;
        x = ndarray::Array2::from_shape_fn((5, 6), |(i, j)| {
            ((i * 6 + j) as f64 * 0.731 + seed as f64 + salt as f64 * 0.917).sin()
        });
        if relu_kink_margin(&ae, &x) > 1e-4 {
            break;
        }
    }
    let h = 1e-6;
    let (_, grads) = ae_backward(&x, &ae.encoder, &ae.decoder)?;
    let mut worst = 0.0f64;
    for enc_side in [true, false] {
        let n_layers = if enc_side {
            ae.encoder.layers().len()
        } else {
            ae.decoder.layers().len()
        };
        for li in 0..n_layers {
            let w_dim = {
                let mlp = if enc_side { &ae.encoder } else { &ae.decoder };
                mlp.layers()[li].weights.dim()
            };
            let b_len = {
                let mlp = if enc_side { &ae.encoder } else { &ae.decoder };
                mlp.layers()[li].bias.len()
            };
            for p in 0..(w_dim.0 * w_dim.1 + b_len) {
                let analytic = {
                    let lg = if enc_side {
                        &grads.encoder[li]
                    } else {
                        &grads.decoder[li]
                    };
                    if p < w_dim.0 * w_dim.1 {
                        lg.d_weights[[p / w_dim.1, p % w_dim.1]]
                    } else {
                        lg.d_bias[p - w_dim.0 * w_dim.1]
                    }
                };
                let poke = |ae: &mut Autoencoder, delta: f64| {
                    let mlp = if enc_side { &mut ae.encoder } else { &mut ae.decoder };
                    let layer = &mut mlp.layers_mut()[li];
                    if p < w_dim.0 * w_dim.1 {
                        layer.weights[[p / w_dim.1, p % w_dim.1]] += delta;
                    } else {
                        layer.bias[p - w_dim.0 * w_dim.1] += delta;
                    }
                };
                poke(&mut ae, h);
                let lp = ae_backward(&x, &ae.encoder, &ae.decoder)?.0;
                poke(&mut ae, -2.0 * h);
                let lm = ae_backward(&x, &ae.encoder, &ae.decoder)?.0;
                poke(&mut ae, h);
                let numeric = (lp - lm) / (2.0 * h);
                let diff = (analytic - numeric).abs();
                if diff > 1e-8 {
                    worst = worst.max(diff / analytic.abs().max(numeric.abs()));
                }
            }
        }
    }
    Ok(worst)
}

pub fn synth_cmd(args: SynthArgs) -> Result<ExitCode> {
    let spec = BlobSpec {
        k: args.k,
        per_cluster: args.per_cluster,
        dim: args.dim,
        center_box: args.center_box,
        sigma: args.sigma,
        seed: args.seed,
    };
    let ds = gen_blobs(&spec)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    ds.write_csv(&args.out)?;
    println!(
        "wrote {} rows x {} columns to {}",
        ds.n_samples(),
        ds.n_features() + 1,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Comma-separated list wrapper so width lists can come from config files.
pub struct Csv(pub Vec<usize>);

impl std::str::FromStr for Csv {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.split(',')
            .map(|part| part.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Csv)
    }
}
