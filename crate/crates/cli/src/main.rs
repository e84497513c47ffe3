use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dacp::analysis::pgm::read_netpbm;
use dacp::analysis::{
    cluster_channels, export_feature_maps, write_cluster_csv, ConnectivityReport,
};
use dacp::grouping::{channel_vectors, Axis};
use dacp::harness::{load_checkpoint, run_dacp_schedule, save_checkpoint, ExperimentConfig};
use dacp::pruning::{apply_prune, compute_prune_plan, count_flops, resnet_union_adjust};
use dacp::FlopsReport;

#[derive(Parser)]
#[command(name = "dacp", version, about = "Train, prune and inspect small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full train / prune schedule from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Prune a checkpoint by filter norm.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        /// Input size for the FLOPs report.
        #[arg(long, default_value = "8x8", value_parser = parse_hw)]
        input_hw: (usize, usize),
    },
    /// Write connectivity and cluster CSVs for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-layer FLOPs and parameter counts.
    Flops {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_hw)]
        input_hw: (usize, usize),
    },
    /// Render one conv layer's feature maps for an image as PGM tiles.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of a conv layer in the network.
        #[arg(long)]
        layer: usize,
        /// A binary PGM (P5) or PPM (P6) image.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_hw(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| format!("invalid dimension '{v}' in '{s}'"))
    };
    Ok((dim(h)?, dim(w)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let outcome = run_dacp_schedule(&cfg, Some(out))?;
    let r = &outcome.report;
    for m in r.epochs.iter().chain(&r.finetune) {
        println!(
            "epoch {:>3} phase {} lr {:.5} loss {:.4} r_g {:.3} r_c {:.3} train {:.1}% test {:.1}%",
            m.epoch,
            m.phase,
            m.lr,
            m.task_loss,
            m.r_g,
            m.r_c,
            m.train_accuracy_pct,
            m.test_accuracy_pct
        );
    }
    println!(
        "accuracy before pruning {:.2}%",
        r.accuracy_before_prune_pct
    );
    println!("{}", r.summary);
    println!("wrote {}", out.display());
    Ok(())
}

fn prune(checkpoint: &Path, tau: f64, out: &Path, hw: (usize, usize)) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let plan = resnet_union_adjust(&compute_prune_plan(&net, tau)?, &net);
    let pruned = apply_prune(&net, &plan)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_checkpoint(&pruned, &out.join("pruned.ckpt"))?;
    serde_json::to_writer_pretty(create(&out.join("plan.json"))?, &plan)?;
    let flops = FlopsReport::compare(&net, &pruned, hw)?;
    flops.write_csv(create(&out.join("flops.csv"))?)?;
    for p in &plan.layers {
        println!(
            "layer {:>2}: kept {}/{} filters",
            p.layer,
            p.keep_filters.len(),
            p.filters
        );
    }
    println!("Pruned FLOPs {:.2}%", flops.pruned_flops_pct);
    Ok(())
}

fn analyze(checkpoint: &Path, report: &Path, k: usize, seed: u64) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    fs::create_dir_all(report).with_context(|| format!("creating {}", report.display()))?;
    let conn = ConnectivityReport::of(&net);
    conn.write_csv(create(&report.join("connectivity.csv"))?)?;

    let mut clusters = Vec::new();
    for l in net.conv_indices() {
        let cv = channel_vectors(l, &net.conv(l).expect("conv index").weight);
        for (axis, count) in [(Axis::Channels, cv.channels), (Axis::Filters, cv.filters)] {
            if count < k {
                eprintln!("layer {l}: {count} vectors along {axis:?}, fewer than k = {k}; skipped");
                continue;
            }
            let c = cluster_channels(&cv, axis, k, seed)?;
            for w in &c.warnings {
                eprintln!("layer {l} {axis:?}: {w}");
            }
            clusters.push(c);
        }
    }
    write_cluster_csv(&clusters, create(&report.join("clusters.csv"))?)?;
    for l in &conn.layers {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "layer {:>2} {}x{}: channel_cp {} filter_cp {}",
            l.layer,
            l.channels,
            l.filters,
            show(l.channel_cp),
            show(l.filter_cp)
        );
    }
    Ok(())
}

fn flops(checkpoint: &Path, hw: (usize, usize)) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let costs = count_flops(&net, hw)?;
    println!(
        "{:>5} {:>8} {:>14} {:>10}",
        "layer", "kind", "flops", "params"
    );
    for c in &costs {
        println!(
            "{:>5} {:>8} {:>14} {:>10}",
            c.layer,
            c.kind.name(),
            c.flops,
            c.params
        );
    }
    let (f, p) = costs
        .iter()
        .fold((0, 0), |(f, p), c| (f + c.flops, p + c.params));
    println!("{:>5} {:>8} {:>14} {:>10}", "total", "", f, p);
    Ok(())
}

fn dump_features(checkpoint: &Path, layer: usize, image: &Path, out: &Path) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let img = read_netpbm(image)?;
    let Some(first) = net.conv_weights().first().map(|w| w.shape().c) else {
        bail!("checkpoint has no conv layers");
    };
    if img.c != first {
        bail!("image has {} channels, network expects {first}", img.c);
    }
    let export = export_feature_maps(&net, &img, layer, out)?;
    println!(
        "wrote {} tiles and {} ({}x{} grid)",
        export.tiles.len(),
        export.grid.display(),
        export.grid_cols,
        export.grid_rows
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => train(&config, seed, &out),
        Command::Prune {
            checkpoint,
            tau,
            out,
            input_hw,
        } => prune(&checkpoint, tau, &out, input_hw),
        Command::Analyze {
            checkpoint,
            report,
            clusters,
            seed,
        } => analyze(&checkpoint, &report, clusters, seed),
        Command::Flops {
            checkpoint,
            input_hw,
        } => flops(&checkpoint, input_hw),
        Command::DumpFeatures {
            checkpoint,
            layer,
            image,
            out,
        } => dump_features(&checkpoint, layer, &image, &out),
    }
}
