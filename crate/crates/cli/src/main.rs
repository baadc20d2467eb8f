use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvtriplet::checkpoint::{load_checkpoint_full, save_checkpoint_with_meta};
use mvtriplet::crowdsim::{
    generate_dataset, sample_triplets, setting_workers, write_png, DatasetManifest, RenderParams,
    Split,
};
use mvtriplet::data::{read_triplets, write_triplets};
use mvtriplet::eval::{evaluate, export_embeddings, EvalOptions, Metric};
use mvtriplet::model::Activation;
use mvtriplet::optim::OptimizerKind;
use mvtriplet::trainer::{fit, write_loss_log, TrainConfig};
use mvtriplet::{EncoderConfig, Error};
use mvtriplet_taskserver::{build_router, serve, ServerConfig};

#[derive(Parser)]
#[command(name = "mvtriplet", version, about = "Multiview embeddings from triplet comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a colored-digit corpus: manifest.txt and items/<id>.png.
    Generate(GenerateArgs),
    /// Simulate worker answers on one split: triplets-<split>.txt.
    Simulate(SimulateArgs),
    /// Train an encoder: checkpoint-<epoch> and loss.log.
    Train(TrainArgs),
    /// Score a checkpoint: eval-report.txt and eval-report.json.
    Eval(EvalArgs),
    /// Write per-item, per-view embeddings.
    Export(ExportArgs),
    /// Run the annotation task server.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    items_per_category: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    setting: u8,
    #[arg(long)]
    n_per_worker: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    manifest: PathBuf,
    /// Items to draw from: train or test.
    #[arg(long, default_value = "train")]
    split: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long, default_value_t = 2)]
    views: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Hidden widths, comma separated; the last one is per view.
    #[arg(long, default_value = "256,64", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value = "relu")]
    activation: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_entropy: bool,
    #[arg(long)]
    entropy_stop_grad: bool,
    #[arg(long)]
    deterministic: bool,
    /// Also checkpoint every N epochs (0: final epoch only).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    triplets: PathBuf,
    /// `all` or a comma-separated subset of accuracy, kmeans, agglomerative,
    /// linear, anchors, preferences.
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long, default_value_t = 1)]
    anchors_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    answers_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    split: Option<String>,
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn generate(a: GenerateArgs) -> Result<(), Error> {
    let manifest = generate_dataset(a.seed, a.items_per_category, RenderParams::default())?;
    let items_dir = a.out.join("items");
    create_dir(&items_dir)?;
    manifest.write(&a.out.join("manifest.txt"))?;
    for item in manifest.items() {
        write_png(&manifest.render(item.id)?, &items_dir.join(format!("{}.png", item.id)))?;
    }
    println!("wrote {} items to {}", manifest.len(), a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split: Split = a.split.parse()?;
    let workers = setting_workers(a.setting)?;
    let triplets = sample_triplets(&manifest.split_items(split), &workers, a.n_per_worker, a.seed)?;
    create_dir(&a.out)?;
    let path = a.out.join(format!("triplets-{split}.txt"));
    write_triplets(&path, &triplets)?;
    println!("wrote {} triplets to {}", triplets.len(), path.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let triplets = read_triplets(&a.triplets)?;
    let r = &manifest.render;
    let config = EncoderConfig {
        height: r.height,
        width: r.width,
        channels: 3,
        hidden: a.hidden,
        embed_dim: a.dim,
        num_views: a.views,
        activation: a.activation.parse::<Activation>()?,
        seed: a.seed,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        optimizer: a.optimizer.parse::<OptimizerKind>()?,
        seed: a.seed,
        use_entropy: !a.no_entropy,
        entropy_stop_gradient: a.entropy_stop_grad,
        deterministic: a.deterministic,
        checkpoint_every: a.checkpoint_every,
    };
    let items = manifest.render_all(None)?;
    create_dir(&a.out)?;
    let mut meta = BTreeMap::new();
    meta.insert("use_entropy".to_string(), cfg.use_entropy.to_string());
    meta.insert("entropy_stop_gradient".to_string(), cfg.entropy_stop_gradient.to_string());
    meta.insert("optimizer".to_string(), cfg.optimizer.to_string());
    meta.insert("learning_rate".to_string(), cfg.learning_rate.to_string());
    meta.insert("batch_size".to_string(), cfg.batch_size.to_string());
    let out = a.out.clone();
    let every = cfg.checkpoint_every;
    let mut history = Vec::new();
    let outcome = fit(&config, &items, &triplets, &cfg, |r| {
        history.push(r.mean_loss);
        write_loss_log(&out.join("loss.log"), &history)?;
        if (every > 0 && r.epoch % every == 0) || r.epoch == cfg.epochs {
            let mut meta = meta.clone();
            meta.insert("epoch".to_string(), r.epoch.to_string());
            save_checkpoint_with_meta(r.params, &config, &meta, &out.join(format!("checkpoint-{}", r.epoch)))?;
        }
        eprintln!("epoch {} loss {:.6}", r.epoch, r.mean_loss);
        Ok(())
    })?;
    if cfg.epochs == 0 {
        meta.insert("epoch".to_string(), "0".to_string());
        save_checkpoint_with_meta(&outcome.params, &config, &meta, &out.join("checkpoint-0"))?;
        write_loss_log(&out.join("loss.log"), &[])?;
    }
    println!("trained {} epochs, checkpoint in {}", cfg.epochs, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint_full(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let triplets = read_triplets(&a.triplets)?;
    let use_entropy = match ckpt.meta.get("use_entropy").map(String::as_str) {
        None | Some("true") => true,
        Some("false") => false,
        Some(other) => {
            return Err(Error::Checkpoint {
                field: "meta use_entropy".into(),
                message: format!("expected true or false, got {other:?}"),
            })
        }
    };
    let opts = EvalOptions {
        metrics: Metric::parse_list(&a.metrics)?,
        anchors_k: a.anchors_k,
        seed: a.seed,
        use_entropy,
    };
    let items = manifest.render_all(None)?;
    let report = evaluate(&ckpt.params, &ckpt.config, &manifest, &items, &triplets, &opts)?;
    create_dir(&a.out)?;
    report.write(&a.out, "eval-report")?;
    print!("{}", report.to_text());
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint_full(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split = a.split.as_deref().map(str::parse::<Split>).transpose()?;
    export_embeddings(&ckpt.params, &ckpt.config, &manifest, split, &a.out)?;
    println!("wrote embeddings to {}", a.out.display());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), Error> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split = a.split.as_deref().map(str::parse::<Split>).transpose()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: "tokio runtime".into(),
        source: e,
    })?;
    runtime.block_on(async move {
        let config = ServerConfig {
            answers_path: a.answers_out.clone(),
            seed: a.seed,
            split,
        };
        let router = build_router(manifest, config)
            .await
            .map_err(|e| Error::Config(e.to_string()))?;
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::Io { path: addr.clone().into(), source: e })?;
        eprintln!("serving on http://{addr}, answers -> {}", a.answers_out.display());
        serve(listener, router).await.map_err(|e| Error::Io { path: addr.into(), source: e })
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
