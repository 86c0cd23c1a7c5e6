use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stream_tucker::config::{ConfigMap, RunConfig};
use stream_tucker::data;
use stream_tucker::driver::{self, RunOptions};
use stream_tucker::error::{Error, Result};
use stream_tucker::eval;
use stream_tucker::model::{init_model, Hyperparams, SideInfo, SideInfoSet};
use stream_tucker::optimizer;
use stream_tucker::reference;
use stream_tucker::tensor::{DenseMatrix, Shape, SparseTensor};

/// Incremental sparse Tucker tensor completion with side information.
#[derive(Parser)]
#[command(name = "stream-tucker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over a growth plan and report per-step RMSE.
    Run(Overrides),
    /// Nonnegative clustering run with per-step purity.
    Cluster(Overrides),
    /// Verify the gradient kernel against finite differences and the dense
    /// matricized construction.
    Gradcheck(GradcheckArgs),
    /// Convert MovieLens 100K files into the native tensor/side formats.
    IngestMovielens(IngestArgs),
}

/// Config file plus per-key flag overrides (flags win).
#[derive(Args)]
struct Overrides {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<String>,
    /// Comma-separated full tensor dims, e.g. 943,1682,31.
    #[arg(long)]
    shape: Option<String>,
    /// Per-mode side info as MODE=SPEC, where SPEC is a file path or
    /// identity:<n>. Repeatable.
    #[arg(long = "side", value_name = "MODE=SPEC")]
    side: Vec<String>,
    /// multi-aspect | streaming:<mode> | batch:<passes>
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    start_dims: Option<String>,
    #[arg(long)]
    step_increments: Option<String>,
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    lambda_g: Option<String>,
    #[arg(long)]
    lambda_i: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Inner iterations per time step.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    nonnegative: Option<String>,
    #[arg(long)]
    missing_pct: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    n_splits: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    deterministic: Option<String>,
    /// Set to false for byte-reproducible CSVs (drops the elapsed column).
    #[arg(long)]
    record_timing: Option<String>,
    /// item_id,category labels file (cluster subcommand).
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    cluster_mode: Option<String>,
    #[arg(long)]
    w: Option<String>,
}

impl Overrides {
    fn build_map(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::from_file(path).map_err(|e| match e {
                Error::Io(io) => {
                    Error::Config(format!("cannot read config {}: {io}", path.display()))
                }
                other => other,
            })?,
            None => ConfigMap::default(),
        };
        map.set_if("tensor", &self.tensor);
        map.set_if("shape", &self.shape);
        for spec in &self.side {
            let (mode, value) = spec
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--side expects MODE=SPEC, got '{spec}'")))?;
            map.set(&format!("side.{}", mode.trim()), value.trim());
        }
        map.set_if("regime", &self.regime);
        map.set_if("start_dims", &self.start_dims);
        map.set_if("step_increments", &self.step_increments);
        map.set_if("ranks", &self.ranks);
        map.set_if("lambda_g", &self.lambda_g);
        map.set_if("lambda_i", &self.lambda_i);
        map.set_if("gamma", &self.gamma);
        map.set_if("k", &self.k);
        map.set_if("nonnegative", &self.nonnegative);
        map.set_if("missing_pct", &self.missing_pct);
        map.set_if("seed", &self.seed);
        map.set_if("n_splits", &self.n_splits);
        map.set_if("out_dir", &self.out_dir);
        map.set_if("threads", &self.threads);
        map.set_if("deterministic", &self.deterministic);
        map.set_if("record_timing", &self.record_timing);
        map.set_if("labels", &self.labels);
        map.set_if("cluster_mode", &self.cluster_mode);
        map.set_if("w", &self.w);
        Ok(map)
    }
}

#[derive(Args)]
struct GradcheckArgs {
    /// Tensor dims for the random instance.
    #[arg(long, default_value = "4,3,3")]
    dims: String,
    #[arg(long, default_value = "2,2,2")]
    ranks: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Negative-control hook: corrupt one gradient entry before checking.
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// MovieLens 100K u.data file (user, item, rating, timestamp).
    #[arg(long)]
    ratings: PathBuf,
    /// MovieLens 100K u.item file; adds the item-genre side matrix.
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long, default_value = "ingested")]
    out_dir: PathBuf,
    /// Shift (seconds) applied before week bucketing.
    #[arg(long, default_value_t = 0)]
    week_offset: i64,
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|f| {
            f.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad {what} '{f}': {e}")))
        })
        .collect()
}

fn echo_config(map: &ConfigMap, out_dir: &PathBuf) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("config.resolved"),
        format!(
            "# {} {}\n{}",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            map.render()
        ),
    )?;
    Ok(())
}

fn cmd_run(opts: &Overrides) -> Result<()> {
    let map = opts.build_map()?;
    let rc = RunConfig::resolve(&map)?;
    let tensor = data::load_tensor(&rc.tensor_path, rc.shape.clone())?;
    let side = rc.load_side()?;
    let dataset = data::Dataset::new(tensor, side, "run")?;
    echo_config(&map, &rc.out_dir)?;

    let run_opts = RunOptions {
        record_timing: rc.record_timing,
    };
    let mut summary = String::from("split,averaged_test_rmse\n");
    let mut averages = Vec::new();
    for split_index in 0..rc.n_splits {
        let split_seed = rc.hp.seed.wrapping_add(split_index as u64);
        let split = data::make_split(&dataset.tensor, rc.missing_pct, split_seed)?;
        let hp = Hyperparams {
            seed: split_seed,
            ..rc.hp.clone()
        };
        let result = driver::run_completion(
            &rc.ranks,
            &dataset.side,
            &split.train,
            Some(&split.test),
            &rc.plan,
            &hp,
            &run_opts,
        )?;
        let csv_path = rc.out_dir.join(format!("split_{split_index}.csv"));
        eval::emit_csv(&result.records, &csv_path)?;
        let avg = result.averaged_test_rmse();
        summary.push_str(&format!("{split_index},{}\n", fmt_avg(avg)));
        if let Some(v) = avg {
            averages.push(v);
        }
        println!("split {split_index}: averaged test RMSE {}", fmt_avg(avg));
    }
    let mean = (!averages.is_empty()).then(|| averages.iter().sum::<f64>() / averages.len() as f64);
    summary.push_str(&format!("mean,{}\n", fmt_avg(mean)));
    fs::write(rc.out_dir.join("summary.csv"), summary)?;
    println!("mean averaged test RMSE: {}", fmt_avg(mean));
    Ok(())
}

fn fmt_avg(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

fn cmd_cluster(opts: &Overrides) -> Result<()> {
    let map = opts.build_map()?;
    let rc = RunConfig::resolve(&map)?;
    let labels_path = rc
        .labels_path
        .as_ref()
        .ok_or_else(|| Error::Config("cluster needs a 'labels' file".into()))?;
    let labels = eval::load_labels(labels_path)?;
    let tensor = data::load_tensor(&rc.tensor_path, rc.shape.clone())?;
    let side = rc.load_side()?;
    let dataset = data::Dataset::new(tensor, side, "cluster")?;
    echo_config(&map, &rc.out_dir)?;

    let mut hp = rc.hp.clone();
    if !hp.nonnegative {
        eprintln!("warning: clustering requires the nonnegative variant; forcing nonnegative=true");
        hp.nonnegative = true;
    }
    let result = driver::run_clustering(
        &rc.ranks,
        &dataset.side,
        &dataset.tensor,
        &rc.plan,
        &hp,
        rc.cluster_mode,
        &labels,
        rc.w,
    )?;

    let mut csv = String::from("step,average_purity\n");
    for (step, p) in &result.per_step_purity {
        csv.push_str(&format!("{step},{p:.6}\n"));
    }
    fs::write(rc.out_dir.join("purity.csv"), csv)?;

    let mut report = String::new();
    for (col, items, p) in &result.final_report.per_cluster {
        let ids: Vec<String> = items.iter().map(|i| i.to_string()).collect();
        report.push_str(&format!(
            "cluster {col}: purity {p:.4}, top items {}\n",
            ids.join(" ")
        ));
    }
    report.push_str(&format!(
        "average purity: {:.4}\n",
        result.final_report.average_purity
    ));
    fs::write(rc.out_dir.join("clusters.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let dims = parse_usize_list(&args.dims, "dim")?;
    let ranks = parse_usize_list(&args.ranks, "rank")?;
    if ranks.len() != dims.len() {
        return Err(Error::Config(
            "dims and ranks must have equal length".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    // random dense side matrices with M_i about half of I_i
    let side = SideInfoSet::new(
        dims.iter()
            .map(|&d| {
                let m = d.div_ceil(2);
                let values: Vec<f64> = (0..d * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Ok(SideInfo::Dense(DenseMatrix::new(d, m, values)?))
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let hp = Hyperparams {
        lambda_g: 1e-3,
        lambda_i: vec![1e-3; dims.len()],
        seed: args.seed,
        ..Hyperparams::default()
    };
    let model = init_model(&ranks, &side, &hp)?;

    // half-density random observations
    let shape = Shape::new(dims.clone())?;
    let mut entries = Vec::new();
    for index in stream_tucker::tensor::IndexIter::new(&shape) {
        if rng.gen_bool(0.5) {
            entries.push((index, rng.gen_range(0.0..5.0)));
        }
    }
    let block = SparseTensor::new(shape, entries)?;

    let mut kernel = optimizer::gradients(&model, &side, &block, &hp)?;
    if args.corrupt {
        kernel.d_core.values_mut()[0] += 1e-3;
    }
    let fd = reference::gradients_finite_difference(&model, &side, &block, &hp, 1e-6)?;
    let dense = reference::gradients_dense(&model, &side, &block, &hp)?;

    let rel_fd = reference::max_rel_diff(&kernel, &fd);
    let abs_dense = reference::max_abs_diff(&kernel, &dense);
    println!("max relative error vs finite differences: {rel_fd:.3e} (threshold 1e-5)");
    println!("max absolute error vs dense construction: {abs_dense:.3e} (threshold 1e-10)");
    if rel_fd < 1e-5 && abs_dense < 1e-10 {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Error::NonFinite { step: 0 }).map_err(|_| {
            Error::InvalidParam("gradcheck failed: gradient mismatch above threshold".into())
        })
    }
}

const ML100K_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let tensor = data::movielens_ingest(&args.ratings, args.week_offset)?;
    fs::create_dir_all(&args.out_dir)?;

    let mut out = String::new();
    for (index, v) in tensor.iter() {
        let fields: Vec<String> = index.iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("{} {v}\n", fields.join(" ")));
    }
    fs::write(args.out_dir.join("tensor.txt"), out)?;
    let dims = tensor.shape().dims();
    println!(
        "tensor: {} entries, shape {}x{}x{}",
        tensor.nnz(),
        dims[0],
        dims[1],
        dims[2]
    );

    if let Some(items) = &args.items {
        let genres = data::movielens_item_genres(items)?;
        let SideInfo::Dense(matrix) = &genres else {
            unreachable!("genre matrix is dense by construction");
        };
        let mut csv = String::new();
        let mut labels = String::new();
        for r in 0..matrix.rows() {
            let row: Vec<String> = (0..matrix.cols())
                .map(|c| format!("{}", matrix.get(r, c) as i64))
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
            for (c, name) in ML100K_GENRES.iter().enumerate() {
                if matrix.get(r, c) != 0.0 {
                    labels.push_str(&format!("{r},{name}\n"));
                }
            }
        }
        fs::write(args.out_dir.join("genres.csv"), csv)?;
        fs::write(args.out_dir.join("labels.csv"), labels)?;
        println!("genres: {}x{} matrix", matrix.rows(), matrix.cols());
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParam(_) => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(opts) => cmd_run(opts),
        Command::Cluster(opts) => cmd_cluster(opts),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::IngestMovielens(args) => cmd_ingest(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
