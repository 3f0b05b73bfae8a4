//! `pacsim`: reproducible experiments over the PAC simulation toolkit.
//!
//! Every subcommand writes CSV (or a plain table for `cost --format table`)
//! with the seed echoed in header comments. Identical flags and seed give
//! byte-identical output for any `--workers` value; pass `--no-timestamp`
//! when diffing against golden files.

mod output;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use output::{num, opt_num, render_table, CsvDoc};
use pacsim_core::analysis::{self, profile_bit_sparsity, profile_network_sparsity, SparsityModel};
use pacsim_core::costmodel::{layer_cost, EnergyParams, Workload};
use pacsim_core::encoder::{
    compression_stats, counter_width_excl_full, encode_chunked, write_sparsity_dump, EncoderState,
};
use pacsim_core::inference::generator::{generate_model, GenConfig, EVAL_INPUTS_FILE};
use pacsim_core::inference::{load_network, Network, QuantTensor, RunOptions};
use pacsim_core::pac::Thresholds;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const DEFAULT_SEED: u64 = 42;
const SEED_ENV: &str = "PACSIM_SEED";

#[derive(Parser)]
#[command(
    name = "pacsim",
    version,
    about = "Bit-serial MAC simulation with sparsity-domain approximation"
)]
struct Cli {
    /// RNG seed; falls back to $PACSIM_SEED, then 42.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Suppress the timestamp comment for golden-file comparisons.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Output path (defaults to stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file; keys mirror flag names, flags win on conflict.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimator error at one (n, s_x, s_w) operating point.
    Rmse {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sx: Option<f64>,
        #[arg(long)]
        sw: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        /// Sparsity model: fixed (exact popcounts) or iid (Bernoulli bits).
        #[arg(long)]
        model: Option<String>,
    },
    /// Estimator error across DP lengths, with the log-log slope.
    Sweep {
        /// Comma-separated DP lengths, e.g. 256,512,1024.
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        sx: Option<f64>,
        #[arg(long)]
        sw: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Run a model directory; per-layer stats CSV and optional logits file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Raw u8 input file (may hold a whole batch).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Generate this many uniform random inputs instead.
        #[arg(long)]
        random_inputs: Option<usize>,
        /// Also run the exact path and report deviations and agreement.
        #[arg(long)]
        compare_exact: bool,
        /// Force every layer to EXACT mode.
        #[arg(long)]
        force_exact: bool,
        /// Override approximation width of hybrid layers.
        #[arg(long)]
        approx_bits: Option<u8>,
        /// Dynamic thresholds TH0,TH1,TH2 for hybrid layers.
        #[arg(long)]
        thresholds: Option<String>,
        /// Write final-layer codes (one row of bytes per input).
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// Cycle, memory-traffic, compression and energy accounting.
    Cost {
        #[arg(long)]
        p: Option<u8>,
        #[arg(long)]
        q: Option<u8>,
        #[arg(long)]
        approx_bits: Option<u8>,
        /// Comma-separated DP lengths.
        #[arg(long)]
        n: Option<String>,
        /// Output MACs sharing one activation tile.
        #[arg(long)]
        outputs: Option<u64>,
        /// Activation values moved through the cache (default: n).
        #[arg(long)]
        values: Option<u64>,
        /// Average digital cycles under dynamic configuration.
        #[arg(long)]
        dynamic_avg: Option<f64>,
        /// DRAM bits charged to both schemes (weight loading).
        #[arg(long)]
        dram_bits: Option<u64>,
        /// Energy parameter JSON file (defaults embedded).
        #[arg(long)]
        params: Option<PathBuf>,
        /// csv (default) or table.
        #[arg(long)]
        format: Option<String>,
    },
    /// Per-bit sparsity of model weights/activations or a raw tensor.
    Profile {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input file for activation profiling (first tensor of a batch).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Raw u8 tensor file to profile instead of a model.
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        bit_width: Option<u8>,
        /// Group length for --dump encoding.
        #[arg(long)]
        group_len: Option<usize>,
        /// Write a sparsity dump of the --tensor file, grouped by --group-len.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Emit a seeded desk-scale model directory with an evaluation batch.
    GenModel {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        input_hw: Option<usize>,
        #[arg(long)]
        approx_bits: Option<u8>,
        #[arg(long)]
        eval_count: Option<usize>,
        #[arg(long)]
        eval_jitter: Option<u8>,
    },
}

/// JSON config with the same keys as the long flags.
struct FileConfig(serde_json::Value);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Ok(FileConfig(serde_json::from_str(&text)?))
            }
            None => Ok(FileConfig(serde_json::Value::Null)),
        }
    }

    fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.0.get(key)
    }

    fn u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.as_u64())
    }

    fn usize(&self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.as_f64())
    }

    fn string(&self, key: &str) -> Option<String> {
        match self.get(key) {
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(serde_json::Value::Array(items)) => Some(
                items
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            _ => None,
        }
    }
}

fn resolve_seed(flag: Option<u64>, config: &FileConfig) -> u64 {
    flag.or_else(|| config.u64("seed"))
        .or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(DEFAULT_SEED)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| anyhow!("{what} `{t}`: {e}"))
        })
        .collect()
}

fn parse_thresholds(text: &str) -> Result<Thresholds> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("threshold `{t}`: {e}"))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        bail!("--thresholds needs exactly TH0,TH1,TH2");
    }
    Ok(Thresholds::new(parts[0], parts[1], parts[2])?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &config);
    let workers = cli.workers.or_else(|| config.usize("workers")).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let out = cli.out.as_deref();
    let suppress_ts = cli.no_timestamp;

    pool.install(|| match cli.cmd {
        Cmd::Rmse {
            n,
            sx,
            sw,
            trials,
            model,
        } => cmd_rmse(&config, seed, out, suppress_ts, n, sx, sw, trials, model),
        Cmd::Sweep { n, sx, sw, trials } => {
            cmd_sweep(&config, seed, out, suppress_ts, n, sx, sw, trials)
        }
        Cmd::Infer {
            model,
            input,
            random_inputs,
            compare_exact,
            force_exact,
            approx_bits,
            thresholds,
            logits,
        } => cmd_infer(
            &config,
            seed,
            out,
            suppress_ts,
            InferArgs {
                model,
                input,
                random_inputs,
                compare_exact,
                force_exact,
                approx_bits,
                thresholds,
                logits,
            },
        ),
        Cmd::Cost {
            p,
            q,
            approx_bits,
            n,
            outputs,
            values,
            dynamic_avg,
            dram_bits,
            params,
            format,
        } => cmd_cost(
            &config,
            seed,
            out,
            suppress_ts,
            p,
            q,
            approx_bits,
            n,
            outputs,
            values,
            dynamic_avg,
            dram_bits,
            params,
            format,
        ),
        Cmd::Profile {
            model,
            input,
            tensor,
            bit_width,
            group_len,
            dump,
        } => cmd_profile(
            &config,
            seed,
            out,
            suppress_ts,
            model,
            input,
            tensor,
            bit_width,
            group_len,
            dump,
        ),
        Cmd::GenModel {
            out_dir,
            channels,
            classes,
            input_hw,
            approx_bits,
            eval_count,
            eval_jitter,
        } => cmd_gen_model(
            &config,
            seed,
            out_dir,
            channels,
            classes,
            input_hw,
            approx_bits,
            eval_count,
            eval_jitter,
        ),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_rmse(
    config: &FileConfig,
    seed: u64,
    out: Option<&Path>,
    suppress_ts: bool,
    n: Option<usize>,
    sx: Option<f64>,
    sw: Option<f64>,
    trials: Option<u64>,
    model: Option<String>,
) -> Result<()> {
    let n = n.or_else(|| config.usize("n")).unwrap_or(1024);
    let sx = sx.or_else(|| config.f64("sx")).unwrap_or(0.2);
    let sw = sw.or_else(|| config.f64("sw")).unwrap_or(0.4);
    let trials = trials.or_else(|| config.u64("trials")).unwrap_or(100_000);
    let model = model
        .or_else(|| config.string("model"))
        .unwrap_or_else(|| "fixed".into());
    let model = match model.as_str() {
        "fixed" => SparsityModel::FixedCount,
        "iid" => SparsityModel::Bernoulli,
        other => bail!("unknown sparsity model `{other}` (use fixed or iid)"),
    };

    let r = analysis::rmse_experiment_with_model(n, sx, sw, trials, seed, model)?;
    let mut doc = CsvDoc::new("rmse");
    doc.comment("seed", seed);
    doc.timestamp(suppress_ts);
    doc.header(&[
        "n", "s_x", "s_w", "rmse_lsb", "rmse_pct", "bias", "trials", "seed",
    ]);
    doc.row(vec![
        r.n.to_string(),
        num(r.s_x),
        num(r.s_w),
        num(r.rmse_lsb),
        num(r.rmse_pct),
        num(r.bias),
        r.trials.to_string(),
        seed.to_string(),
    ]);
    Ok(doc.finish(out)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &FileConfig,
    seed: u64,
    out: Option<&Path>,
    suppress_ts: bool,
    n: Option<String>,
    sx: Option<f64>,
    sw: Option<f64>,
    trials: Option<u64>,
) -> Result<()> {
    let n_list = parse_list(
        &n.or_else(|| config.string("n"))
            .unwrap_or_else(|| "256,512,1024,2048,4096".into()),
        "DP length",
    )?;
    let sx = sx.or_else(|| config.f64("sx")).unwrap_or(0.3);
    let sw = sw.or_else(|| config.f64("sw")).unwrap_or(0.5);
    let trials = trials.or_else(|| config.u64("trials")).unwrap_or(100_000);

    let sweep = analysis::rmse_sweep(&n_list, sx, sw, trials, seed)?;
    let slope = sweep.slope.map(num).unwrap_or_else(|| "nan".into());
    let mut doc = CsvDoc::new("sweep");
    doc.comment("seed", seed);
    doc.timestamp(suppress_ts);
    doc.header(&[
        "n", "s_x", "s_w", "rmse_lsb", "rmse_pct", "bias", "trials", "seed", "slope",
    ]);
    for r in &sweep.rows {
        doc.row(vec![
            r.n.to_string(),
            num(r.s_x),
            num(r.s_w),
            num(r.rmse_lsb),
            num(r.rmse_pct),
            num(r.bias),
            r.trials.to_string(),
            seed.to_string(),
            slope.clone(),
        ]);
    }
    Ok(doc.finish(out)?)
}

struct InferArgs {
    model: PathBuf,
    input: Option<PathBuf>,
    random_inputs: Option<usize>,
    compare_exact: bool,
    force_exact: bool,
    approx_bits: Option<u8>,
    thresholds: Option<String>,
    logits: Option<PathBuf>,
}

fn load_input_batch(net: &Network, path: &Path) -> Result<Vec<QuantTensor>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let numel: usize = net.input_shape().iter().product();
    if bytes.is_empty() || bytes.len() % numel != 0 {
        bail!(
            "input file {} holds {} bytes, not a multiple of the {numel}-byte input",
            path.display(),
            bytes.len()
        );
    }
    bytes
        .chunks_exact(numel)
        .map(|c| Ok(net.input_tensor(c.to_vec())?))
        .collect()
}

fn cmd_infer(
    config: &FileConfig,
    seed: u64,
    out: Option<&Path>,
    suppress_ts: bool,
    args: InferArgs,
) -> Result<()> {
    // Comparison against the exact path is meaningless when the main run is
    // itself forced exact.
    let compare_exact = (args.compare_exact
        || config
            .get("compare_exact")
            .is_some_and(|v| v.as_bool() == Some(true)))
        && !args.force_exact;
    let net = load_network(&args.model)?;
    let inputs: Vec<QuantTensor> = match (&args.input, args.random_inputs) {
        (Some(path), None) => load_input_batch(&net, path)?,
        (None, Some(k)) => (0..k)
            .map(|i| net.random_input(seed.wrapping_add(i as u64)))
            .collect(),
        (None, None) => {
            // Fall back to the model's evaluation batch when present.
            let eval = args.model.join(EVAL_INPUTS_FILE);
            if eval.exists() {
                load_input_batch(&net, &eval)?
            } else {
                bail!("no inputs: pass --input FILE or --random-inputs K");
            }
        }
        (Some(_), Some(_)) => bail!("--input and --random-inputs are mutually exclusive"),
    };

    let thresholds = match args.thresholds.or_else(|| config.string("thresholds")) {
        Some(t) => Some(parse_thresholds(&t)?),
        None => None,
    };
    let opts = RunOptions {
        force_exact: args.force_exact,
        approx_bits: args
            .approx_bits
            .or_else(|| config.u64("approx_bits").map(|v| v as u8)),
        thresholds,
        compare_exact,
        record_layer_inputs: false,
    };

    struct Agg {
        outputs: u64,
        cells: u64,
        spec_sum: f64,
        dev_sum_sq: u128,
        dev_count: u64,
    }
    let mut agg: Vec<Agg> = net
        .layers()
        .iter()
        .map(|_| Agg {
            outputs: 0,
            cells: 0,
            spec_sum: 0.0,
            dev_sum_sq: 0,
            dev_count: 0,
        })
        .collect();
    let mut agree = 0u64;
    let mut logit_bytes = Vec::new();
    let mut last_mode: Vec<&'static str> = Vec::new();

    for input in &inputs {
        let r = net.run(input, &opts)?;
        if Some(r.argmax) == r.exact_argmax {
            agree += 1;
        }
        for (a, s) in agg.iter_mut().zip(&r.layer_stats) {
            a.outputs += s.outputs;
            a.cells += s.digital_cells_total;
            a.spec_sum += s.spec_sum;
            a.dev_sum_sq += s.dev_sum_sq;
            a.dev_count += s.dev_count;
        }
        last_mode = r.layer_stats.iter().map(|s| s.mode).collect();
        logit_bytes.extend_from_slice(&r.logits);
    }

    if let Some(path) = &args.logits {
        std::fs::write(path, &logit_bytes)?;
    }

    let mut doc = CsvDoc::new("infer");
    doc.comment("seed", seed);
    doc.comment("model", args.model.display());
    doc.comment("inputs", inputs.len());
    if compare_exact {
        doc.comment("argmax_agreement", num(agree as f64 / inputs.len() as f64));
    }
    doc.timestamp(suppress_ts);
    doc.header(&[
        "layer",
        "name",
        "kind",
        "mode",
        "n",
        "outputs",
        "avg_digital_cells",
        "avg_spec",
        "dev_rmse_lsb",
        "dev_rmse_pct_range",
    ]);
    for (i, layer) in net.layers().iter().enumerate() {
        let a = &agg[i];
        let dev_rmse = (a.dev_count > 0).then(|| (a.dev_sum_sq as f64 / a.dev_count as f64).sqrt());
        let range = layer.reduction_len() as f64 * 255.0 * 255.0;
        doc.row(vec![
            i.to_string(),
            layer.name().to_string(),
            layer.spec().kind.as_str().to_string(),
            last_mode.get(i).copied().unwrap_or("").to_string(),
            layer.reduction_len().to_string(),
            a.outputs.to_string(),
            num(a.cells as f64 / a.outputs as f64),
            num(a.spec_sum / a.outputs as f64),
            opt_num(dev_rmse),
            opt_num(dev_rmse.map(|r| 100.0 * r / range)),
        ]);
    }
    Ok(doc.finish(out)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_cost(
    config: &FileConfig,
    seed: u64,
    out: Option<&Path>,
    suppress_ts: bool,
    p: Option<u8>,
    q: Option<u8>,
    approx_bits: Option<u8>,
    n: Option<String>,
    outputs: Option<u64>,
    values: Option<u64>,
    dynamic_avg: Option<f64>,
    dram_bits: Option<u64>,
    params: Option<PathBuf>,
    format: Option<String>,
) -> Result<()> {
    let p = p.or_else(|| config.u64("p").map(|v| v as u8)).unwrap_or(8);
    let q = q.or_else(|| config.u64("q").map(|v| v as u8)).unwrap_or(8);
    let approx_bits = approx_bits
        .or_else(|| config.u64("approx_bits").map(|v| v as u8))
        .unwrap_or(4);
    let n_list = parse_list(
        &n.or_else(|| config.string("n"))
            .unwrap_or_else(|| "64,512".into()),
        "DP length",
    )?;
    let outputs = outputs.or_else(|| config.u64("outputs")).unwrap_or(256);
    let dynamic_avg = dynamic_avg.or_else(|| config.f64("dynamic_avg"));
    let dram_bits = dram_bits.or_else(|| config.u64("dram_bits")).unwrap_or(0);
    let format = format
        .or_else(|| config.string("format"))
        .unwrap_or_else(|| "csv".into());
    let energy = match params {
        Some(path) => EnergyParams::from_json_file(&path)?,
        None => EnergyParams::default(),
    };

    let columns = [
        "p",
        "q",
        "approx_bits",
        "dynamic_avg",
        "n",
        "outputs",
        "digital_cycles_per_mac",
        "sparsity_ops_per_mac",
        "cycle_reduction_pct",
        "traffic_bits_baseline",
        "traffic_bits_hybrid",
        "traffic_reduction_pct",
        "compress_raw_bits",
        "compress_encoded_bits",
        "compress_ratio_pct",
        "compress_encoded_bits_excl_full",
        "energy_baseline_fj",
        "energy_hybrid_fj",
        "energy_improvement",
    ];
    let mut rows = Vec::new();
    for &n in &n_list {
        let report = layer_cost(
            &Workload {
                outputs,
                n,
                p,
                q,
                approx_bits,
                dynamic_avg,
                activation_values: values.or_else(|| config.u64("values")).unwrap_or(n as u64),
                weight_dram_bits: dram_bits,
            },
            &energy,
        )?;
        let comp = compression_stats(p, n)?;
        let comp_excl = p as u64 * counter_width_excl_full(n) as u64;
        rows.push(vec![
            p.to_string(),
            q.to_string(),
            approx_bits.to_string(),
            opt_num(dynamic_avg),
            n.to_string(),
            outputs.to_string(),
            num(report.cycles.digital),
            num(report.cycles.sparsity_ops),
            num(report.cycles.reduction_pct()),
            report.traffic.traffic_bits_baseline.to_string(),
            report.traffic.traffic_bits_hybrid.to_string(),
            num(report.traffic.reduction_pct),
            comp.raw_bits.to_string(),
            comp.encoded_bits.to_string(),
            num(100.0 * comp.ratio),
            comp_excl.to_string(),
            num(report.energy_baseline.total_fj()),
            num(report.energy_hybrid.total_fj()),
            num(report.energy_improvement()),
        ]);
    }

    match format.as_str() {
        "csv" => {
            let mut doc = CsvDoc::new("cost");
            doc.comment("seed", seed);
            doc.timestamp(suppress_ts);
            doc.header(&columns);
            for row in rows {
                doc.row(row);
            }
            Ok(doc.finish(out)?)
        }
        "table" => {
            let text = render_table(&columns, &rows);
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        other => bail!("unknown format `{other}` (use csv or table)"),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_profile(
    config: &FileConfig,
    seed: u64,
    out: Option<&Path>,
    suppress_ts: bool,
    model: Option<PathBuf>,
    input: Option<PathBuf>,
    tensor: Option<PathBuf>,
    bit_width: Option<u8>,
    group_len: Option<usize>,
    dump: Option<PathBuf>,
) -> Result<()> {
    let bit_width = bit_width
        .or_else(|| config.u64("bit_width").map(|v| v as u8))
        .unwrap_or(8);
    let mut doc = CsvDoc::new("profile");
    doc.comment("seed", seed);
    doc.timestamp(suppress_ts);
    doc.header(&["layer", "name", "tensor", "bit", "ratio"]);

    match (model, tensor) {
        (Some(dir), None) => {
            let net = load_network(&dir)?;
            let first_input = match input {
                Some(path) => Some(
                    load_input_batch(&net, &path)?
                        .into_iter()
                        .next()
                        .expect("batch validated non-empty"),
                ),
                None => None,
            };
            let profiles = profile_network_sparsity(&net, first_input.as_ref())?;
            for p in profiles {
                for (bit, &ratio) in p.weight_ratios.iter().enumerate() {
                    doc.row(vec![
                        p.layer.to_string(),
                        p.name.clone(),
                        "weights".into(),
                        bit.to_string(),
                        num(ratio),
                    ]);
                }
                if let Some(acts) = &p.activation_ratios {
                    for (bit, &ratio) in acts.iter().enumerate() {
                        doc.row(vec![
                            p.layer.to_string(),
                            p.name.clone(),
                            "activations".into(),
                            bit.to_string(),
                            num(ratio),
                        ]);
                    }
                }
            }
        }
        (None, Some(path)) => {
            let bytes =
                std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "tensor".into());
            for (bit, &ratio) in profile_bit_sparsity(&bytes, bit_width)?.iter().enumerate() {
                doc.row(vec![
                    "0".into(),
                    name.clone(),
                    "tensor".into(),
                    bit.to_string(),
                    num(ratio),
                ]);
            }
            if let Some(dump_path) = dump {
                let group = group_len
                    .or_else(|| config.usize("group_len"))
                    .unwrap_or(bytes.len());
                if group == 0 || bytes.len() % group != 0 {
                    bail!(
                        "--group-len {group} does not divide tensor length {}",
                        bytes.len()
                    );
                }
                let groups = bytes
                    .chunks_exact(group)
                    .map(|c| {
                        let st = EncoderState::new(bit_width, group)?;
                        encode_chunked(st, &[c])
                    })
                    .collect::<pacsim_core::Result<Vec<_>>>()?;
                let file = std::fs::File::create(&dump_path)?;
                write_sparsity_dump(std::io::BufWriter::new(file), &groups)?;
            }
        }
        (Some(_), Some(_)) => bail!("--model and --tensor are mutually exclusive"),
        (None, None) => bail!("profile needs --model DIR or --tensor FILE"),
    }
    Ok(doc.finish(out)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_model(
    config: &FileConfig,
    seed: u64,
    out_dir: PathBuf,
    channels: Option<usize>,
    classes: Option<usize>,
    input_hw: Option<usize>,
    approx_bits: Option<u8>,
    eval_count: Option<usize>,
    eval_jitter: Option<u8>,
) -> Result<()> {
    let defaults = GenConfig::default();
    let cfg = GenConfig {
        seed,
        channels: channels
            .or_else(|| config.usize("channels"))
            .unwrap_or(defaults.channels),
        classes: classes
            .or_else(|| config.usize("classes"))
            .unwrap_or(defaults.classes),
        input_hw: input_hw
            .or_else(|| config.usize("input_hw"))
            .unwrap_or(defaults.input_hw),
        approx_bits: approx_bits
            .or_else(|| config.u64("approx_bits").map(|v| v as u8))
            .unwrap_or(defaults.approx_bits),
        eval_count: eval_count
            .or_else(|| config.usize("eval_count"))
            .unwrap_or(defaults.eval_count),
        eval_jitter: eval_jitter
            .or_else(|| config.u64("eval_jitter").map(|v| v as u8))
            .unwrap_or(defaults.eval_jitter),
    };
    generate_model(&out_dir, &cfg)?;
    println!(
        "wrote {} (seed {seed}, {}x{}x3 input, {} channels, {} classes, eval batch {})",
        out_dir.display(),
        cfg.input_hw,
        cfg.input_hw,
        cfg.channels,
        cfg.classes,
        cfg.eval_count
    );
    Ok(())
}
