//! The four subcommands. Each takes a validated [`RunConfig`] and writes its
//! artifacts into `out`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use csm_core::data::{gen_1d_toy, gen_2d_toy, gen_binary_mixture, Dataset};
use csm_core::exact::total_variation;
use csm_core::graph::{parse_edges, NeighborhoodStructure, StructureKind};
use csm_core::models::{
    normalized_masses, AnyModel, LogitTableModel, MaskedARModel, ModelKind, Parameterized, ScoreNetModel,
};
use csm_core::rng::stream_rng;
use csm_core::samplers::{run_annealed, run_chain, ChainConfig, ChainRun};
use csm_core::space::{DiscreteSpace, State};
use csm_core::train::{train, BoundObjective, LogRow, TrainConfig};
use csm_core::verify::{all_passed, run_suite, CheckResult};
use rand::Rng;
use serde_json::json;

use crate::config::{ChainInit, DatasetKind, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{self, write_atomic, Checkpoint};

// RNG streams derived from the run seed. Data generation uses the seed
// itself; chains use CHAIN_STREAM + chain index.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const CHAIN_STREAM: u64 = 1 << 32;

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Ok(match cfg.dataset {
        DatasetKind::Toy1d => gen_1d_toy(cfg.n_samples, cfg.seed)?,
        DatasetKind::Checkerboard | DatasetKind::Spirals | DatasetKind::Rings => {
            gen_2d_toy(cfg.dataset.name(), cfg.n_samples, cfg.bins, cfg.seed)?
        }
        DatasetKind::BinaryMixture => gen_binary_mixture(cfg.bits, cfg.components, cfg.n_samples, cfg.seed)?,
        DatasetKind::Csv => formats::load_tabular_csv(cfg.dataset_path.as_deref().expect("validated"), cfg.header)?,
    })
}

pub fn load_structure(cfg: &RunConfig, space: &DiscreteSpace) -> Result<NeighborhoodStructure> {
    if cfg.structure == StructureKind::Explicit {
        let path = cfg.edges_path.as_deref().expect("validated");
        let edges = parse_edges(&formats::read_text(path)?)?;
        return Ok(NeighborhoodStructure::from_edges(space.clone(), &edges)?);
    }
    Ok(NeighborhoodStructure::new(cfg.structure, space.clone(), cfg.boundary)?)
}

fn new_model<R: Rng>(cfg: &RunConfig, structure: &NeighborhoodStructure, rng: &mut R) -> Result<AnyModel> {
    let space = structure.space().clone();
    Ok(match cfg.model {
        ModelKind::LogitTable => AnyModel::LogitTable(LogitTableModel::uniform(space)?),
        ModelKind::ScoreNet => AnyModel::ScoreNet(ScoreNetModel::new(structure, &cfg.hidden, cfg.encoding, rng)?),
        ModelKind::MaskedAR => AnyModel::MaskedAR(MaskedARModel::new(space, &cfg.hidden, rng)?),
    })
}

fn header_for(cfg: &RunConfig, model: &AnyModel, space: &DiscreteSpace) -> serde_json::Value {
    let degree = match model {
        AnyModel::ScoreNet(m) => Some(m.degree()),
        _ => None,
    };
    json!({
        "model": cfg.model.name(),
        "dims": space.dims(),
        "hidden": cfg.hidden,
        "encoding": cfg.encoding.name(),
        "degree": degree,
        "structure": cfg.structure.name(),
        "boundary": cfg.boundary.name(),
        "objective": cfg.objective.name(),
        "noise_w": cfg.noise_w,
        "seed": cfg.seed,
    })
}

/// Rebuilds every level of a checkpoint over `structure`.
pub fn models_from_checkpoint(
    ck: &Checkpoint,
    structure: &NeighborhoodStructure,
    path: &Path,
) -> Result<Vec<AnyModel>> {
    let bad = |m: String| CliError::format(path, m);
    let kind: ModelKind = ck.str_field("model").ok_or_else(|| bad("header lacks `model`".into()))?.parse()?;
    let dims = ck.usize_list("dims").ok_or_else(|| bad("header lacks `dims`".into()))?;
    let space = DiscreteSpace::new(dims)?;
    if &space != structure.space() {
        return Err(bad(format!(
            "checkpoint space {:?} does not match structure space {:?}",
            space.dims(),
            structure.space().dims()
        )));
    }
    let hidden = ck.usize_list("hidden").unwrap_or_default();
    let encoding = ck.str_field("encoding").unwrap_or("affine").parse()?;
    // Parameters are overwritten below; the rng only shapes the template.
    let mut rng = stream_rng(0, 0);
    let template = match kind {
        ModelKind::LogitTable => AnyModel::LogitTable(LogitTableModel::uniform(space)?),
        ModelKind::MaskedAR => AnyModel::MaskedAR(MaskedARModel::new(space, &hidden, &mut rng)?),
        ModelKind::ScoreNet => {
            let degree =
                ck.header.get("degree").and_then(|v| v.as_u64()).ok_or_else(|| bad("header lacks `degree`".into()))?
                    as usize;
            if structure.fixed_degree() != Some(degree) {
                return Err(CliError::Config(format!(
                    "structure/model degree mismatch: the checkpoint's score network outputs {degree} entries, structure `{}` has degree {:?}",
                    structure.kind(),
                    structure.fixed_degree()
                )));
            }
            AnyModel::ScoreNet(ScoreNetModel::with_degree(space, degree, &hidden, encoding, &mut rng)?)
        }
    };
    ck.levels
        .iter()
        .map(|params| {
            if params.len() != template.num_params() {
                return Err(bad(format!("{} parameters stored, model needs {}", params.len(), template.num_params())));
            }
            let mut m = template.clone();
            m.params_mut().copy_from_slice(params);
            Ok(m)
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Trains one model per noise level (one level unless the objective is
/// dcsm) and writes the checkpoint, logs, resolved config and, when the
/// dataset has one, its exact distribution.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let structure = load_structure(cfg, &data.space)?;
    let out = &cfg.out;
    write_atomic(&out.join("config.resolved"), cfg.resolved().as_bytes())?;
    if let Some(truth) = &data.ground_truth {
        write_atomic(&out.join("ground_truth.csv"), formats::format_distribution(truth)?.as_bytes())?;
    }
    let mut model = new_model(cfg, &structure, &mut stream_rng(cfg.seed, INIT_STREAM))?;
    let tcfg = TrainConfig {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        lr_end: cfg.lr_end,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        log_every: cfg.log_every,
    };
    let levels: Vec<Option<f64>> =
        if cfg.noise_w.is_empty() { vec![None] } else { cfg.noise_w.iter().map(|&w| Some(w)).collect() };
    let mut log = String::from("level,iteration,objective,tv\n");
    let mut timing = String::from("level,iteration,seconds\n");
    let mut params = Vec::new();
    let start = Instant::now();
    for (level, w) in levels.into_iter().enumerate() {
        let bound = BoundObjective::new(cfg.objective, structure.clone(), &data, w)?.with_smoothing(cfg.smoothing)?;
        let mut rng = stream_rng(cfg.seed, TRAIN_STREAM + level as u64);
        let mut last: Option<LogRow> = None;
        train(&mut model, &bound, &data, &tcfg, &mut rng, |row| {
            let tv = row.tv.map_or(String::new(), fmt_f64);
            let _ = writeln!(log, "{level},{},{},{tv}", row.iteration, fmt_f64(row.objective));
            let _ = writeln!(timing, "{level},{},{:.6}", row.iteration, start.elapsed().as_secs_f64());
            last = Some(row.clone());
        })?;
        if let Some(row) = last {
            let tv = row.tv.map_or(String::new(), |t| format!(" tv {t:.6}"));
            println!("level {level} iteration {} objective {:.6}{tv}", row.iteration, row.objective);
        }
        params.push(model.params().to_vec());
    }
    write_atomic(&out.join("train_log.csv"), log.as_bytes())?;
    write_atomic(&out.join("train_timing.csv"), timing.as_bytes())?;
    let ck = Checkpoint::new(header_for(cfg, &model, &data.space), params);
    write_atomic(&cfg.checkpoint_path(), &ck.to_bytes())?;
    Ok(())
}

/// Runs `chains` MH chains from the checkpoint, annealing through the noise
/// levels (most noise first) when it holds several.
pub fn cmd_sample(cfg: &RunConfig) -> Result<()> {
    let path = cfg.checkpoint_path();
    let ck = Checkpoint::load(&path)?;
    let space =
        DiscreteSpace::new(ck.usize_list("dims").ok_or_else(|| CliError::format(&path, "header lacks `dims`"))?)?;
    let structure = load_structure(cfg, &space)?;
    let models = models_from_checkpoint(&ck, &structure, &path)?;
    let mut order: Vec<usize> = (0..models.len()).collect();
    if let Some(ws) = ck.f64_list("noise_w").filter(|w| w.len() == models.len()) {
        order.sort_by(|&a, &b| ws[a].total_cmp(&ws[b]));
    }
    let ordered: Vec<&AnyModel> = order.iter().map(|&i| &models[i]).collect();
    let data = match cfg.init {
        ChainInit::Data => {
            let d = load_dataset(cfg)?;
            if d.space != space {
                return Err(CliError::Config(format!(
                    "dataset space {:?} does not match the checkpoint's {:?}",
                    d.space.dims(),
                    space.dims()
                )));
            }
            Some(d)
        }
        ChainInit::Uniform => None,
    };
    let chain_cfg =
        ChainConfig { steps: cfg.steps, burn_in: cfg.burn_in, thin: cfg.thin, proposal: cfg.proposal, support: None };
    let mut samples: Vec<State> = Vec::new();
    let (mut accepted, mut proposed) = (0u64, 0u64);
    for c in 0..cfg.chains {
        let mut rng = stream_rng(cfg.seed, CHAIN_STREAM + c as u64);
        let init = match &data {
            Some(d) => d.samples[rng.random_range(0..d.len())].clone(),
            None => space.dims().iter().map(|&n| rng.random_range(0..n)).collect(),
        };
        let run: ChainRun = if ordered.len() == 1 {
            run_chain(ordered[0], &structure, init, &chain_cfg, rng)?
        } else {
            run_annealed(&ordered, &structure, init, &chain_cfg, rng)?
        };
        accepted += run.accepted;
        proposed += run.proposed;
        samples.extend(run.samples);
    }
    let out = &cfg.out;
    write_atomic(&out.join("samples.csv"), formats::format_states(&samples).as_bytes())?;
    let mut summary = format!(
        "key,value\nchains,{}\nsamples,{}\naccepted,{accepted}\nproposed,{proposed}\nacceptance_rate,{}\n",
        cfg.chains,
        samples.len(),
        if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 }
    );
    if space.is_enumerable() {
        let hist = csm_core::exact::TabularDistribution::empirical(space.clone(), &samples)?;
        if space.ndim() == 2 {
            write_atomic(&out.join("histogram.pgm"), formats::format_pgm(&space, hist.masses())?.as_bytes())?;
        }
        if let Some(d) = &data {
            let tv = total_variation(hist.masses(), d.empirical()?.masses());
            let _ = writeln!(summary, "tv_vs_data,{tv:e}");
            println!("tv vs data histogram {tv:.6}");
        }
    }
    write_atomic(&out.join("sample_summary.csv"), summary.as_bytes())?;
    println!("{} samples from {} chain(s), acceptance {accepted}/{proposed}", samples.len(), cfg.chains);
    Ok(())
}

/// Per-sample log-likelihood (nats) of the dataset under the checkpoint's
/// least-noisy level, followed by a `mean` row.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let path = cfg.checkpoint_path();
    let ck = Checkpoint::load(&path)?;
    let data = load_dataset(cfg)?;
    let structure = load_structure(cfg, &data.space)?;
    let models = models_from_checkpoint(&ck, &structure, &path)?;
    let pick = match ck.f64_list("noise_w").filter(|w| w.len() == models.len()) {
        Some(ws) => (0..ws.len()).max_by(|&a, &b| ws[a].total_cmp(&ws[b])).expect("non-empty"),
        None => models.len() - 1,
    };
    let model = models[pick].density_or_err()?;
    let ll: Vec<f64> = if model.is_normalized() {
        data.samples.iter().map(|x| csm_core::models::log_mass(model, x)).collect::<csm_core::Result<_>>()?
    } else {
        let q = normalized_masses(model)?;
        data.samples.iter().map(|x| Ok(q[data.space.index_of(x)?].ln())).collect::<csm_core::Result<_>>()?
    };
    let mean = ll.iter().sum::<f64>() / ll.len() as f64;
    let mut csv = String::from("sample,log_likelihood\n");
    for (i, v) in ll.iter().enumerate() {
        let _ = writeln!(csv, "{i},{v:e}");
    }
    let _ = writeln!(csv, "mean,{mean:e}");
    write_atomic(&cfg.out.join("eval.csv"), csv.as_bytes())?;
    println!("mean log-likelihood {mean:.6} nats over {} samples", ll.len());
    Ok(())
}

fn check_csv(rows: &[CheckResult]) -> String {
    let mut csv = String::from("suite,name,measured,tolerance,passed\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{:e},{:e},{}", r.suite, r.name, r.measured, r.tolerance, r.passed);
    }
    csv
}

/// Runs the verification suites, writing `check_<suite>.csv` for each.
/// Failures are reported in the files and turn into a non-zero exit.
pub fn cmd_check(cfg: &RunConfig) -> Result<()> {
    let mut failed = 0;
    for suite in cfg.suite.suites() {
        let rows = run_suite(suite, cfg.seed);
        for r in &rows {
            println!("{r}");
        }
        if !all_passed(&rows) {
            failed += rows.iter().filter(|r| !r.passed).count().max(1);
        }
        write_atomic(&cfg.out.join(format!("check_{}.csv", suite.name())), check_csv(&rows).as_bytes())?;
    }
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
