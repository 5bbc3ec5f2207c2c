//! Pipeline stages. Each command reads the resolved config plus upstream
//! artifacts from the output directory and writes its own outputs atomically.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mofit_core::attack::{queries_from_dataset, run_attack_suite, AttackRecord, SuiteConfig, SurrogateMode};
use mofit_core::data::{generate_dataset, Dataset, Split};
use mofit_core::diffusion::{ImageShape, NoiseSchedule};
use mofit_core::metrics::{
    fused_report, kde_pair, method_report, sensitivity, FusionConfig, MethodReport, ScoreTable, Sensitivity,
};
use mofit_core::nn::{finite_diff_check, Architecture, DenoiserModel, Wrt};
use mofit_core::oracle::{LocalOracle, LossOracle};
use mofit_core::rng::{self, Purpose};
use mofit_core::train::{train, Example};
use mofit_core::{Error, Result};
use mofit_oracle::{serve_loopback, RemoteModel, ServeOptions};

use crate::config::{RunConfig, BUILD};
use crate::io::{self, Paths};

/// A resolved config bound to its output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub paths: Paths,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        let paths = Paths::new(cfg.output_dir.clone());
        Self { cfg, hash, paths }
    }

    fn write_config(&self) -> Result<()> {
        let text = format!("# config_hash={}\n# build={BUILD}\n{}", self.hash, self.cfg.to_toml());
        io::write_atomic(&self.paths.config(), text.as_bytes())
    }

    fn write_csv<R, I>(&self, path: &std::path::Path, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        io::write_atomic(path, &io::csv_bytes(&self.hash, header, rows)?)
    }

    /// Runs `f` against the configured oracle: the remote endpoint when one
    /// is set, the local checkpoint otherwise.
    pub fn with_oracle<T>(&self, f: impl FnOnce(&dyn LossOracle) -> Result<T>) -> Result<T> {
        if self.cfg.oracle.endpoint.is_empty() {
            let model = io::load_checkpoint(&self.paths)?;
            let sched = self.cfg.schedule()?;
            f(&LocalOracle::new(&model, &sched))
        } else {
            let remote = RemoteModel::connect(&self.cfg.oracle.endpoint, self.cfg.remote_config())?;
            f(&remote)
        }
    }
}

pub fn cmd_synth(run: &Run) -> Result<Dataset> {
    let d = generate_dataset(&run.cfg.dataset_config());
    run.write_config()?;
    io::save_dataset(&run.paths, &d, &run.hash)?;
    log::info!(
        "wrote {} samples to {}",
        d.samples.len(),
        run.paths.manifest().display()
    );
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub head_mean_loss: f64,
    pub tail_mean_loss: f64,
    pub param_hash: String,
}

/// Mean of the first and last 10% of a loss curve.
pub fn head_tail(losses: &[f64]) -> (f64, f64) {
    let n = losses.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let k = (n / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&losses[..k]), mean(&losses[n - k..]))
}

pub fn member_examples(d: &Dataset) -> Vec<Example> {
    d.members()
        .map(|s| Example {
            image: s.image.clone(),
            cond: d.condition(s).embedding,
        })
        .collect()
}

pub fn train_model(cfg: &RunConfig, d: &Dataset) -> Result<(DenoiserModel, Vec<f64>)> {
    let model = DenoiserModel::random(cfg.architecture(), cfg.model.init_seed);
    let out = train(model, &member_examples(d), &cfg.schedule()?, &cfg.train_config())?;
    Ok((out.model, out.losses))
}

pub fn cmd_train(run: &Run) -> Result<TrainSummary> {
    let d = io::load_dataset(&run.paths)?;
    let (model, losses) = train_model(&run.cfg, &d)?;
    run.write_config()?;
    io::save_checkpoint(&run.paths, &model, &run.hash)?;
    run.write_csv(
        &run.paths.train_loss(),
        &["step", "loss"],
        losses.iter().enumerate().map(|(i, l)| [i.to_string(), format!("{l}")]),
    )?;
    let (head, tail) = head_tail(&losses);
    Ok(TrainSummary {
        steps: losses.len(),
        head_mean_loss: head,
        tail_mean_loss: tail,
        param_hash: model.param_hash(),
    })
}

/// One attack suite over every sample of `d`.
pub fn attack_records(
    cfg: &RunConfig,
    oracle: &dyn LossOracle,
    d: &Dataset,
    suite: &SuiteConfig,
) -> Result<Vec<AttackRecord>> {
    let queries = queries_from_dataset(d, cfg.attack.approx_fidelity, cfg.master_seed)?;
    run_attack_suite(oracle, &queries, suite)
}

pub fn cmd_attack(run: &Run) -> Result<Vec<AttackRecord>> {
    let d = io::load_dataset(&run.paths)?;
    let suite = run.cfg.suite_config()?;
    let records = run.with_oracle(|o| attack_records(&run.cfg, o, &d, &suite))?;
    run.write_config()?;
    io::write_atomic(&run.paths.attack(), &io::attack_csv(&records, &run.hash)?)?;
    let failed = records.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        io::write_atomic(&run.paths.failures(), &io::failures_csv(&records, &run.hash)?)?;
        log::warn!("{failed} queries failed; see {}", run.paths.failures().display());
    } else if run.paths.failures().exists() {
        std::fs::remove_file(run.paths.failures())?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub build: String,
    pub n_member: usize,
    pub n_holdout: usize,
    pub methods: Vec<MethodReport>,
    pub fused: MethodReport,
    /// (γ, ASR) over the fusion grid.
    pub fusion_sweep: Vec<(f64, f64)>,
    pub sensitivity: Vec<Sensitivity>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn check_finite(table: &ScoreTable) -> Result<()> {
    for (name, c) in &table.columns {
        if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
            log::error!("non-finite `{name}` for sample {}", table.ids[i]);
            return Err(Error::NonFinite {
                stage: "evaluation",
                iteration: i,
            });
        }
    }
    Ok(())
}

/// Every statistic of the report, from a score table.
pub fn build_report(table: &ScoreTable, fusion: &FusionConfig, config_hash: &str) -> Result<Report> {
    check_finite(table)?;
    let methods = table
        .columns
        .keys()
        .map(|c| method_report(table, c))
        .collect::<Result<Vec<_>>>()?;
    let (fused, outcome) = fused_report(table, fusion)?;
    let mut sens = Vec::new();
    if table.columns.contains_key("l_cond_gt") {
        for split in [Split::Member, Split::Holdout] {
            sens.push(sensitivity(table, "l_cond_gt", "l_cond_approx", split)?);
        }
    }
    let count = |s| table.labels.iter().filter(|l| **l == s).count();
    Ok(Report {
        config_hash: config_hash.to_string(),
        build: BUILD.to_string(),
        n_member: count(Split::Member),
        n_holdout: count(Split::Holdout),
        methods,
        fused,
        fusion_sweep: outcome.sweep,
        sensitivity: sens,
    })
}

pub fn cmd_eval(run: &Run) -> Result<Report> {
    io::require(&run.paths.attack(), "attack")?;
    let records = io::read_attack_csv(&run.paths.attack())?;
    let table = ScoreTable::from_records(&records);
    let report = build_report(&table, &run.cfg.fusion_config(), &run.hash)?;
    run.write_config()?;
    io::write_atomic(&run.paths.report(), &io::json_bytes(&report)?)?;
    let n = run.cfg.metrics.kde_grid_points;
    for name in table.columns.keys() {
        let curve = kde_pair(
            &table.split_values(name, Split::Member)?,
            &table.split_values(name, Split::Holdout)?,
            n,
        )?;
        run.write_csv(
            &run.paths.kde(name),
            &["x", "density_member", "density_holdout"],
            curve
                .iter()
                .map(|(x, m, h)| [format!("{x}"), format!("{m}"), format!("{h}")]),
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub model: usize,
    pub wrt: Wrt,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config_hash: String,
    pub build: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub cases: Vec<GradcheckCase>,
}

/// Randomized small architectures, parameters and inputs, each checked
/// against central differences for all three gradient targets.
pub fn gradcheck_cases(cfg: &RunConfig) -> Result<Vec<GradcheckCase>> {
    use rand::Rng;
    let g = &cfg.gradcheck;
    let sched = NoiseSchedule::default();
    let mut out = Vec::new();
    for m in 0..g.models {
        let mut r = rng::stream(cfg.master_seed, Purpose::Probe, m as u64, 1);
        let arch = Architecture {
            image: ImageShape::new(r.random_range(2..6), r.random_range(2..6), r.random_range(1..3)),
            hidden: vec![r.random_range(4..24), r.random_range(4..24)],
            time_dim: 2 * r.random_range(1..5),
            cond_dim: r.random_range(1..7),
        };
        let model = DenoiserModel::random(arch.clone(), r.random());
        let n = arch.image.len();
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let eps = rng::normal_vec(&mut r, n);
        let cond = rng::normal_vec(&mut r, arch.cond_dim);
        let t = r.random_range(1..=sched.steps());
        for wrt in [Wrt::Parameters, Wrt::Image, Wrt::Condition] {
            let rel_error =
                finite_diff_check(&model, &x, Some(&cond), t, &eps, &sched, wrt, g.probes, g.h, r.random())?;
            out.push(GradcheckCase {
                model: m,
                wrt,
                rel_error,
            });
        }
    }
    Ok(out)
}

pub fn cmd_gradcheck(run: &Run) -> Result<GradcheckReport> {
    let cases = gradcheck_cases(&run.cfg)?;
    let max = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let report = GradcheckReport {
        config_hash: run.hash.clone(),
        build: BUILD.to_string(),
        tolerance: run.cfg.gradcheck.tolerance,
        max_rel_error: max,
        passed: max < run.cfg.gradcheck.tolerance,
        cases,
    };
    run.write_config()?;
    io::write_atomic(&run.paths.gradcheck(), &io::json_bytes(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `clean`, `random_delta`, `delta_max` or `model_fitted`.
    pub mode: String,
    pub eps_noise: Option<f64>,
    pub auc: f64,
    pub asr: f64,
    pub tpr_at_1fpr: f64,
    /// Mean unconditional loss of the perturbed query.
    pub mean_l_uncond_perturbed: f64,
    pub failed: usize,
}

pub fn ablation_row(mode: &str, eps_noise: Option<f64>, records: &[AttackRecord]) -> Result<AblationRow> {
    let table = ScoreTable::from_records(records);
    let m = method_report(&table, "score_mofit")?;
    let ok: Vec<&AttackRecord> = records.iter().filter(|r| r.ok()).collect();
    Ok(AblationRow {
        mode: mode.to_string(),
        eps_noise,
        auc: m.auc,
        asr: m.asr,
        tpr_at_1fpr: m.tpr_at_1fpr,
        mean_l_uncond_perturbed: ok.iter().map(|r| r.surrogate_loss).sum::<f64>() / ok.len().max(1) as f64,
        failed: records.len() - ok.len(),
    })
}

/// The perturbation variants compared by the ablation, in output order.
pub fn ablation_modes(cfg: &RunConfig) -> Vec<(String, Option<f64>, SurrogateMode)> {
    let mut v = vec![(
        "clean".to_string(),
        None,
        SurrogateMode::RandomUniform { eps_noise: 0.0 },
    )];
    for &e in &cfg.ablate.random_eps {
        v.push((
            "random_delta".into(),
            Some(e),
            SurrogateMode::RandomUniform { eps_noise: e },
        ));
    }
    v.push(("delta_max".into(), None, SurrogateMode::AdversarialMax));
    v.push(("model_fitted".into(), None, SurrogateMode::ModelFitted));
    v
}

fn write_ablation(run: &Run, rows: &[AblationRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|e| format!("{e}")).unwrap_or_default();
    run.write_csv(
        &run.paths.ablation(),
        &[
            "mode",
            "eps_noise",
            "auc",
            "asr",
            "tpr_at_1fpr",
            "mean_l_uncond_perturbed",
            "failed",
        ],
        rows.iter().map(|r| {
            [
                r.mode.clone(),
                opt(r.eps_noise),
                format!("{}", r.auc),
                format!("{}", r.asr),
                format!("{}", r.tpr_at_1fpr),
                format!("{}", r.mean_l_uncond_perturbed),
                r.failed.to_string(),
            ]
        }),
    )
}

pub fn cmd_ablate(run: &Run) -> Result<Vec<AblationRow>> {
    let d = io::load_dataset(&run.paths)?;
    let base = run.cfg.suite_config()?;
    let rows = run.with_oracle(|o| {
        ablation_modes(&run.cfg)
            .into_iter()
            .map(|(name, eps, mode)| {
                log::info!("ablation: {}", mode.label());
                let suite = SuiteConfig { mode, ..base.clone() };
                ablation_row(&name, eps, &attack_records(&run.cfg, o, &d, &suite)?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    run.write_config()?;
    write_ablation(run, &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub eps_seed: u64,
    pub auc: f64,
    pub asr: f64,
    pub tpr_at_1fpr: f64,
}

pub fn stability_row(eps_seed: u64, records: &[AttackRecord]) -> Result<StabilityRow> {
    let m = method_report(&ScoreTable::from_records(records), "score_mofit")?;
    Ok(StabilityRow {
        eps_seed,
        auc: m.auc,
        asr: m.asr,
        tpr_at_1fpr: m.tpr_at_1fpr,
    })
}

/// Sample standard deviation (n − 1).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn cmd_stability(run: &Run) -> Result<Vec<StabilityRow>> {
    let d = io::load_dataset(&run.paths)?;
    let base = run.cfg.suite_config()?;
    let rows = run.with_oracle(|o| {
        run.cfg
            .stability
            .eps_seeds
            .iter()
            .map(|&s| {
                let mut suite = base.clone();
                suite.surrogate.eps_seed = s;
                stability_row(s, &attack_records(&run.cfg, o, &d, &suite)?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    run.write_config()?;
    run.write_csv(
        &run.paths.stability(),
        &["eps_seed", "auc", "asr", "tpr_at_1fpr"],
        rows.iter().map(|r| {
            [
                r.eps_seed.to_string(),
                format!("{}", r.auc),
                format!("{}", r.asr),
                format!("{}", r.tpr_at_1fpr),
            ]
        }),
    )?;
    Ok(rows)
}

/// Serves the run's checkpoint until the process is killed.
pub fn cmd_serve(run: &Run, listen: &str, record: Option<PathBuf>) -> Result<()> {
    let model = io::load_checkpoint(&run.paths)?;
    let server = serve_loopback(model, run.cfg.schedule()?, listen, ServeOptions { record })?;
    println!("listening on {}", server.endpoint());
    server.join();
    Ok(())
}
