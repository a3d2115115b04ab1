//! Pipeline stages. Each writes its outputs under the run directory and a
//! manifest under `manifests/`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use voltvar::dataset::{
    gen_pf_dataset, gen_scenario_dataset, read_csv, read_scenarios, split_80_20, write_csv, write_scenarios,
    PerturbSpec, PfDataset, PfRow, ScenarioSet, SplitPolicy,
};
use voltvar::deq::{
    evaluate_vvc, jacobian_v, solve_fixed_point, train_vvc, AndersonConfig, DeqError, VvcTrainConfig,
};
use voltvar::feeder::FeederModel;
use voltvar::linear::{build_lindistflow, fit_least_squares, LinDistFlowModel, LsModel};
use voltvar::neural::{mse_eval, train_pf, NeuralPfModel};
use voltvar::report::{
    compute_stats, emit_plot_data, render_mse_table, render_table, DeviationStats, PlotSeries, RenderedTable,
    TableLayout,
};
use voltvar::vvc::{spectral_norm, stability_caps, VvcRuleParams};
use voltvar::vvo::{assemble_vvo, evaluate_vvo, solve_bnb, BnbConfig, Surrogate, VvoSolution};

use crate::config::{RunConfig, SurrogateKind};
use crate::error::{CliError, Stage, StageExt};

pub const NO_CORRECTION: &str = "No correction";

/// File locations inside one run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pf_data(&self) -> PathBuf {
        self.root.join("data/pf.csv")
    }

    pub fn scenarios(&self) -> PathBuf {
        self.root.join("data/scenarios.csv")
    }

    pub fn nn(&self) -> PathBuf {
        self.root.join("models/nn.txt")
    }

    pub fn nn_reduced(&self) -> PathBuf {
        self.root.join("models/nn_reduced.txt")
    }

    pub fn ls(&self) -> PathBuf {
        self.root.join("models/ls.txt")
    }

    pub fn ldf(&self) -> PathBuf {
        self.root.join("models/lindistflow.txt")
    }

    pub fn trained_rules(&self) -> PathBuf {
        self.root.join("rules/trained.txt")
    }

    pub fn initial_rules(&self) -> PathBuf {
        self.root.join("rules/initial.txt")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    pub fn solutions(&self) -> PathBuf {
        self.root.join("solutions/vvo_solutions.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.toml"))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_stage(Stage::Data, || format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_stage(Stage::Data, || format!("cannot write {}", path.display()))
}

fn read_file(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).with_stage(Stage::Config, || {
        format!("missing {what} at {} (run the earlier stage first)", path.display())
    })
}

fn write_table(layout: &RunLayout, stem: &str, table: &RenderedTable) -> Result<(), CliError> {
    write_file(&layout.report(&format!("{stem}.csv")), &table.csv)?;
    write_file(&layout.report(&format!("{stem}.txt")), &table.text)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    version: &'static str,
    feeder_hash: String,
    config: &'a RunConfig,
}

fn write_manifest(config: &RunConfig, command: &str, model: &FeederModel) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        config_hash: config.hash(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION"),
        feeder_hash: model.identity_hash(),
        config,
    };
    let text = toml::to_string(&manifest).stage(Stage::Data)?;
    write_file(&RunLayout::new(&config.out).manifest(command), &text)
}

fn setup(config: &RunConfig) -> Result<(RunLayout, FeederModel), CliError> {
    config.validate()?;
    Ok((RunLayout::new(&config.out), config.feeder_model()?))
}

fn load_pf(layout: &RunLayout) -> Result<PfDataset, CliError> {
    let path = layout.pf_data();
    if !path.exists() {
        return Err(CliError::new(
            Stage::Config,
            anyhow::anyhow!("missing dataset {} (run gen-data first)", path.display()),
        ));
    }
    read_csv(&path).with_stage(Stage::Data, || format!("cannot read {}", path.display()))
}

fn load_scenarios(layout: &RunLayout) -> Result<ScenarioSet, CliError> {
    let path = layout.scenarios();
    if !path.exists() {
        return Err(CliError::new(
            Stage::Config,
            anyhow::anyhow!("missing scenario set {} (run gen-data first)", path.display()),
        ));
    }
    read_scenarios(&path).with_stage(Stage::Data, || format!("cannot read {}", path.display()))
}

fn pf_split(config: &RunConfig, data: &PfDataset) -> Result<(Vec<PfRow>, Vec<PfRow>), CliError> {
    split_80_20(&data.rows, SplitPolicy::Shuffled { seed: config.pf_seed() }).stage(Stage::Data)
}

/// First 80 % for training, last 20 % for testing.
fn scenario_split(set: &ScenarioSet) -> Result<(ScenarioSet, ScenarioSet), CliError> {
    let (train, _) = split_80_20(&set.scenarios, SplitPolicy::Ordered).stage(Stage::Data)?;
    let cut = train.len();
    Ok((set.subset(0..cut), set.subset(cut..set.len())))
}

fn load_nn(path: &Path) -> Result<NeuralPfModel, CliError> {
    NeuralPfModel::from_text(&read_file(path, "network checkpoint")?)
        .with_stage(Stage::Data, || format!("corrupt checkpoint {}", path.display()))
}

fn load_ls(path: &Path) -> Result<LsModel, CliError> {
    LsModel::from_text(&read_file(path, "least-squares model")?)
        .with_stage(Stage::Data, || format!("corrupt model {}", path.display()))
}

fn load_ldf(path: &Path) -> Result<LinDistFlowModel, CliError> {
    LinDistFlowModel::from_text(&read_file(path, "LinDistFlow model")?)
        .with_stage(Stage::Data, || format!("corrupt model {}", path.display()))
}

fn load_rules(path: &Path) -> Result<VvcRuleParams, CliError> {
    VvcRuleParams::parse(&read_file(path, "rule file")?)
        .with_stage(Stage::Data, || format!("corrupt rule file {}", path.display()))
}

/// Whether a separate reduced-width network is trained for certified VVO.
fn wants_reduced(config: &RunConfig) -> bool {
    config.vvo.surrogates.contains(&SurrogateKind::Nn) && config.vvo.hidden != config.pf.hidden
}

pub fn gen_data(config: &RunConfig) -> Result<(), CliError> {
    let (layout, model) = setup(config)?;
    let spec = PerturbSpec {
        relative_range: config.data.pf_relative_range,
        q_offset_range: (config.data.q_offset_min, config.data.q_offset_max),
        ..PerturbSpec::pf_default(&model)
    };
    let pf = gen_pf_dataset(&model, config.data.pf_samples, &spec, config.pf_seed()).stage(Stage::Data)?;
    let scenarios = gen_scenario_dataset(
        &model,
        config.data.scenario_samples,
        config.data.scenario_relative_range,
        config.scenario_seed(),
    )
    .stage(Stage::Data)?;
    for path in [layout.pf_data(), layout.scenarios()] {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_stage(Stage::Data, || format!("cannot create {}", dir.display()))?;
        }
    }
    write_csv(&pf, &layout.pf_data()).stage(Stage::Data)?;
    write_scenarios(&scenarios, &layout.scenarios()).stage(Stage::Data)?;
    eprintln!("wrote {} power-flow rows and {} scenarios", pf.len(), scenarios.len());
    write_manifest(config, "gen-data", &model)
}

pub fn train_pf_cmd(config: &RunConfig) -> Result<(), CliError> {
    let (layout, model) = setup(config)?;
    let data = load_pf(&layout)?;
    let (train, _) = pf_split(config, &data)?;

    let mut widths = vec![config.pf.hidden];
    if wants_reduced(config) {
        widths.push(config.vvo.hidden);
    }
    let mut curves = Vec::new();
    for &k in &widths {
        let started = Instant::now();
        let trained = train_pf(&train, &config.pf.train_config(k, config.seed))
            .with_stage(Stage::Training, || format!("training the K={k} network failed"))?;
        eprintln!(
            "K={k}: training loss {:.3e} -> {:.3e} in {:.1?}",
            trained.initial_loss,
            trained.final_loss,
            started.elapsed()
        );
        let path = if k == config.pf.hidden { layout.nn() } else { layout.nn_reduced() };
        write_file(&path, &trained.model.to_text())?;
        curves.push(trained.epoch_losses);
    }
    let ls = fit_least_squares(&train).stage(Stage::Training)?;
    write_file(&layout.ls(), &ls.to_text())?;
    let ldf = build_lindistflow(&model).stage(Stage::Config)?;
    write_file(&layout.ldf(), &ldf.to_text())?;

    let mut log = String::from("epoch");
    for k in &widths {
        log.push_str(&format!(",loss_k{k}"));
    }
    log.push('\n');
    let epochs = curves.iter().map(Vec::len).max().unwrap_or(0);
    for e in 0..epochs {
        log.push_str(&e.to_string());
        for c in &curves {
            log.push_str(&format!(",{:e}", c[e]));
        }
        log.push('\n');
    }
    write_file(&layout.report("pf_training_log.csv"), &log)?;
    write_manifest(config, "train-pf", &model)
}

/// Test-set MSE per method: the network, least squares and LinDistFlow.
pub fn eval_pf(config: &RunConfig) -> Result<Vec<(String, f64)>, CliError> {
    let (layout, model) = setup(config)?;
    let data = load_pf(&layout)?;
    let (_, test) = pf_split(config, &data)?;
    let nn = load_nn(&layout.nn())?;
    let ls = load_ls(&layout.ls())?;
    let ldf = load_ldf(&layout.ldf())?;
    let rows = vec![
        ("NN".to_string(), mse_eval(&nn, &test)),
        ("LS".to_string(), mse_eval(&ls, &test)),
        ("LinDistFlow".to_string(), mse_eval(&ldf, &test)),
    ];
    write_table(&layout, "pf_mse", &render_mse_table(&rows))?;
    write_manifest(config, "eval-pf", &model)?;
    Ok(rows)
}

/// One solved test scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: usize,
    pub solution: VvoSolution,
    pub realized: Vec<f64>,
    pub wall: Duration,
}

/// One method of the optimization table.
#[derive(Debug, Clone)]
pub struct VvoMethod {
    pub name: String,
    /// Hidden width for network surrogates.
    pub hidden: Option<usize>,
    pub outcomes: Vec<ScenarioOutcome>,
    pub failures: Vec<(usize, String)>,
    pub stats: DeviationStats,
}

#[derive(Debug, Clone)]
pub struct VvoReport {
    pub methods: Vec<VvoMethod>,
    pub no_correction: DeviationStats,
}

impl VvoReport {
    pub fn method(&self, name: &str) -> Option<&VvoMethod> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn solve_all(
    name: String,
    hidden: Option<usize>,
    surrogate: Surrogate,
    bnb: &BnbConfig,
    model: &FeederModel,
    test: &ScenarioSet,
    offset: usize,
) -> Result<VvoMethod, CliError> {
    let thresholds = TableLayout::Optimization.thresholds();
    let results: Vec<Result<ScenarioOutcome, (usize, String)>> = test
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(i, scenario)| {
            let id = offset + i;
            let started = Instant::now();
            let problem = assemble_vvo(surrogate, model, scenario).map_err(|e| (id, e.to_string()))?;
            let solution = solve_bnb(&problem, bnb).map_err(|e| (id, e.to_string()))?;
            let wall = started.elapsed();
            let eval = evaluate_vvo(model, scenario, &solution, thresholds).map_err(|e| (id, e.to_string()))?;
            Ok(ScenarioOutcome {
                scenario: id,
                solution,
                realized: eval.v_true.v,
                wall,
            })
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err((id, msg)) => {
                eprintln!("warning: {name} failed on scenario {id}: {msg}");
                failures.push((id, msg));
            }
        }
    }
    let voltages: Vec<Vec<f64>> = outcomes.iter().map(|o| o.realized.clone()).collect();
    let stats = compute_stats(&voltages, thresholds)
        .with_stage(Stage::Data, || format!("{name} produced no solutions"))?;
    Ok(VvoMethod {
        name,
        hidden,
        outcomes,
        failures,
        stats,
    })
}

fn network_label(k: usize) -> String {
    format!("NN (K={k})")
}

/// Optimization on every test scenario with each configured surrogate.
pub fn vvo(config: &RunConfig) -> Result<VvoReport, CliError> {
    let (layout, model) = setup(config)?;
    let set = load_scenarios(&layout)?;
    let (train, test) = scenario_split(&set)?;
    let offset = train.len();
    let certified = BnbConfig {
        gap_tolerance: config.vvo.gap_tolerance,
        node_limit: config.vvo.node_limit,
        time_limit: None,
    };

    let mut methods = Vec::new();
    for kind in &config.vvo.surrogates {
        match kind {
            SurrogateKind::Nn => {
                let (path, k) = if wants_reduced(config) {
                    (layout.nn_reduced(), config.vvo.hidden)
                } else {
                    (layout.nn(), config.pf.hidden)
                };
                let nn = load_nn(&path)?;
                methods.push(solve_all(
                    network_label(k),
                    Some(k),
                    Surrogate::Neural(&nn),
                    &certified,
                    &model,
                    &test,
                    offset,
                )?);
                if config.vvo.full_width && wants_reduced(config) {
                    let full = load_nn(&layout.nn())?;
                    let capped = BnbConfig {
                        node_limit: config.vvo.full_node_limit,
                        time_limit: (config.vvo.full_time_limit_secs > 0)
                            .then(|| Duration::from_secs(config.vvo.full_time_limit_secs)),
                        ..certified.clone()
                    };
                    methods.push(solve_all(
                        network_label(config.pf.hidden),
                        Some(config.pf.hidden),
                        Surrogate::Neural(&full),
                        &capped,
                        &model,
                        &test,
                        offset,
                    )?);
                }
            }
            SurrogateKind::Ls => {
                let ls = load_ls(&layout.ls())?;
                let m = solve_all("LS".into(), None, Surrogate::LeastSquares(&ls), &certified, &model, &test, offset)?;
                methods.push(m);
            }
            SurrogateKind::Lindistflow => {
                let ldf = load_ldf(&layout.ldf())?;
                let m = solve_all(
                    "LinDistFlow".into(),
                    None,
                    Surrogate::LinDistFlow(&ldf),
                    &certified,
                    &model,
                    &test,
                    offset,
                )?;
                methods.push(m);
            }
        }
    }
    let base: Vec<Vec<f64>> = test.voltages.iter().map(|v| v.v.clone()).collect();
    let no_correction = compute_stats(&base, TableLayout::Optimization.thresholds()).stage(Stage::Data)?;

    let mut rows: Vec<(String, DeviationStats)> = methods.iter().map(|m| (m.name.clone(), m.stats.clone())).collect();
    rows.push((NO_CORRECTION.into(), no_correction.clone()));
    write_table(&layout, "vvo_table", &render_table(&rows, TableLayout::Optimization))?;

    let mut status = String::from("method,scenario,status,objective,gap,nodes,flag\n");
    let mut solutions = String::from("method,scenario,status,objective,gap,nodes,wall_ms,q_g\n");
    for m in &methods {
        for o in &m.outcomes {
            let s = &o.solution;
            let flag = if s.gap > 0.0 { "gap" } else { "" };
            status.push_str(&format!(
                "{},{},{},{:e},{:e},{},{}\n",
                m.name,
                o.scenario,
                s.status.as_str(),
                s.objective,
                s.gap,
                s.nodes,
                flag
            ));
            let q: Vec<String> = s.q_g.iter().map(|q| format!("{q:e}")).collect();
            solutions.push_str(&format!(
                "{},{},{},{:e},{:e},{},{},{}\n",
                m.name,
                o.scenario,
                s.status.as_str(),
                s.objective,
                s.gap,
                s.nodes,
                o.wall.as_millis(),
                q.join(";")
            ));
        }
        for (id, msg) in &m.failures {
            status.push_str(&format!("{},{},failed,,,,{}\n", m.name, id, msg.replace(',', ";")));
        }
    }
    write_file(&layout.report("vvo_status.csv"), &status)?;
    write_file(&layout.solutions(), &solutions)?;

    let mut series: Vec<PlotSeries> = methods
        .iter()
        .filter_map(|m| {
            m.outcomes.first().map(|o| PlotSeries {
                label: m.name.clone(),
                values: o.realized.clone(),
            })
        })
        .collect();
    series.push(PlotSeries {
        label: NO_CORRECTION.into(),
        values: test.voltages[0].v.clone(),
    });
    emit_plot_data(&series, &layout.reports(), "vvo_profiles").stage(Stage::Data)?;
    write_manifest(config, "vvo", &model)?;
    Ok(VvoReport { methods, no_correction })
}

fn vvc_train_config(config: &RunConfig, model: &FeederModel) -> Result<VvcTrainConfig, CliError> {
    let slope_caps = if config.vvc.stability_caps {
        let ldf = build_lindistflow(model).stage(Stage::Config)?;
        Some(stability_caps(model, &ldf, &config.vvc.stability()))
    } else {
        None
    };
    Ok(VvcTrainConfig {
        epochs: config.vvc.epochs,
        batch_size: config.vvc.batch_size,
        learning_rate: config.vvc.learning_rate,
        seed: config.seed,
        slope_caps,
        max_drop_fraction: config.vvc.max_drop_fraction,
        ..VvcTrainConfig::default()
    })
}

fn deq_stage(e: DeqError) -> CliError {
    let stage = match e {
        DeqError::SingularSystem { .. } | DeqError::TooManyDropped { .. } | DeqError::LoopNonConvergence { .. } => {
            Stage::ControlLoop
        }
        DeqError::InvalidConfig(_) => Stage::Config,
        DeqError::Feeder(_) | DeqError::Report(_) => Stage::Data,
        DeqError::InfeasibleParameters { .. } => Stage::Training,
    };
    CliError::new(stage, e.into())
}

pub fn train_vvc_cmd(config: &RunConfig) -> Result<(), CliError> {
    let (layout, model) = setup(config)?;
    let set = load_scenarios(&layout)?;
    let (train, _) = scenario_split(&set)?;
    let nn = load_nn(&layout.nn())?;
    let cfg = vvc_train_config(config, &model)?;
    let trained = train_vvc(&train.scenarios, &model, &nn, &cfg).map_err(deq_stage)?;
    if let (Some(first), Some(last)) = (trained.log.first(), trained.log.last()) {
        eprintln!("rule training loss {:.4e} -> {:.4e}", first.mean_loss, last.mean_loss);
    }
    write_file(&layout.trained_rules(), &trained.params.to_text())?;
    write_file(&layout.initial_rules(), &trained.initial.to_text())?;
    write_file(&layout.report("vvc_training_log.csv"), &trained.log_csv())?;
    write_manifest(config, "train-vvc", &model)
}

pub const TRAINED_RULES: &str = "Trained rules";
pub const INITIAL_RULES: &str = "Initial rules";

/// Exact closed-loop statistics for the trained rules, the initial rules and
/// the uncontrolled feeder on the test scenarios.
pub fn eval_vvc(config: &RunConfig) -> Result<Vec<(String, DeviationStats)>, CliError> {
    let (layout, model) = setup(config)?;
    let set = load_scenarios(&layout)?;
    let (train, test) = scenario_split(&set)?;
    let nn = load_nn(&layout.nn())?;
    let trained = load_rules(&layout.trained_rules())?;
    let initial = load_rules(&layout.initial_rules())?;
    let thresholds = TableLayout::Control.thresholds();
    let anderson = AndersonConfig::default();

    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut loops = String::from("variant,scenario,iterations,residual,surrogate_loop_gain\n");
    for (name, params) in [(TRAINED_RULES, &trained), (INITIAL_RULES, &initial)] {
        let eval = evaluate_vvc(&test.scenarios, &model, params, &anderson, thresholds).map_err(deq_stage)?;
        for (i, (r, s)) in eval.results.iter().zip(&test.scenarios).enumerate() {
            let surrogate = solve_fixed_point(s, &nn, params, &anderson);
            let gain = spectral_norm(&jacobian_v(&surrogate.v_star, s, &nn, params));
            loops.push_str(&format!(
                "{},{},{},{:e},{:.6}\n",
                name,
                train.len() + i,
                r.iterations,
                r.residual,
                gain
            ));
        }
        series.push(PlotSeries {
            label: name.into(),
            values: eval.voltages[0].clone(),
        });
        rows.push((name.to_string(), eval.stats));
    }
    let base: Vec<Vec<f64>> = test.voltages.iter().map(|v| v.v.clone()).collect();
    rows.push((NO_CORRECTION.into(), compute_stats(&base, thresholds).stage(Stage::Data)?));
    series.push(PlotSeries {
        label: NO_CORRECTION.into(),
        values: base[0].clone(),
    });

    write_table(&layout, "vvc_table", &render_table(&rows, TableLayout::Control))?;
    write_file(&layout.report("vvc_equilibria.csv"), &loops)?;
    emit_plot_data(&series, &layout.reports(), "vvc_profiles").stage(Stage::Data)?;
    write_manifest(config, "eval-vvc", &model)?;
    Ok(rows)
}

const SUMMARY_PARTS: [(&str, &str); 3] = [
    ("pf_mse.txt", "Voltage prediction error on the test split"),
    ("vvo_table.txt", "Voltage deviation under optimized setpoints"),
    ("vvc_table.txt", "Voltage deviation under local droop control"),
];

/// Collects the rendered tables into `reports/summary.txt`.
pub fn report(config: &RunConfig) -> Result<String, CliError> {
    let (layout, model) = setup(config)?;
    let mut summary = String::new();
    for (file, title) in SUMMARY_PARTS {
        let path = layout.report(file);
        if let Ok(table) = std::fs::read_to_string(&path) {
            if !summary.is_empty() {
                summary.push('\n');
            }
            summary.push_str(&format!("{title}\n\n{table}"));
        }
    }
    if summary.is_empty() {
        return Err(CliError::new(
            Stage::Config,
            anyhow::anyhow!("no tables under {}", layout.reports().display()),
        ));
    }
    write_file(&layout.report("summary.txt"), &summary)?;
    write_manifest(config, "report", &model)?;
    Ok(summary)
}

/// Every stage in order.
pub fn run_all(config: &RunConfig) -> Result<String, CliError> {
    gen_data(config)?;
    train_pf_cmd(config)?;
    eval_pf(config)?;
    vvo(config)?;
    train_vvc_cmd(config)?;
    eval_vvc(config)?;
    report(config)
}
