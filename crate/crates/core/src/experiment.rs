//! Declarative experiment specs and the runner that turns them into CSV,
//! metadata and summary artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bank::{flip_csv, BankConfig, SidednessMode};
use crate::characterize::{
    crossover_scan, hammer_run, overlap_and_direction, press_run, retention_run, select_rows, sidedness_difference,
    sign_changes, sweep, BankFactory, DEFAULT_BLOCK,
};
use crate::controller::OverheadPoint;
use crate::error::CharacterizeError;
use crate::eval::{
    activations_to_flip, overhead_for_seed, para_monte_carlo, para_window_bound, run_adversarial_suite, run_poc,
    AdversarialSuite, ParaMonteCarlo, SuiteReport, TrafficSpec,
};
use crate::mitigation::{adapt, AdaptationConfig, Adapted, MitigationConfig};
use crate::pattern::DataPattern;
use crate::profile::{DeviceProfile, Sidedness};
use crate::timing::{TimingParams, MS};
use crate::tracegen::{AccessOrder, ActivationBudget, MappingKind, PocParams, RowMapping, SweepSpec};

pub const SPEC_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    Poc,
    MitigationEval,
    Overhead,
    Overlap,
    Crossover,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Poc => "poc",
            ExperimentKind::MitigationEval => "mitigation_eval",
            ExperimentKind::Overhead => "overhead",
            ExperimentKind::Overlap => "overlap",
            ExperimentKind::Crossover => "crossover",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOptions {
    /// Rescale every curve so single-sided ACmin at tRAS equals this.
    #[serde(default)]
    pub base_threshold: Option<u64>,
    /// Give every row the base threshold.
    #[serde(default)]
    pub zero_variation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankSpec {
    pub rows: u32,
    pub cells_per_row: usize,
    /// Materialization seed.
    pub seed: u64,
    pub blast_radius: u32,
    pub data_pattern: DataPattern,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self { rows: 1024, cells_per_row: 1024, seed: 0, blast_radius: 1, data_pattern: DataPattern::Checkerboard }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub t_on_values: Vec<u64>,
    #[serde(default = "default_sidedness")]
    pub sidedness: Sidedness,
    #[serde(default = "default_budget")]
    pub activation_budget: ActivationBudget,
    /// Rows per block; three blocks are characterized.
    #[serde(default = "default_block")]
    pub block_size: u32,
    /// Use 1024-row blocks.
    #[serde(default)]
    pub full_scale: bool,
}

fn default_sidedness() -> Sidedness {
    Sidedness::Single
}

fn default_budget() -> ActivationBudget {
    ActivationBudget::FillRefreshWindow
}

fn default_block() -> u32 {
    DEFAULT_BLOCK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PocSpec {
    pub num_reads_values: Vec<u32>,
    pub orders: Vec<AccessOrder>,
    pub num_aggr_acts: u32,
    pub num_iter: u32,
    pub dummy_rows: u32,
    pub victim_rows: Vec<u32>,
    #[serde(default = "default_flush_overhead")]
    pub flush_overhead_ns: u64,
    #[serde(default = "default_true")]
    pub sync_to_refresh: bool,
    #[serde(default)]
    pub mapping: MappingKind,
}

fn default_flush_overhead() -> u64 {
    150
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaEvalSpec {
    pub windows: u64,
    /// Activations that flip a victim at tRAS.
    pub tras_acts: u64,
    /// Attack on-times; the adapted run clamps them to the cap.
    pub attack_t_on: Vec<u64>,
    /// Per-window flip probability the design must stay under.
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationEvalSpec {
    #[serde(default)]
    pub suite: Option<AdversarialSuite>,
    #[serde(default)]
    pub para: Option<ParaEvalSpec>,
    #[serde(default)]
    pub traffic: Option<TrafficSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadSpec {
    pub traffic: TrafficSpec,
    pub caps: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSpec {
    #[serde(default = "default_press_t_on")]
    pub press_t_on: u64,
    /// Idle time before the retention check; defaults past the profile's
    /// longest retention time.
    #[serde(default)]
    pub retention_wait_ns: Option<u64>,
}

fn default_press_t_on() -> u64 {
    70_200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverSpec {
    #[serde(default = "default_t_min")]
    pub t_on_min: u64,
    #[serde(default = "default_t_max")]
    pub t_on_max: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_t_min() -> u64 {
    36
}

fn default_t_max() -> u64 {
    30 * MS
}

fn default_samples() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    pub kind: ExperimentKind,
    /// Builtin profile name or path to a profile JSON file.
    pub profile: String,
    pub temperature: i32,
    #[serde(default)]
    pub profile_options: ProfileOptions,
    #[serde(default)]
    pub bank: BankSpec,
    #[serde(default)]
    pub timing: TimingParams,
    #[serde(default)]
    pub mitigation: Option<MitigationConfig>,
    #[serde(default)]
    pub adaptation: Option<AdaptationConfig>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub strict_jedec: bool,
    #[serde(default)]
    pub sweep: Option<SweepParams>,
    #[serde(default)]
    pub poc: Option<PocSpec>,
    #[serde(default)]
    pub mitigation_eval: Option<MitigationEvalSpec>,
    #[serde(default)]
    pub overhead: Option<OverheadSpec>,
    #[serde(default)]
    pub overlap: Option<OverlapSpec>,
    #[serde(default)]
    pub crossover: Option<CrossoverSpec>,
}

/// A spec problem, tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct SpecError {
    pub field: String,
    pub message: String,
}

fn spec_err(field: &str, message: impl Into<String>) -> SpecError {
    SpecError { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid spec: {0}")]
    Spec(#[from] SpecError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Run(#[from] CharacterizeError),
}

impl RunError {
    /// 1 for spec problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Spec(_) => 1,
            _ => 2,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde names missing and unknown fields in backticks.
            let field = msg.split('`').nth(1).filter(|_| msg.contains("field")).unwrap_or("spec");
            spec_err(field, msg.clone())
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|source| RunError::Io { context: format!("reading {}", path.display()), source })?;
        Ok(Self::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Loads and transforms the profile for this spec's temperature.
    pub fn resolve_profile(&self) -> Result<DeviceProfile, SpecError> {
        let mut p = DeviceProfile::load(&self.profile).map_err(|e| spec_err("profile", e.to_string()))?;
        if let Some(b) = self.profile_options.base_threshold {
            if b == 0 {
                return Err(spec_err("profile_options.base_threshold", "must be at least 1"));
            }
            p = p.with_base_threshold(b);
        }
        if self.profile_options.zero_variation {
            p = p.zero_variation();
        }
        if !p.has_curve(Sidedness::Single, self.temperature) {
            p = p
                .scale_temperature(p.reference_temp_c, self.temperature)
                .map_err(|e| spec_err("temperature", e.to_string()))?;
        }
        Ok(p)
    }

    fn require<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, SpecError> {
        section.as_ref().ok_or_else(|| spec_err(name, format!("required for kind {}", self.kind.name())))
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.schema != SPEC_SCHEMA {
            return Err(spec_err("schema", format!("unsupported version {}, expected {SPEC_SCHEMA}", self.schema)));
        }
        if self.seeds.is_empty() {
            return Err(spec_err("seeds", "must not be empty"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(spec_err("output_dir", "must not be empty"));
        }
        self.timing.validate().map_err(|m| spec_err("timing", m))?;
        if self.bank.rows < 3 {
            return Err(spec_err("bank.rows", "must be at least 3"));
        }
        if self.bank.cells_per_row == 0 {
            return Err(spec_err("bank.cells_per_row", "must be at least 1"));
        }
        if self.bank.blast_radius == 0 {
            return Err(spec_err("bank.blast_radius", "must be at least 1"));
        }
        let profile = self.resolve_profile()?;
        if let Some(m) = &self.mitigation {
            m.validate().map_err(|e| spec_err("mitigation", e.to_string()))?;
        }
        if let Some(a) = &self.adaptation {
            adapt(
                self.mitigation.as_ref().unwrap_or(&MitigationConfig::None),
                a,
                &profile,
                self.temperature,
                &self.timing,
                self.bank.blast_radius,
            )
            .map_err(|e| spec_err("adaptation.t_on_cap", e.to_string()))?;
        }
        match self.kind {
            ExperimentKind::Sweep => {
                let s = self.require(&self.sweep, "sweep")?;
                SweepSpec {
                    t_on_values: s.t_on_values.clone(),
                    sidedness: s.sidedness,
                    activation_budget: s.activation_budget,
                    data_pattern: self.bank.data_pattern,
                }
                .validate(&self.timing)
                .map_err(|e| spec_err("sweep.t_on_values", e.to_string()))?;
                if s.block_size == 0 {
                    return Err(spec_err("sweep.block_size", "must be at least 1"));
                }
                if s.sidedness == Sidedness::Double && !profile.has_curve(Sidedness::Double, self.temperature) {
                    return Err(spec_err("sweep.sidedness", "profile has no double-sided curve at this temperature"));
                }
            }
            ExperimentKind::Poc => {
                let p = self.require(&self.poc, "poc")?;
                if p.num_reads_values.is_empty() || p.num_reads_values.contains(&0) {
                    return Err(spec_err("poc.num_reads_values", "must be non-empty and positive"));
                }
                if p.orders.is_empty() {
                    return Err(spec_err("poc.orders", "must not be empty"));
                }
                if p.victim_rows.is_empty() {
                    return Err(spec_err("poc.victim_rows", "must not be empty"));
                }
                let mapping = RowMapping { rows: self.bank.rows, kind: p.mapping };
                for &v in &p.victim_rows {
                    mapping.find_aggressor_rows(v).map_err(|e| spec_err("poc.victim_rows", e.to_string()))?;
                }
                let params = self.poc_params(p, p.num_reads_values[0], p.orders[0]);
                params.validate().map_err(|e| spec_err("poc", e.to_string()))?;
            }
            ExperimentKind::MitigationEval => {
                let m = self.require(&self.mitigation_eval, "mitigation_eval")?;
                if self.mitigation.is_none() {
                    return Err(spec_err("mitigation", format!("required for kind {}", self.kind.name())));
                }
                if m.suite.is_none() && m.para.is_none() && m.traffic.is_none() {
                    return Err(spec_err("mitigation_eval", "needs at least one of suite, para, traffic"));
                }
                if let Some(s) = &m.suite {
                    if s.rows.iter().any(|&r| r >= self.bank.rows) || s.t_on_values.is_empty() {
                        return Err(spec_err(
                            "mitigation_eval.suite",
                            "rows must lie in the bank and t_on_values be non-empty",
                        ));
                    }
                }
                if let Some(p) = &m.para {
                    if !matches!(self.mitigation, Some(MitigationConfig::Para(_))) {
                        return Err(spec_err("mitigation_eval.para", "needs a para mitigation"));
                    }
                    if p.windows == 0
                        || p.tras_acts == 0
                        || p.attack_t_on.is_empty()
                        || p.bound.is_nan()
                        || p.bound <= 0.0
                    {
                        return Err(spec_err(
                            "mitigation_eval.para",
                            "windows, tras_acts, attack_t_on and bound must be positive",
                        ));
                    }
                }
                if m.traffic.is_some() && self.adaptation.is_none() {
                    return Err(spec_err("adaptation", "required to measure traffic overhead"));
                }
            }
            ExperimentKind::Overhead => {
                let o = self.require(&self.overhead, "overhead")?;
                if o.caps.is_empty() {
                    return Err(spec_err("overhead.caps", "must not be empty"));
                }
                if o.caps.iter().any(|&c| c < self.timing.t_ras_min || c > self.timing.t_ron_max_jedec) {
                    return Err(spec_err("overhead.caps", "each cap must lie in [tRAS, JEDEC limit]"));
                }
            }
            ExperimentKind::Overlap => {
                let o = self.require(&self.overlap, "overlap")?;
                if o.press_t_on <= self.timing.t_ras_min {
                    return Err(spec_err("overlap.press_t_on", "must exceed tRAS"));
                }
            }
            ExperimentKind::Crossover => {
                let c = self.require(&self.crossover, "crossover")?;
                if c.t_on_min < self.timing.t_ras_min || c.t_on_min >= c.t_on_max {
                    return Err(spec_err("crossover.t_on_min", "must be at least tRAS and below t_on_max"));
                }
                if !profile.has_curve(Sidedness::Double, self.temperature) {
                    return Err(spec_err("profile", "crossover needs both sidedness curves"));
                }
            }
        }
        Ok(())
    }

    fn poc_params(&self, p: &PocSpec, num_reads: u32, order: AccessOrder) -> PocParams {
        PocParams {
            num_reads,
            num_aggr_acts: p.num_aggr_acts,
            num_iter: p.num_iter,
            order,
            dummy_rows: p.dummy_rows,
            victim_rows: p.victim_rows.clone(),
            flush_overhead_ns: p.flush_overhead_ns,
            sync_to_refresh: p.sync_to_refresh,
        }
    }

    fn factory(
        &self,
        profile: &DeviceProfile,
        seed: u64,
        strict_jedec: bool,
    ) -> Result<BankFactory, CharacterizeError> {
        let config = BankConfig {
            timing: self.timing,
            temp_c: self.temperature,
            blast_radius: self.bank.blast_radius,
            pattern: self.bank.data_pattern,
            sidedness: SidednessMode::Auto,
            strict_jedec: strict_jedec || self.strict_jedec,
            implicit_precharge: true,
        };
        BankFactory::new(profile.clone(), self.bank.rows, self.bank.cells_per_row, seed, config)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Replaces the spec's output directory.
    pub output_dir: Option<PathBuf>,
    pub strict_jedec: bool,
}

impl RunOptions {
    /// Options with the output directory taken from `ROWSIM_OUT` when set.
    pub fn from_env() -> Self {
        Self { output_dir: std::env::var_os("ROWSIM_OUT").map(PathBuf::from), strict_jedec: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    /// File names written, in order.
    pub files: Vec<String>,
    pub summary: Value,
}

struct Artifacts {
    files: Vec<(String, String)>,
    summary: Value,
    adapted: Option<Adapted>,
}

/// Validates and runs `spec`, writing every artifact under the output
/// directory. Parallel sections use the current rayon pool.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunOutput, RunError> {
    spec.validate()?;
    let profile = spec.resolve_profile()?;
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| spec.output_dir.clone());
    let art = match spec.kind {
        ExperimentKind::Sweep => run_sweep(spec, &profile, opts)?,
        ExperimentKind::Poc => run_poc_kind(spec, &profile, opts)?,
        ExperimentKind::MitigationEval => run_mitigation_eval(spec, &profile, opts)?,
        ExperimentKind::Overhead => run_overhead(spec)?,
        ExperimentKind::Overlap => run_overlap(spec, &profile, opts)?,
        ExperimentKind::Crossover => run_crossover(spec, &profile)?,
    };
    fs::create_dir_all(&out_dir)
        .map_err(|source| RunError::Io { context: format!("creating {}", out_dir.display()), source })?;
    let mut names: Vec<String> = art.files.iter().map(|(n, _)| n.clone()).collect();
    names.extend(["metadata.json".to_string(), "summary.json".to_string()]);
    let metadata = json!({
        "schema": SPEC_SCHEMA,
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "kind": spec.kind.name(),
        "spec": spec,
        "resolved_profile": profile,
        "seeds": spec.seeds,
        "strict_jedec": opts.strict_jedec || spec.strict_jedec,
        "adaptation": art.adapted.as_ref().map(|a| &a.metadata),
        "files": names,
    });
    let mut files = art.files;
    files.push(("metadata.json".into(), pretty(&metadata)));
    files.push(("summary.json".into(), pretty(&art.summary)));
    for (name, body) in &files {
        let path = out_dir.join(name);
        fs::write(&path, body)
            .map_err(|source| RunError::Io { context: format!("writing {}", path.display()), source })?;
    }
    Ok(RunOutput { output_dir: out_dir, files: names, summary: art.summary })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn adapted(spec: &ExperimentSpec, profile: &DeviceProfile) -> Result<Option<Adapted>, CharacterizeError> {
    let Some(a) = &spec.adaptation else { return Ok(None) };
    let m = spec.mitigation.clone().unwrap_or_default();
    Ok(Some(adapt(&m, a, profile, spec.temperature, &spec.timing, spec.bank.blast_radius)?))
}

fn run_sweep(spec: &ExperimentSpec, profile: &DeviceProfile, opts: &RunOptions) -> Result<Artifacts, RunError> {
    let s = spec.sweep.as_ref().expect("validated");
    let factory = spec
        .factory(profile, spec.bank.seed, opts.strict_jedec)?
        .with_mitigation(spec.mitigation.clone().unwrap_or_default());
    let block = if s.full_scale { 1024 } else { s.block_size };
    let rows = select_rows(spec.bank.rows, block);
    let result = sweep(&factory, &rows, &s.t_on_values, s.sidedness, &spec.seeds, s.activation_budget)?;
    let base = result.summary.first().filter(|r| r.t_on_ns == spec.timing.t_ras_min).map(|r| r.mean);
    let per_t: Vec<Value> = result
        .summary
        .iter()
        .map(|r| {
            json!({
                "t_on_ns": r.t_on_ns, "mean": r.mean, "min": r.min, "max": r.max,
                "ratio_to_tras": base.map(|b| r.mean / b),
            })
        })
        .collect();
    let summary = json!({
        "kind": "sweep",
        "rows": rows.len(),
        "sidedness": s.sidedness,
        "temperature": spec.temperature,
        "t_on": per_t,
    });
    Ok(Artifacts {
        files: vec![("results.csv".into(), result.results_csv()), ("summary.csv".into(), result.summary_csv())],
        summary,
        adapted: None,
    })
}

fn run_poc_kind(spec: &ExperimentSpec, profile: &DeviceProfile, opts: &RunOptions) -> Result<Artifacts, RunError> {
    let p = spec.poc.as_ref().expect("validated");
    let mapping = RowMapping { rows: spec.bank.rows, kind: p.mapping };
    let base = spec.factory(profile, spec.bank.seed, opts.strict_jedec)?;
    let mitigation = spec.mitigation.clone().unwrap_or_default();
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        for &order in &p.orders {
            for &n in &p.num_reads_values {
                cells.push((seed, order, n));
            }
        }
    }
    let reports = cells
        .par_iter()
        .map(|&(seed, order, n)| {
            let f = base.clone().with_mitigation(mitigation.with_seed(seed));
            run_poc(&f, &spec.poc_params(p, n, order), &mapping)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("seed,algorithm,num_reads,t_on_ns,victim_flips,victim_rows_flipped,flips,flipped_rows,activations,neighbor_refreshes\n");
    let mut flips = Vec::new();
    let mut rows = Vec::new();
    for (&(seed, order, _), r) in cells.iter().zip(&reports) {
        let alg = algorithm_name(order);
        let _ = writeln!(
            csv,
            "{seed},{alg},{},{},{},{},{},{},{},{}",
            r.num_reads,
            r.t_on_ns,
            r.victim_flips,
            r.victim_rows_flipped,
            r.flips,
            r.flipped_rows,
            r.activations,
            r.neighbor_refreshes
        );
        flips.extend(r.flip_log.iter().copied());
        rows.push(json!({
            "seed": seed, "algorithm": alg, "num_reads": r.num_reads, "t_on_ns": r.t_on_ns,
            "victim_flips": r.victim_flips, "victim_rows_flipped": r.victim_rows_flipped,
            "flips": r.flips, "flipped_rows": r.flipped_rows,
        }));
    }
    Ok(Artifacts {
        files: vec![("poc.csv".into(), csv), ("flips.csv".into(), flip_csv(&flips))],
        summary: json!({ "kind": "poc", "mitigation": mitigation.name(), "runs": rows }),
        adapted: None,
    })
}

pub fn algorithm_name(order: AccessOrder) -> &'static str {
    match order {
        AccessOrder::FlushAfterAll => "alg1",
        AccessOrder::FlushEachAccess => "alg2",
    }
}

fn suite_json(label: &str, r: &SuiteReport) -> Value {
    json!({
        "config": label, "patterns": r.patterns, "flipped_patterns": r.flipped_patterns,
        "flips": r.total_flips, "worst_pattern": r.worst.as_ref().map(|w| &w.pattern),
    })
}

fn run_mitigation_eval(
    spec: &ExperimentSpec,
    profile: &DeviceProfile,
    opts: &RunOptions,
) -> Result<Artifacts, RunError> {
    let m = spec.mitigation_eval.as_ref().expect("validated");
    let original = spec.mitigation.clone().expect("validated");
    let adapted = adapted(spec, profile)?;
    let mut files = Vec::new();
    let mut summary = json!({ "kind": "mitigation_eval", "mitigation": original.name() });

    if let Some(suite) = &m.suite {
        let base = spec.factory(profile, spec.bank.seed, opts.strict_jedec)?;
        let mut configs = vec![("none", MitigationConfig::None, None), ("original", original.clone(), None)];
        if let Some(a) = &adapted {
            configs.push(("adapted", a.mitigation.clone(), Some(a.policy)));
        }
        let mut csv = String::from("config,seed,patterns,flipped_patterns,flips\n");
        let mut rows = Vec::new();
        for &seed in &spec.seeds {
            let suite = AdversarialSuite { seed, ..suite.clone() };
            for (label, cfg, cap) in &configs {
                let f = base.clone().with_mitigation(cfg.with_seed(seed));
                let r = run_adversarial_suite(&f, *cap, &suite)?;
                let _ = writeln!(csv, "{label},{seed},{},{},{}", r.patterns, r.flipped_patterns, r.total_flips);
                let mut j = suite_json(label, &r);
                j["seed"] = json!(seed);
                rows.push(j);
            }
        }
        files.push(("suite.csv".into(), csv));
        summary["suite"] = json!(rows);
    }

    if let Some(p) = &m.para {
        let MitigationConfig::Para(orig) = &original else { unreachable!("validated") };
        let br = spec.bank.blast_radius;
        let tras = spec.timing.t_ras_min;
        let design_bound = para_window_bound(orig.p, br, p.tras_acts, spec.timing.window_capacity(tras));
        let mut runs = vec![("original", orig.p, None)];
        if let Some(a) = &adapted {
            let MitigationConfig::Para(ap) = &a.mitigation else { unreachable!("adapted para stays para") };
            runs.push(("adapted", ap.p, Some(a.policy.t_on_cap)));
        }
        let mut csv = String::from("config,seed,attack_t_on_ns,effective_t_on_ns,p,flip_after,activations_per_window,windows,flipped_windows,flip_probability,upper_95,bound\n");
        let mut rows = Vec::new();
        let mut memo: Vec<(ParaMonteCarlo, crate::eval::ParaMonteCarloResult)> = Vec::new();
        for &seed in &spec.seeds {
            for &(label, prob, cap) in &runs {
                for &t in &p.attack_t_on {
                    let eff = cap.map_or(t, |c| t.min(c));
                    let cfg = ParaMonteCarlo {
                        p: prob,
                        rng_seed: seed,
                        windows: p.windows,
                        activations_per_window: spec.timing.window_capacity(eff),
                        flip_after: activations_to_flip(profile, spec.temperature, p.tras_acts, eff)?,
                        blast_radius: br,
                    };
                    // Clamped attacks often coincide; reuse their result.
                    let r = match memo.iter().find(|(c, _)| *c == cfg) {
                        Some(&(_, r)) => r,
                        None => {
                            let r = para_monte_carlo(&cfg)?;
                            memo.push((cfg, r));
                            r
                        }
                    };
                    let _ = writeln!(
                        csv,
                        "{label},{seed},{t},{eff},{prob},{},{},{},{},{},{},{}",
                        cfg.flip_after,
                        cfg.activations_per_window,
                        r.windows,
                        r.flipped_windows,
                        r.flip_probability,
                        r.upper_95,
                        p.bound
                    );
                    rows.push(json!({
                        "config": label, "seed": seed, "attack_t_on_ns": t, "p": prob,
                        "flip_probability": r.flip_probability, "within_bound": r.flip_probability <= p.bound,
                    }));
                }
            }
        }
        files.push(("para_mc.csv".into(), csv));
        summary["para"] = json!({ "bound": p.bound, "design_union_bound": design_bound, "runs": rows });
    }

    if let Some(traffic) = &m.traffic {
        let cap = adapted.as_ref().expect("validated").policy.t_on_cap;
        let (csv, rows) = overhead_table(traffic, &spec.seeds, &[cap], &spec.timing)?;
        files.push(("overhead.csv".into(), csv));
        summary["overhead"] = rows;
    }
    if let Some(a) = &adapted {
        summary["adapted"] = json!(a.mitigation);
    }
    Ok(Artifacts { files, summary, adapted })
}

fn overhead_table(
    traffic: &TrafficSpec,
    seeds: &[u64],
    caps: &[u64],
    timing: &TimingParams,
) -> Result<(String, Value), RunError> {
    let per_seed = seeds
        .par_iter()
        .map(|&s| overhead_for_seed(traffic, s, caps, timing))
        .collect::<Result<Vec<Vec<OverheadPoint>>, _>>()?;
    let mut csv = String::from("seed,t_on_cap_ns,baseline_ns,capped_ns,overhead,forced_precharges\n");
    for (seed, points) in seeds.iter().zip(&per_seed) {
        for pt in points {
            let _ = writeln!(
                csv,
                "{seed},{},{},{},{},{}",
                pt.t_on_cap_ns, pt.baseline_ns, pt.capped_ns, pt.overhead, pt.forced_precharges
            );
        }
    }
    let means: Vec<Value> = caps
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mean = per_seed.iter().map(|p| p[i].overhead).sum::<f64>() / per_seed.len() as f64;
            let max = per_seed.iter().map(|p| p[i].overhead).fold(f64::NEG_INFINITY, f64::max);
            json!({ "t_on_cap_ns": c, "mean_overhead": mean, "max_overhead": max })
        })
        .collect();
    Ok((csv, json!(means)))
}

fn run_overhead(spec: &ExperimentSpec) -> Result<Artifacts, RunError> {
    let o = spec.overhead.as_ref().expect("validated");
    let (csv, means) = overhead_table(&o.traffic, &spec.seeds, &o.caps, &spec.timing)?;
    Ok(Artifacts {
        files: vec![("overhead.csv".into(), csv)],
        summary: json!({ "kind": "overhead", "traffic": o.traffic, "caps": means }),
        adapted: None,
    })
}

fn run_overlap(spec: &ExperimentSpec, profile: &DeviceProfile, opts: &RunOptions) -> Result<Artifacts, RunError> {
    let o = spec.overlap.as_ref().expect("validated");
    let wait = o.retention_wait_ns.unwrap_or(profile.retention_tail.max_retention_ns + 1);
    let mut csv = String::from(
        "seed,total_cells,press_cells,hammer_cells,retention_cells,press_and_hammer,press_and_retention,\
         press_hammer_fraction,press_retention_fraction,press_one_to_zero,press_zero_to_one,\
         hammer_one_to_zero,hammer_zero_to_one\n",
    );
    let mut reports = Vec::new();
    for &seed in &spec.seeds {
        let f = spec.factory(profile, seed, opts.strict_jedec)?;
        let (h, p, r) = (hammer_run(&f)?, press_run(&f, o.press_t_on)?, retention_run(&f, wait)?);
        let rep = overlap_and_direction(&f.materialization, &h, &p, &r)?;
        let _ = writeln!(
            csv,
            "{seed},{},{},{},{},{},{},{},{},{},{},{},{}",
            rep.total_cells,
            rep.press_cells,
            rep.hammer_cells,
            rep.retention_cells,
            rep.press_and_hammer,
            rep.press_and_retention,
            rep.press_hammer_fraction,
            rep.press_retention_fraction,
            rep.press_directions.one_to_zero,
            rep.press_directions.zero_to_one,
            rep.hammer_directions.one_to_zero,
            rep.hammer_directions.zero_to_one
        );
        reports.push(json!({ "seed": seed, "report": rep }));
    }
    Ok(Artifacts {
        files: vec![("overlap.csv".into(), csv)],
        summary: json!({ "kind": "overlap", "press_t_on_ns": o.press_t_on, "retention_wait_ns": wait, "runs": reports }),
        adapted: None,
    })
}

fn run_crossover(spec: &ExperimentSpec, profile: &DeviceProfile) -> Result<Artifacts, RunError> {
    let c = spec.crossover.as_ref().expect("validated");
    let t = spec.temperature;
    let changes = sign_changes(profile, c.t_on_min, c.t_on_max, t, c.samples)?;
    let point = crossover_scan(profile, c.t_on_min, c.t_on_max, t)?;
    let mut csv = String::from("t_on_ns,single,double,difference\n");
    let n = c.samples.max(2);
    let (a, b) = ((c.t_on_min as f64).ln(), (c.t_on_max as f64).ln());
    let mut last = None;
    for i in 0..n {
        let x = ((a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as u64).clamp(c.t_on_min, c.t_on_max);
        if last == Some(x) {
            continue;
        }
        last = Some(x);
        let s = profile.acmin_at(x, Sidedness::Single, t).map_err(CharacterizeError::from)?;
        let d = profile.acmin_at(x, Sidedness::Double, t).map_err(CharacterizeError::from)?;
        let _ = writeln!(csv, "{x},{s},{d},{}", s - d);
    }
    let summary = json!({
        "kind": "crossover",
        "crossover_t_on_ns": point,
        "sign_changes": changes.len(),
        "difference_at_min": sidedness_difference(profile, c.t_on_min, t)?,
        "difference_at_max": sidedness_difference(profile, c.t_on_max, t)?,
    });
    Ok(Artifacts { files: vec![("crossover.csv".into(), csv)], summary, adapted: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str, extra: &str) -> String {
        format!(
            r#"{{"schema": 1, "kind": "{kind}", "profile": "crossover", "temperature": 50,
                "seeds": [0], "output_dir": "out"{extra}}}"#
        )
    }

    #[test]
    fn empty_seeds_names_field() {
        let text = minimal("crossover", r#", "crossover": {}"#).replace("[0]", "[]");
        let spec = ExperimentSpec::from_json(&text).unwrap();
        assert_eq!(spec.validate().unwrap_err().to_string(), "seeds: must not be empty");
    }

    #[test]
    fn missing_section_names_field() {
        let spec = ExperimentSpec::from_json(&minimal("sweep", "")).unwrap();
        let e = spec.validate().unwrap_err();
        assert_eq!(e.field, "sweep");
    }

    #[test]
    fn unknown_field_is_a_spec_error() {
        let e = ExperimentSpec::from_json(&minimal("sweep", r#", "sweeep": {}"#)).unwrap_err();
        assert_eq!(e.field, "sweeep");
        let e = ExperimentSpec::from_json(r#"{"schema": 1}"#).unwrap_err();
        assert_eq!(e.field, "kind");
    }

    #[test]
    fn unknown_profile() {
        let spec = ExperimentSpec::from_json(
            &minimal("crossover", r#", "crossover": {}"#).replace("\"crossover\", \"temp", "\"nope\", \"temp"),
        )
        .unwrap();
        assert_eq!(spec.validate().unwrap_err().field, "profile");
    }

    #[test]
    fn temperature_is_scaled_when_available() {
        let mut spec = ExperimentSpec::from_json(&minimal("crossover", r#", "crossover": {}"#)).unwrap();
        spec.profile = "paper-mfrH-50C".into();
        spec.temperature = 80;
        let p = spec.resolve_profile().unwrap();
        assert!(p.has_curve(Sidedness::Single, 80));
        spec.temperature = 20;
        assert_eq!(spec.resolve_profile().unwrap_err().field, "temperature");
    }
}
