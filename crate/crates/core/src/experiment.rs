//! End-to-end experiment driver: dataset preparation, training, propagation-based
//! inference, evaluation and report files. Configurations are `key = value` text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::encoder::{encode, Architecture, EncoderConfig, EncoderParams};
use crate::energy::{dirichlet_energy, interpolation_bounds, write_energy_csv_file, EnergyReport};
use crate::error::{Error, Result};
use crate::eval::{similarity_matrix, MetricsReport};
use crate::mmkg::{
    apply_modality_mask, generate_synthetic, impute_initial, load_alignments, load_mmkg_dir, partition_entities,
    write_alignments, write_mmkg, Mmkg, Modality, SeedAlignments, SyntheticSpec, DEFAULT_ATTR_PERCENTILE,
};
use crate::propagation::{averaged_similarity, propagate, propagate_blocks, ColumnBlock, DEFAULT_ITERATIONS};
use crate::tensor::DenseMatrix;
use crate::training::{train, write_history_csv_file, AlignmentTask, TrainConfig, TrainResult};

/// Where the graph pair comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Generated from the spec; its seed is replaced by the experiment seed.
    Synthetic(SyntheticSpec),
    /// A directory with `source/`, `target/`, `train.tsv` and `test.tsv`.
    Directory(PathBuf),
}

/// Which rows propagation clamps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PropagationScope {
    /// Each modality block of the joint embedding is propagated on its own, clamping the
    /// entities that hold that modality.
    #[default]
    Modality,
    /// The whole joint embedding is propagated, clamping the consistent entities of the
    /// consistency partition.
    Joint,
}

impl std::str::FromStr for PropagationScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(Self::Modality),
            "joint" => Ok(Self::Joint),
            _ => Err(Error::Config(format!(
                "unknown propagation scope `{s}`; expected modality or joint"
            ))),
        }
    }
}

impl std::fmt::Display for PropagationScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Modality => "modality",
            Self::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Re-split the gold pairs so this share becomes training seeds.
    pub r_seed: Option<f64>,
    /// Share of entities keeping their visual features.
    pub r_img: Option<f64>,
    /// Share of entities keeping their text features.
    pub r_tex: Option<f64>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub n_p: usize,
    pub propagation: bool,
    pub propagation_scope: PropagationScope,
    pub self_loops: bool,
    pub attr_percentile: f64,
    /// Modalities removed from both graphs and from the encoder.
    pub dropped: Vec<Modality>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic(SyntheticSpec::default()),
            r_seed: Some(0.3),
            r_img: None,
            r_tex: None,
            encoder: EncoderConfig {
                dim: 64,
                ..EncoderConfig::default()
            },
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            n_p: DEFAULT_ITERATIONS,
            propagation: true,
            propagation_scope: PropagationScope::default(),
            self_loops: true,
            attr_percentile: DEFAULT_ATTR_PERCENTILE,
            dropped: Vec::new(),
            seed: 0,
        }
    }
}

/// Ablation switches accepted by [`ExperimentConfig::apply_ablation`].
pub const ABLATION_TOKENS: [&str; 9] = [
    "drop-g", "drop-r", "drop-t", "drop-v", "no-prop", "no-task0", "no-taskk", "no-km1", "no-k",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), T::to_string)
}

fn modality_list(s: &str) -> Result<Vec<Modality>> {
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse::<Modality>()).collect()
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_kv(&fs::read_to_string(path)?)
    }

    /// Sets one key. Keys match those written by [`to_kv`](Self::to_kv).
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(field) = key.strip_prefix("synth.") {
            return match &mut self.dataset {
                DatasetSpec::Synthetic(sp) => set_synth(sp, field, key, v),
                DatasetSpec::Directory(_) => Err(Error::Config(format!("`{key}` needs a synthetic dataset"))),
            };
        }
        let (e, t) = (&mut self.encoder, &mut self.train);
        match key {
            "dataset" => {
                self.dataset = if v == "synthetic" {
                    DatasetSpec::Synthetic(SyntheticSpec::default())
                } else {
                    DatasetSpec::Directory(PathBuf::from(v))
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "r_seed" => self.r_seed = parse_opt(key, v)?,
            "r_img" => self.r_img = parse_opt(key, v)?,
            "r_tex" => self.r_tex = parse_opt(key, v)?,
            "np" => self.n_p = parse(key, v)?,
            "propagation" => self.propagation = parse(key, v)?,
            "propagation_scope" => self.propagation_scope = v.parse()?,
            "self_loops" => self.self_loops = parse(key, v)?,
            "attr_percentile" => self.attr_percentile = parse(key, v)?,
            "drop" => self.dropped = modality_list(v)?,
            "ablate" => {
                for tok in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    self.apply_ablation(tok)?;
                }
            }
            "modalities" => e.modalities = modality_list(v)?,
            "encoder.dim" => e.dim = parse(key, v)?,
            "encoder.heads" => e.heads = parse(key, v)?,
            "encoder.gat_heads" => e.gat_heads = parse(key, v)?,
            "encoder.gat_layers" => e.gat_layers = parse(key, v)?,
            "encoder.ffn_dim" => e.ffn_dim = parse_opt(key, v)?,
            "encoder.leaky_slope" => e.leaky_slope = parse(key, v)?,
            "encoder.ln_eps" => e.ln_eps = parse(key, v)?,
            "train.temperature" => t.loss.temperature = parse(key, v)?,
            "train.normalize" => t.loss.normalize = parse(key, v)?,
            "train.phi_outside" => t.loss.phi_outside = parse(key, v)?,
            "train.phi_floor" => t.loss.phi_floor = parse(key, v)?,
            "train.task0" => t.loss.terms.task0 = parse(key, v)?,
            "train.taskk" => t.loss.terms.taskk = parse(key, v)?,
            "train.modal_km1" => t.loss.terms.modal_km1 = parse(key, v)?,
            "train.modal_k" => t.loss.terms.modal_k = parse(key, v)?,
            "train.penalty" => t.loss.penalty = parse_opt(key, v)?,
            "train.c_min" => t.loss.c_min = parse(key, v)?,
            "train.c_max" => t.loss.c_max = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.learning_rate" => t.learning_rate = parse(key, v)?,
            "train.warmup_fraction" => t.warmup_fraction = parse(key, v)?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.grad_accumulation" => t.grad_accumulation = parse(key, v)?,
            "train.validation_fraction" => t.validation_fraction = parse(key, v)?,
            "train.patience" => t.patience = parse_opt(key, v)?,
            "train.iterative" => t.iterative = parse(key, v)?,
            "train.extra_epochs" => t.extra_epochs = parse(key, v)?,
            "train.mutual_floor" => t.mutual_floor = parse_opt(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies one ablation token from [`ABLATION_TOKENS`].
    pub fn apply_ablation(&mut self, token: &str) -> Result<()> {
        let terms = &mut self.train.loss.terms;
        match token {
            "no-prop" => self.propagation = false,
            "no-task0" => terms.task0 = false,
            "no-taskk" => terms.taskk = false,
            "no-km1" => terms.modal_km1 = false,
            "no-k" => terms.modal_k = false,
            t => match t.strip_prefix("drop-").map(str::parse::<Modality>) {
                Some(Ok(m)) => {
                    if !self.dropped.contains(&m) {
                        self.dropped.push(m);
                        self.dropped.sort_unstable();
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown ablation `{token}`; expected one of {}",
                        ABLATION_TOKENS.join(", ")
                    )))
                }
            },
        }
        Ok(())
    }

    /// Modalities the encoder uses after drops.
    pub fn active_modalities(&self) -> Vec<Modality> {
        let mut base = self.encoder.ordered_modalities();
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            base.retain(|m| *m == Modality::Graph || s.modalities.contains(m));
        }
        base.retain(|m| !self.dropped.contains(m));
        base
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        for (name, r) in [("r_seed", self.r_seed), ("r_img", self.r_img), ("r_tex", self.r_tex)] {
            if matches!(r, Some(x) if !(0.0..=1.0).contains(&x)) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.attr_percentile) {
            return Err(Error::Config("attr_percentile must lie in [0, 1]".into()));
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        if self.active_modalities().is_empty() {
            return Err(Error::Config("every modality is dropped".into()));
        }
        Ok(())
    }

    /// Every key with its value, in a fixed order. Parsing the echo reproduces the config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let join = |ms: &[Modality]| {
            if ms.is_empty() {
                "none".to_string()
            } else {
                ms.iter().map(|m| m.token()).collect::<Vec<_>>().join(",")
            }
        };
        match &self.dataset {
            DatasetSpec::Synthetic(_) => put("dataset", "synthetic".into()),
            DatasetSpec::Directory(p) => put("dataset", p.display().to_string()),
        }
        put("seed", self.seed.to_string());
        if let DatasetSpec::Synthetic(sp) = &self.dataset {
            put("synth.n", sp.n.to_string());
            put("synth.modalities", join(&sp.modalities));
            put("synth.dim_g", sp.dim_g.to_string());
            put("synth.dim_r", sp.dim_r.to_string());
            put("synth.dim_t", sp.dim_t.to_string());
            put("synth.dim_v", sp.dim_v.to_string());
            put("synth.noise", sp.noise.to_string());
            put("synth.overlap", sp.overlap.to_string());
            put("synth.avg_degree", sp.avg_degree.to_string());
            put("synth.homophily", sp.homophily.to_string());
            put("synth.communities", sp.communities.to_string());
            put("synth.specificity", sp.specificity.to_string());
            put("synth.community_keys", sp.community_keys.to_string());
            put("synth.min_attrs", sp.min_attrs.to_string());
            put("synth.max_attrs", sp.max_attrs.to_string());
        }
        put("r_seed", opt_str(&self.r_seed));
        put("r_img", opt_str(&self.r_img));
        put("r_tex", opt_str(&self.r_tex));
        put("np", self.n_p.to_string());
        put("propagation", self.propagation.to_string());
        put("propagation_scope", self.propagation_scope.to_string());
        put("self_loops", self.self_loops.to_string());
        put("attr_percentile", self.attr_percentile.to_string());
        put("drop", join(&self.dropped));
        put("modalities", join(&self.active_modalities()));
        let e = &self.encoder;
        put("encoder.dim", e.dim.to_string());
        put("encoder.heads", e.heads.to_string());
        put("encoder.gat_heads", e.gat_heads.to_string());
        put("encoder.gat_layers", e.gat_layers.to_string());
        put("encoder.ffn_dim", opt_str(&e.ffn_dim));
        put("encoder.leaky_slope", e.leaky_slope.to_string());
        put("encoder.ln_eps", e.ln_eps.to_string());
        let t = &self.train;
        put("train.temperature", t.loss.temperature.to_string());
        put("train.normalize", t.loss.normalize.to_string());
        put("train.phi_outside", t.loss.phi_outside.to_string());
        put("train.phi_floor", t.loss.phi_floor.to_string());
        put("train.task0", t.loss.terms.task0.to_string());
        put("train.taskk", t.loss.terms.taskk.to_string());
        put("train.modal_km1", t.loss.terms.modal_km1.to_string());
        put("train.modal_k", t.loss.terms.modal_k.to_string());
        put("train.penalty", opt_str(&t.loss.penalty));
        put("train.c_min", t.loss.c_min.to_string());
        put("train.c_max", t.loss.c_max.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.learning_rate", t.learning_rate.to_string());
        put("train.warmup_fraction", t.warmup_fraction.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.adam_eps", t.adam_eps.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.grad_accumulation", t.grad_accumulation.to_string());
        put("train.validation_fraction", t.validation_fraction.to_string());
        put("train.patience", opt_str(&t.patience));
        put("train.iterative", t.iterative.to_string());
        put("train.extra_epochs", t.extra_epochs.to_string());
        put("train.mutual_floor", opt_str(&t.mutual_floor));
        s
    }

    /// SHA-256 of the echo, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn set_synth(sp: &mut SyntheticSpec, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "n" => sp.n = parse(key, v)?,
        "modalities" => sp.modalities = modality_list(v)?,
        "dim_g" => sp.dim_g = parse(key, v)?,
        "dim_r" => sp.dim_r = parse(key, v)?,
        "dim_t" => sp.dim_t = parse(key, v)?,
        "dim_v" => sp.dim_v = parse(key, v)?,
        "noise" => sp.noise = parse(key, v)?,
        "overlap" => sp.overlap = parse(key, v)?,
        "avg_degree" => sp.avg_degree = parse(key, v)?,
        "homophily" => sp.homophily = parse(key, v)?,
        "communities" => sp.communities = parse(key, v)?,
        "specificity" => sp.specificity = parse(key, v)?,
        "community_keys" => sp.community_keys = parse(key, v)?,
        "min_attrs" => sp.min_attrs = parse(key, v)?,
        "max_attrs" => sp.max_attrs = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Derives independent sub-seeds from the experiment seed.
fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt)
}

/// Masked, imputed graphs with their seed split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub source: Mmkg,
    pub target: Mmkg,
    pub seeds: SeedAlignments,
    pub task: AlignmentTask,
    /// Share of entities holding each feature modality, per graph.
    pub present_ratio: BTreeMap<Modality, (f64, f64)>,
}

/// Writes a synthetic dataset directory in the format read by [`load_dataset_dir`].
pub fn write_dataset_dir(dir: &Path, source: &Mmkg, target: &Mmkg, seeds: &SeedAlignments) -> Result<()> {
    fs::create_dir_all(dir.join("source"))?;
    fs::create_dir_all(dir.join("target"))?;
    write_mmkg(source, &dir.join("source"))?;
    write_mmkg(target, &dir.join("target"))?;
    write_alignments(&dir.join("train.tsv"), &seeds.train)?;
    write_alignments(&dir.join("test.tsv"), &seeds.test)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<(Mmkg, Mmkg, SeedAlignments)> {
    let source = load_mmkg_dir(&dir.join("source"))?;
    let target = load_mmkg_dir(&dir.join("target"))?;
    let seeds = SeedAlignments::new(
        load_alignments(&dir.join("train.tsv"))?,
        load_alignments(&dir.join("test.tsv"))?,
    )?;
    Ok((source, target, seeds))
}

/// Graph pair and split before any masking.
pub fn load_raw(cfg: &ExperimentConfig) -> Result<(Mmkg, Mmkg, SeedAlignments)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => generate_synthetic(&SyntheticSpec {
            seed: cfg.seed,
            ..spec.clone()
        }),
        DatasetSpec::Directory(dir) => load_dataset_dir(dir),
    }
}

fn present_ratio(g: &Mmkg, m: Modality) -> f64 {
    g.modality(m)
        .map_or(0.0, |f| f.present_count() as f64 / g.entity_count().max(1) as f64)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let (mut source, mut target, mut seeds) = load_raw(cfg)?;
    if let Some(r) = cfg.r_seed {
        seeds = seeds.resplit(r, sub_seed(cfg.seed, 1));
    }
    for (m, ratio) in [(Modality::Visual, cfg.r_img), (Modality::Text, cfg.r_tex)] {
        if let Some(r) = ratio {
            if source.modality(m).is_some() && !cfg.dropped.contains(&m) {
                source = apply_modality_mask(&source, m, r, sub_seed(cfg.seed, 2))?;
                target = apply_modality_mask(&target, m, r, sub_seed(cfg.seed, 3))?;
            }
        }
    }
    for &m in &cfg.dropped {
        source = source.without_modality(m);
        target = target.without_modality(m);
    }
    let source = impute_initial(&source, sub_seed(cfg.seed, 4));
    let target = impute_initial(&target, sub_seed(cfg.seed, 5));
    let task = AlignmentTask::new(&source, &target, &cfg.active_modalities(), cfg.self_loops)?;
    let present_ratio = Modality::FEATURE
        .iter()
        .filter(|m| source.modality(**m).is_some())
        .map(|&m| (m, (present_ratio(&source, m), present_ratio(&target, m))))
        .collect();
    Ok(PreparedData {
        source,
        target,
        seeds,
        task,
        present_ratio,
    })
}

/// The encoder configuration actually trained: the configured one restricted to the
/// active modalities.
pub fn effective_encoder(cfg: &ExperimentConfig) -> EncoderConfig {
    EncoderConfig {
        modalities: cfg.active_modalities(),
        ..cfg.encoder.clone()
    }
}

pub fn train_prepared(data: &PreparedData, cfg: &ExperimentConfig) -> Result<TrainResult> {
    let train_cfg = TrainConfig {
        seed: sub_seed(cfg.seed, 6),
        ..cfg.train.clone()
    };
    train(&data.task, &data.seeds.train, &effective_encoder(cfg), &train_cfg)
}

/// Outcome of inference with a trained encoder.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    /// Propagation steps actually averaged (0 without propagation).
    pub propagation_steps: usize,
    /// Dirichlet energy of the source and target embeddings before propagation.
    pub energy_before: (f64, f64),
    /// ...and after the last propagation step.
    pub energy_after: (f64, f64),
    /// Interpolation bounds of the propagated source embedding against the original.
    pub source_bounds: Option<EnergyReport>,
    pub target_bounds: Option<EnergyReport>,
}

/// One block per encoder modality, in joint-embedding column order. Rows are clamped
/// where the entity holds the modality; the structure block is clamped everywhere.
fn modality_blocks(g: &Mmkg, modalities: &[Modality], dim: usize) -> Vec<ColumnBlock> {
    modalities
        .iter()
        .enumerate()
        .map(|(c, &m)| ColumnBlock {
            start: c * dim,
            width: dim,
            known: match g.modality(m) {
                Some(f) if m != Modality::Graph => f.present.clone(),
                _ => vec![true; g.entity_count()],
            },
        })
        .collect()
}

pub fn evaluate(
    data: &PreparedData,
    params: &EncoderParams<DenseMatrix>,
    cfg: &ExperimentConfig,
) -> Result<Evaluation> {
    let (_, joint) = encode(params, &data.task.input, &effective_encoder(cfg))?;
    let (xs, xt) = data.task.split_rows(&joint.ori);
    let lap_s = &data.task.source_ops.laplacian;
    let lap_t = &data.task.target_ops.laplacian;
    let energy_before = (dirichlet_energy(&xs, lap_s)?, dirichlet_energy(&xt, lap_t)?);
    let steps = if cfg.propagation { cfg.n_p } else { 0 };
    let (omega, energy_after, source_bounds, target_bounds) = if steps == 0 {
        (similarity_matrix(&xs, &xt), energy_before, None, None)
    } else {
        let (snaps_s, snaps_t) = match cfg.propagation_scope {
            PropagationScope::Joint => {
                let known_s = partition_entities(&data.source, cfg.attr_percentile).known_mask(data.task.n_source);
                let known_t = partition_entities(&data.target, cfg.attr_percentile).known_mask(data.task.n_target);
                (
                    propagate(&xs, &data.task.source_ops.normalized, &known_s, steps, 0.0)?,
                    propagate(&xt, &data.task.target_ops.normalized, &known_t, steps, 0.0)?,
                )
            }
            PropagationScope::Modality => {
                let mods = effective_encoder(cfg).ordered_modalities();
                let d = cfg.encoder.dim;
                (
                    propagate_blocks(
                        &xs,
                        &data.task.source_ops.normalized,
                        &modality_blocks(&data.source, &mods, d),
                        steps,
                    )?,
                    propagate_blocks(
                        &xt,
                        &data.task.target_ops.normalized,
                        &modality_blocks(&data.target, &mods, d),
                        steps,
                    )?,
                )
            }
        };
        let snaps_s: Vec<DenseMatrix> = std::iter::once(xs.clone()).chain(snaps_s).collect();
        let snaps_t: Vec<DenseMatrix> = std::iter::once(xt.clone()).chain(snaps_t).collect();
        let (ls, lt) = (snaps_s.last().expect("x0"), snaps_t.last().expect("x0"));
        let after = (dirichlet_energy(ls, lap_s)?, dirichlet_energy(lt, lap_t)?);
        let bs = interpolation_bounds(&xs, ls, lap_s)?;
        let bt = interpolation_bounds(&xt, lt, lap_t)?;
        (averaged_similarity(&snaps_s, &snaps_t)?, after, Some(bs), Some(bt))
    };
    Ok(Evaluation {
        metrics: MetricsReport::evaluate(&omega, &data.seeds.test, &[1, 5, 10]),
        propagation_steps: steps,
        energy_before,
        energy_after,
        source_bounds,
        target_bounds,
    })
}

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub training: TrainResult,
    /// `None` when training diverged.
    pub evaluation: Option<Evaluation>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = prepare(cfg)?;
    let training = train_prepared(&data, cfg)?;
    let evaluation = match training.diverged {
        Some(_) => None,
        None => Some(evaluate(&data, &training.params, cfg)?),
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        data,
        training,
        evaluation,
    })
}

/// Checks that a checkpoint fits the prepared data.
pub fn check_architecture(arch: &Architecture, data: &PreparedData, cfg: &ExperimentConfig) -> Result<()> {
    let expected = Architecture::new(effective_encoder(cfg), &data.task.input)?;
    let resolved = |a: &Architecture| {
        let mut a = a.clone();
        a.config.ffn_dim = Some(a.config.ffn_dim());
        a
    };
    if resolved(arch) != resolved(&expected) {
        return Err(Error::structural(format!(
            "checkpoint architecture ({} entities, modalities {:?}, dim {}) does not match the configured data \
             ({} entities, modalities {:?}, dim {})",
            arch.entities,
            arch.config.modalities,
            arch.config.dim,
            expected.entities,
            expected.config.modalities,
            expected.config.dim
        )));
    }
    Ok(())
}

/// Metrics JSON body.
#[derive(Serialize)]
struct MetricsFile<'a> {
    config_hash: String,
    seed: u64,
    metrics: &'a MetricsReport,
    propagation_steps: usize,
    energy_before: (f64, f64),
    energy_after: (f64, f64),
    present_ratio: BTreeMap<String, (f64, f64)>,
}

/// Writes `metrics.json` and `metrics.csv`.
pub fn write_metrics(dir: &Path, cfg: &ExperimentConfig, data: &PreparedData, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    let body = MetricsFile {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        metrics: &eval.metrics,
        propagation_steps: eval.propagation_steps,
        energy_before: eval.energy_before,
        energy_after: eval.energy_after,
        present_ratio: data.present_ratio.iter().map(|(m, r)| (m.to_string(), *r)).collect(),
    };
    let mut json = serde_json::to_string_pretty(&body)?;
    json.push('\n');
    fs::write(dir.join("metrics.json"), json)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let m = &eval.metrics;
    let mut header = vec!["config_hash".to_string(), "pairs".into()];
    let mut row = vec![cfg.hash(), m.pairs.to_string()];
    for (k, v) in &m.hits {
        header.push(format!("hits_at_{k}"));
        row.push(v.to_string());
    }
    header.extend(["mrr".into(), "propagation_steps".into(), "tie_policy".into()]);
    row.extend([
        m.mrr.to_string(),
        eval.propagation_steps.to_string(),
        m.tie_policy.to_string(),
    ]);
    w.write_record(&header)?;
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// Writes the config echo, history, energy trace and (if finished) metrics of a run.
pub fn write_reports(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), outcome.config.to_kv())?;
    write_history_csv_file(&dir.join("history.csv"), &outcome.training.history)?;
    let energy: Vec<_> = outcome.training.history.iter().map(|r| r.energy.clone()).collect();
    write_energy_csv_file(&dir.join("energy.csv"), &energy)?;
    if let Some(eval) = &outcome.evaluation {
        write_metrics(dir, &outcome.config, &outcome.data, eval)?;
    }
    Ok(())
}

/// Axes accepted by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    RSeed,
    RImg,
    RTex,
    NP,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r_seed" | "R_seed" => Ok(Self::RSeed),
            "r_img" | "R_img" => Ok(Self::RImg),
            "r_tex" | "R_tex" => Ok(Self::RTex),
            "np" | "n_p" => Ok(Self::NP),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}`; expected r_seed, r_img, r_tex or np"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::RSeed => "r_seed",
            Self::RImg => "r_img",
            Self::RTex => "r_tex",
            Self::NP => "np",
        }
    }
}

/// One sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    pub pairs: usize,
    /// Share of source entities keeping visual / text features after masking.
    pub visual_ratio: f64,
    pub text_ratio: f64,
}

/// Runs the pipeline once per value. For `np` the encoder is trained once and only
/// inference varies.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let row = |value: f64, data: &PreparedData, eval: &Evaluation| SweepRow {
        axis: axis.name(),
        value,
        hits_at_1: eval.metrics.hits_at_1,
        hits_at_10: eval.metrics.hits_at_10,
        mrr: eval.metrics.mrr,
        pairs: eval.metrics.pairs,
        visual_ratio: data.present_ratio.get(&Modality::Visual).map_or(0.0, |r| r.0),
        text_ratio: data.present_ratio.get(&Modality::Text).map_or(0.0, |r| r.0),
    };
    let diverged = |t: &TrainResult| {
        t.diverged
            .as_ref()
            .map(|d| Err(Error::numerical(format!("training diverged: {d}"))))
            .unwrap_or(Ok(()))
    };
    let mut out = Vec::with_capacity(values.len());
    if axis == SweepAxis::NP {
        let data = prepare(base)?;
        let trained = train_prepared(&data, base)?;
        diverged(&trained)?;
        for &v in values {
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::Config(format!("np must be a non-negative integer, got {v}")));
            }
            let cfg = ExperimentConfig {
                n_p: v as usize,
                ..base.clone()
            };
            out.push(row(v, &data, &evaluate(&data, &trained.params, &cfg)?));
        }
        return Ok(out);
    }
    for &v in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::RSeed => cfg.r_seed = Some(v),
            SweepAxis::RImg => cfg.r_img = Some(v),
            SweepAxis::RTex => cfg.r_tex = Some(v),
            SweepAxis::NP => unreachable!("handled above"),
        }
        let run = run_experiment(&cfg)?;
        diverged(&run.training)?;
        out.push(row(v, &run.data, run.evaluation.as_ref().expect("not diverged")));
    }
    Ok(out)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
