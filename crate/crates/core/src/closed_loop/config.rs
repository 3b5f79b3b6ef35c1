//! `key = value` configuration files.
//!
//! Keys without a prefix set loop-level fields; `kge.`, `mcts.`,
//! `detector.`, `refine.`, `expand.`, `synth.` and `class_hop.` address the
//! sub-configurations. Entity lists use `;` between entries and `|`
//! between fields, e.g. `synth.emergent = brain fog|PhySym|3|0.35`.
//! Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::expand::ExpandConfig;
use crate::importance::MctsConfig;
use crate::kg::FactorClass;
use crate::kge::{ConvEGeometry, Encoder, TrainConfig};
use crate::refine::RefineConfig;
use crate::synth::{EmergentSpec, EntitySpec, SynthConfig};

/// Who answers the gate questions during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reviewer {
    /// approves exactly the generator's emergent entities
    #[default]
    Oracle,
    /// decisions arrive through the review API
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub seed: u64,
    pub periods: u32,
    /// detection loss weight inside the detector objective
    pub lambda: f64,
    /// refinement loss weight
    pub gamma_loss: f64,
    /// graph loss weight on expansion rounds
    pub mu: f64,
    pub expansion_interval: u32,
    /// corruptions per positive, for pretraining and refinement
    pub negatives: usize,
    pub top_m: usize,
    pub tau: f64,
    pub holdout_fraction: f64,
    /// graph-loss epochs after an expansion round
    pub retrain_epochs: usize,
    /// a period-0 pair enters the seed graph with at least this many
    /// depressed co-mentions
    pub seed_min_support: u64,
    /// and at most this share of non-depressed ones
    pub seed_max_negative_share: f64,
    pub reviewer: Reviewer,
    pub geometry: ConvEGeometry,
    pub train: TrainConfig,
    pub mcts: MctsConfig,
    pub detector: DetectorConfig,
    pub refine: RefineConfig,
    pub expand: ExpandConfig,
    pub synth: SynthConfig,
    /// fixed class-hop probabilities replacing the mention-count estimate
    pub class_hop: BTreeMap<FactorClass, f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        let geometry = ConvEGeometry::compact();
        LoopConfig {
            seed: 0,
            periods: 5,
            lambda: 1.0,
            gamma_loss: 1.0,
            mu: 1.0,
            expansion_interval: 1,
            negatives: 1,
            top_m: 1,
            tau: 1.0,
            holdout_fraction: 0.125,
            retrain_epochs: 5,
            seed_min_support: 3,
            seed_max_negative_share: 1.0 / 3.0,
            reviewer: Reviewer::Oracle,
            geometry,
            train: TrainConfig {
                d: geometry.d,
                epochs: 30,
                ..TrainConfig::default()
            },
            mcts: MctsConfig::default(),
            detector: DetectorConfig {
                epochs: 10,
                ..DetectorConfig::default()
            },
            refine: RefineConfig {
                steps: 30,
                ..RefineConfig::default()
            },
            // pairs seen only a handful of times are mostly chance co-mentions
            expand: ExpandConfig {
                min_pair_support: 6,
                ..ExpandConfig::default()
            },
            synth: SynthConfig::default(),
            class_hop: BTreeMap::new(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn entries(v: &str) -> impl Iterator<Item = Vec<&str>> {
    v.split(';')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|e| e.split('|').map(str::trim).collect())
}

fn entity_specs(key: &str, v: &str) -> Result<Vec<EntitySpec>> {
    entries(v)
        .map(|f| match f.as_slice() {
            [s, c, p, n] => Ok(EntitySpec {
                surface: s.to_string(),
                class: num(key, c)?,
                pos_rate: num(key, p)?,
                neg_rate: num(key, n)?,
            }),
            _ => Err(Error::Config(format!("`{key}`: expected surface|class|pos_rate|neg_rate"))),
        })
        .collect()
}

fn emergent_specs(key: &str, v: &str) -> Result<Vec<EmergentSpec>> {
    entries(v)
        .map(|f| match f.as_slice() {
            [s, c, o, r] => Ok(EmergentSpec {
                surface: s.to_string(),
                class: num(key, c)?,
                onset: num(key, o)?,
                rate: num(key, r)?,
            }),
            _ => Err(Error::Config(format!("`{key}`: expected surface|class|onset|rate"))),
        })
        .collect()
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_loss > 0.0) || !(self.mu > 0.0) {
            return Err(Error::Config("gamma_loss and mu must be positive".into()));
        }
        if self.expansion_interval == 0 {
            return Err(Error::Config("expansion_interval must be at least 1".into()));
        }
        if self.top_m == 0 {
            return Err(Error::Config("top_m must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.seed_max_negative_share) {
            return Err(Error::Config("seed_max_negative_share must lie in [0, 1]".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.train.d != self.geometry.d {
            return Err(Error::Config(format!(
                "kge.d = {} but the geometry has d = {}",
                self.train.d, self.geometry.d
            )));
        }
        self.geometry.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (prefix, field) = key.split_once('.').unwrap_or(("", key));
        match (prefix, field) {
            ("", "seed") => {
                self.seed = num(key, v)?;
                self.synth.seed = self.seed;
            }
            ("", "periods") => self.periods = num(key, v)?,
            ("", "lambda") => self.lambda = num(key, v)?,
            ("", "gamma_loss") => self.gamma_loss = num(key, v)?,
            ("", "mu") => self.mu = num(key, v)?,
            ("", "expansion_interval") => self.expansion_interval = num(key, v)?,
            ("", "negatives") => self.negatives = num(key, v)?,
            ("", "top_m") => self.top_m = num(key, v)?,
            ("", "tau") => self.tau = num(key, v)?,
            ("", "holdout_fraction") => self.holdout_fraction = num(key, v)?,
            ("", "retrain_epochs") => self.retrain_epochs = num(key, v)?,
            ("", "seed_min_support") => self.seed_min_support = num(key, v)?,
            ("", "seed_max_negative_share") => self.seed_max_negative_share = num(key, v)?,
            ("", "reviewer") => {
                self.reviewer = match v {
                    "oracle" => Reviewer::Oracle,
                    "external" => Reviewer::External,
                    _ => return Err(Error::Config(format!("`{key}`: expected oracle or external"))),
                }
            }
            ("kge", "learning_rate") => self.train.learning_rate = num(key, v)?,
            ("kge", "epochs") => self.train.epochs = num(key, v)?,
            ("kge", "batch_size") => self.train.batch_size = num(key, v)?,
            ("kge", "encoder") => {
                self.train.encoder = match v {
                    "attention" => Encoder::Attention,
                    "plain" => Encoder::Plain,
                    _ => return Err(Error::Config(format!("`{key}`: expected attention or plain"))),
                }
            }
            ("kge", "d") => {
                self.geometry.d = num(key, v)?;
                self.train.d = self.geometry.d;
            }
            ("kge", "rows") => self.geometry.rows = num(key, v)?,
            ("kge", "cols") => self.geometry.cols = num(key, v)?,
            ("kge", "filters") => self.geometry.filters = num(key, v)?,
            ("kge", "kernel_h") => self.geometry.kernel_h = num(key, v)?,
            ("kge", "kernel_w") => self.geometry.kernel_w = num(key, v)?,
            ("mcts", "budget") => self.mcts.budget = num(key, v)?,
            ("mcts", "max_depth") => self.mcts.max_depth = num(key, v)?,
            ("mcts", "exploration") => self.mcts.exploration = num(key, v)?,
            ("detector", "d_tok") => self.detector.d_tok = num(key, v)?,
            ("detector", "hidden_tag") => self.detector.hidden_tag = num(key, v)?,
            ("detector", "hidden_cls") => self.detector.hidden_cls = num(key, v)?,
            ("detector", "dropout") => self.detector.dropout = num(key, v)?,
            ("detector", "learning_rate") => self.detector.learning_rate = num(key, v)?,
            ("detector", "epochs") => self.detector.epochs = num(key, v)?,
            ("detector", "batch_size") => self.detector.batch_size = num(key, v)?,
            ("detector", "threshold") => self.detector.threshold = num(key, v)?,
            ("refine", "learning_rate") => self.refine.learning_rate = num(key, v)?,
            ("refine", "steps") => self.refine.steps = num(key, v)?,
            ("expand", "new_entity_threshold") => self.expand.new_entity_threshold = num(key, v)?,
            ("expand", "prototype_floor") => self.expand.prototype_floor = num(key, v)?,
            ("expand", "min_support") => self.expand.min_support = num(key, v)?,
            ("expand", "min_ratio") => self.expand.min_ratio = num(key, v)?,
            ("expand", "max_ngram") => self.expand.max_ngram = num(key, v)?,
            ("expand", "window") => self.expand.window = num(key, v)?,
            ("expand", "top_k") => self.expand.top_k = num(key, v)?,
            ("expand", "min_pair_support") => self.expand.min_pair_support = num(key, v)?,
            ("synth", "users_per_period") => self.synth.users_per_period = num(key, v)?,
            ("synth", "pretrain_users") => self.synth.pretrain_users = num(key, v)?,
            ("synth", "depressed_fraction") => self.synth.depressed_fraction = num(key, v)?,
            ("synth", "posts_per_user") => self.synth.posts_per_user = num(key, v)?,
            ("synth", "filler_per_post") => self.synth.filler_per_post = num(key, v)?,
            ("synth", "emergent_share") => self.synth.emergent_share = num(key, v)?,
            ("synth", "cue_rate") => self.synth.cue_rate = num(key, v)?,
            ("synth", "signal") => self.synth.signal = entity_specs(key, v)?,
            ("synth", "common") => self.synth.common = entity_specs(key, v)?,
            ("synth", "emergent") => self.synth.emergent = emergent_specs(key, v)?,
            ("synth", "filler") => self.synth.filler = v.split_whitespace().map(str::to_string).collect(),
            ("class_hop", c) => {
                let class: FactorClass = c.parse().map_err(|_| Error::Config(format!("unknown class in `{key}`")))?;
                self.class_hop.insert(class, num(key, v)?);
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value; parsing the result gives back an
    /// equal config.
    pub fn to_config_string(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("periods", self.periods.to_string());
        kv("lambda", self.lambda.to_string());
        kv("gamma_loss", self.gamma_loss.to_string());
        kv("mu", self.mu.to_string());
        kv("expansion_interval", self.expansion_interval.to_string());
        kv("negatives", self.negatives.to_string());
        kv("top_m", self.top_m.to_string());
        kv("tau", self.tau.to_string());
        kv("holdout_fraction", self.holdout_fraction.to_string());
        kv("retrain_epochs", self.retrain_epochs.to_string());
        kv("seed_min_support", self.seed_min_support.to_string());
        kv("seed_max_negative_share", self.seed_max_negative_share.to_string());
        kv("reviewer", if self.reviewer == Reviewer::Oracle { "oracle" } else { "external" }.into());
        kv("kge.learning_rate", self.train.learning_rate.to_string());
        kv("kge.epochs", self.train.epochs.to_string());
        kv("kge.batch_size", self.train.batch_size.to_string());
        kv("kge.encoder", if self.train.encoder == Encoder::Attention { "attention" } else { "plain" }.into());
        let g = self.geometry;
        kv("kge.d", g.d.to_string());
        kv("kge.rows", g.rows.to_string());
        kv("kge.cols", g.cols.to_string());
        kv("kge.filters", g.filters.to_string());
        kv("kge.kernel_h", g.kernel_h.to_string());
        kv("kge.kernel_w", g.kernel_w.to_string());
        kv("mcts.budget", self.mcts.budget.to_string());
        kv("mcts.max_depth", self.mcts.max_depth.to_string());
        kv("mcts.exploration", self.mcts.exploration.to_string());
        let d = &self.detector;
        kv("detector.d_tok", d.d_tok.to_string());
        kv("detector.hidden_tag", d.hidden_tag.to_string());
        kv("detector.hidden_cls", d.hidden_cls.to_string());
        kv("detector.dropout", d.dropout.to_string());
        kv("detector.learning_rate", d.learning_rate.to_string());
        kv("detector.epochs", d.epochs.to_string());
        kv("detector.batch_size", d.batch_size.to_string());
        kv("detector.threshold", d.threshold.to_string());
        kv("refine.learning_rate", self.refine.learning_rate.to_string());
        kv("refine.steps", self.refine.steps.to_string());
        let e = &self.expand;
        kv("expand.new_entity_threshold", e.new_entity_threshold.to_string());
        kv("expand.prototype_floor", e.prototype_floor.to_string());
        kv("expand.min_support", e.min_support.to_string());
        kv("expand.min_ratio", e.min_ratio.to_string());
        kv("expand.max_ngram", e.max_ngram.to_string());
        kv("expand.window", e.window.to_string());
        kv("expand.top_k", e.top_k.to_string());
        kv("expand.min_pair_support", e.min_pair_support.to_string());
        let s = &self.synth;
        kv("synth.users_per_period", s.users_per_period.to_string());
        kv("synth.pretrain_users", s.pretrain_users.to_string());
        kv("synth.depressed_fraction", s.depressed_fraction.to_string());
        kv("synth.posts_per_user", s.posts_per_user.to_string());
        kv("synth.filler_per_post", s.filler_per_post.to_string());
        kv("synth.emergent_share", s.emergent_share.to_string());
        kv("synth.cue_rate", s.cue_rate.to_string());
        let specs = |v: &[EntitySpec]| {
            v.iter()
                .map(|x| format!("{}|{}|{}|{}", x.surface, x.class.name(), x.pos_rate, x.neg_rate))
                .collect::<Vec<_>>()
                .join("; ")
        };
        kv("synth.signal", specs(&s.signal));
        kv("synth.common", specs(&s.common));
        kv(
            "synth.emergent",
            s.emergent
                .iter()
                .map(|x| format!("{}|{}|{}|{}", x.surface, x.class.name(), x.onset, x.rate))
                .collect::<Vec<_>>()
                .join("; "),
        );
        kv("synth.filler", s.filler.join(" "));
        for (c, p) in &self.class_hop {
            kv(&format!("class_hop.{}", c.name()), p.to_string());
        }
        o
    }
}

/// Defaults overridden by the keys in `text`. A `seed` key also seeds the
/// generator.
pub fn parse_config(name: &str, text: &str) -> Result<LoopConfig> {
    let mut cfg = LoopConfig::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(name, i + 1, "expected `key = value`"))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| Error::parse(name, i + 1, e.to_string()))?;
    }
    Ok(cfg)
}
