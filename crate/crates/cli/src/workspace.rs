//! On-disk layout of a working directory.
//!
//! ```text
//! <dir>/corpus.tsv      all periods, period 0 first
//! <dir>/seed.kg         graph snapshot before pretraining
//! <dir>/state.json      last committed loop state
//! <dir>/decisions.log   append-only mirror of the review log
//! <dir>/runs/<run>/     exported reports
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgloop_core::closed_loop::{load_corpus, parse_config, LoopConfig, LoopState};
use kgloop_core::detector::UserDocument;
use kgloop_core::expand::decision_log_line;
use kgloop_core::kg::{load_snapshot, KnowledgeGraph};

pub type State = LoopState<f64>;

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join("corpus.tsv")
    }

    pub fn seed_graph_path(&self) -> PathBuf {
        self.root.join("seed.kg")
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("decisions.log")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Report directory of `run`; names are plain file names.
    pub fn run_dir(&self, run: &str) -> Result<PathBuf> {
        let ok = !run.is_empty()
            && run != "."
            && run != ".."
            && run.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !ok {
            bail!("invalid run name `{run}`");
        }
        Ok(self.runs_dir().join(run))
    }

    pub fn corpus(&self) -> Result<Vec<UserDocument>> {
        let path = self.corpus_path();
        load_corpus(&path).with_context(|| format!("reading {} (run `init` first)", path.display()))
    }

    pub fn seed_graph(&self) -> Result<KnowledgeGraph> {
        let path = self.seed_graph_path();
        load_snapshot(&path).with_context(|| format!("reading {} (run `init` first)", path.display()))
    }

    pub fn has_state(&self) -> bool {
        self.state_path().exists()
    }

    pub fn state(&self) -> Result<State> {
        let path = self.state_path();
        State::load(&path).with_context(|| format!("reading {} (run `pretrain` first)", path.display()))
    }

    /// Writes the state through a temporary file and appends the decisions
    /// the log file does not have yet.
    pub fn commit(&self, state: &State) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        self.sync_log(state)?;
        let tmp = self.root.join("state.json.tmp");
        fs::write(&tmp, state.to_json()?)?;
        fs::rename(&tmp, self.state_path())?;
        Ok(())
    }

    fn sync_log(&self, state: &State) -> Result<()> {
        let path = self.log_path();
        let written = match fs::read_to_string(&path) {
            Ok(text) => text.lines().filter(|l| !l.trim().is_empty()).count(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        let log = state.queue.log();
        if written > log.len() {
            bail!("{} has {written} decisions but the state only {}", path.display(), log.len());
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        for d in &log[written..] {
            writeln!(f, "{}", decision_log_line(d))?;
        }
        Ok(())
    }
}

/// Defaults, then the file at `path`, then `--set` overrides, then the seed.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<LoopConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&p.display().to_string(), &text)?
        }
        None => LoopConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("`--set {o}`: expected key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}
