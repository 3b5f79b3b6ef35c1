//! UCT search for the maximum-product path.
//!
//! A tree node is a path prefix. Each iteration selects by UCB1 on
//! max-rewards normalised by the best reward seen so far, expands one
//! untried move, finishes the path with a uniformly random rollout and
//! backs the reward up as a running maximum. Moves that could no longer
//! reach a class node within the depth limit are never generated.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PathResult, TransitionGraph};
use crate::error::{Error, Result};
use crate::kg::EntityId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub budget: usize,
    pub max_depth: usize,
    pub exploration: f64,
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            budget: 2000,
            max_depth: 5,
            exploration: 1.414,
            seed: 0,
        }
    }
}

struct Node {
    entity: usize,
    depth: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    untried: Vec<usize>,
    visits: u64,
    best: f64,
    terminal: bool,
}

/// Feasible moves out of `u` for a prefix of `depth` factor entities.
fn moves(tg: &TransitionGraph, u: usize, depth: usize, max_depth: usize, on_path: &dyn Fn(usize) -> bool) -> Vec<usize> {
    tg.out(u)
        .iter()
        .map(|&(v, _)| v)
        .filter(|&v| {
            if tg.is_class_node(v) {
                depth < max_depth
            } else {
                tg.is_factor(v) && depth + 2 <= max_depth && !on_path(v)
            }
        })
        .collect()
}

pub fn mcts_best_path(tg: &TransitionGraph, start: &EntityId, cfg: &MctsConfig) -> Result<PathResult> {
    if cfg.budget == 0 || cfg.max_depth < 2 {
        return Err(Error::InvalidArgument("budget must be ≥ 1 and max_depth ≥ 2".into()));
    }
    let s = tg.node(start).ok_or_else(|| Error::UnknownEntity(start.to_string()))?;
    if !tg.is_factor(s) {
        return Err(Error::InvalidArgument(format!("`{start}` is not a factor entity")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let root_moves = moves(tg, s, 1, cfg.max_depth, &|v| v == s);
    let mut tree = vec![Node {
        entity: s,
        depth: 1,
        parent: None,
        children: Vec::new(),
        untried: root_moves,
        visits: 0,
        best: 0.0,
        terminal: false,
    }];
    let mut global: Option<PathResult> = None;
    let mut seq: Vec<usize> = Vec::with_capacity(cfg.max_depth + 1);

    for _ in 0..cfg.budget {
        // selection
        let mut cur = 0;
        while !tree[cur].terminal && tree[cur].untried.is_empty() && !tree[cur].children.is_empty() {
            let norm = global.as_ref().map(|g| g.r_path).unwrap_or(1.0).max(f64::MIN_POSITIVE);
            let ln_n = (tree[cur].visits.max(1) as f64).ln();
            let mut pick = tree[cur].children[0];
            let mut pick_ucb = f64::NEG_INFINITY;
            for &c in &tree[cur].children {
                let child = &tree[c];
                let ucb = if child.visits == 0 {
                    f64::INFINITY
                } else {
                    child.best / norm + cfg.exploration * (ln_n / child.visits as f64).sqrt()
                };
                if ucb > pick_ucb {
                    pick_ucb = ucb;
                    pick = c;
                }
            }
            cur = pick;
        }

        // expansion
        if !tree[cur].terminal && !tree[cur].untried.is_empty() {
            let k = rng.gen_range(0..tree[cur].untried.len());
            let v = tree[cur].untried.swap_remove(k);
            prefix(&tree, cur, &mut seq);
            let terminal = tg.is_class_node(v);
            let depth = tree[cur].depth + usize::from(!terminal);
            let untried = if terminal {
                Vec::new()
            } else {
                moves(tg, v, depth, cfg.max_depth, &|x| x == v || seq.contains(&x))
            };
            let id = tree.len();
            tree.push(Node {
                entity: v,
                depth,
                parent: Some(cur),
                children: Vec::new(),
                untried,
                visits: 0,
                best: 0.0,
                terminal,
            });
            tree[cur].children.push(id);
            cur = id;
        }

        // rollout
        prefix(&tree, cur, &mut seq);
        let reward = if tree[cur].terminal {
            finish(tg, &seq, &mut global)
        } else {
            let mut depth = tree[cur].depth;
            loop {
                let u = *seq.last().expect("non-empty");
                let opts = moves(tg, u, depth, cfg.max_depth, &|x| seq.contains(&x));
                if opts.is_empty() {
                    break 0.0;
                }
                let v = opts[rng.gen_range(0..opts.len())];
                seq.push(v);
                if tg.is_class_node(v) {
                    break finish(tg, &seq, &mut global);
                }
                depth += 1;
            }
        };

        // backpropagation
        let mut n = Some(cur);
        while let Some(i) = n {
            tree[i].visits += 1;
            if reward > tree[i].best {
                tree[i].best = reward;
            }
            n = tree[i].parent;
        }
    }
    global.ok_or_else(|| Error::NoPath(start.to_string()))
}

/// Entity sequence from the root to `node`, inclusive.
fn prefix(tree: &[Node], node: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut n = Some(node);
    while let Some(i) = n {
        out.push(tree[i].entity);
        n = tree[i].parent;
    }
    out.reverse();
}

fn finish(tg: &TransitionGraph, seq: &[usize], global: &mut Option<PathResult>) -> f64 {
    let cand = tg.finish(seq);
    let r = cand.r_path;
    if r > 0.0 && global.as_ref().is_none_or(|g| cand.better_than(g)) {
        *global = Some(cand);
    }
    r
}
