use super::{PathResult, TransitionGraph};
use crate::error::{Error, Result};
use crate::kg::EntityId;

/// Enumeration is exponential; graphs with more non-class nodes are refused.
pub const MAX_BRUTE_FORCE_NODES: usize = 14;

/// Exhaustive search over simple paths of at most `max_depth` hops
/// (counting the final class → depression hop).
pub fn brute_force_best_path(tg: &TransitionGraph, start: &EntityId, max_depth: usize) -> Result<PathResult> {
    let non_class = (0..tg.len()).filter(|&i| !tg.is_class_node(i)).count();
    if non_class > MAX_BRUTE_FORCE_NODES {
        return Err(Error::InvalidArgument(format!(
            "{non_class} non-class nodes exceed the enumeration limit of {MAX_BRUTE_FORCE_NODES}"
        )));
    }
    let s = tg.node(start).ok_or_else(|| Error::UnknownEntity(start.to_string()))?;
    if !tg.is_factor(s) {
        return Err(Error::InvalidArgument(format!("`{start}` is not a factor entity")));
    }
    let mut best: Option<PathResult> = None;
    let mut seq = vec![s];
    let mut on_path = vec![false; tg.len()];
    on_path[s] = true;
    dfs(tg, max_depth, &mut seq, &mut on_path, &mut best);
    best.ok_or_else(|| Error::NoPath(start.to_string()))
}

fn dfs(tg: &TransitionGraph, max_depth: usize, seq: &mut Vec<usize>, on_path: &mut [bool], best: &mut Option<PathResult>) {
    let u = *seq.last().expect("non-empty");
    for &(v, _) in tg.out(u) {
        if tg.is_class_node(v) {
            // seq.len() hops to reach v, one more to depression
            if seq.len() < max_depth {
                seq.push(v);
                let cand = tg.finish(seq);
                seq.pop();
                if cand.r_path > 0.0 && best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    *best = Some(cand);
                }
            }
        } else if tg.is_factor(v) && !on_path[v] && seq.len() + 2 <= max_depth {
            seq.push(v);
            on_path[v] = true;
            dfs(tg, max_depth, seq, on_path, best);
            on_path[v] = false;
            seq.pop();
        }
    }
}
