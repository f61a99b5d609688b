//! Maximum spanning arborescence decoding (Chu-Liu/Edmonds) with exactly one
//! child of ROOT.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes heads from `scores [n × (n+1)]`, where `scores[i][j]` scores
/// token `i+1` taking head `j` (0 = ROOT). Returns `heads[i]` for token
/// `i+1`.
///
/// The single-root constraint is exact: the unconstrained decoder is run
/// once per candidate root child with every other ROOT edge removed, and the
/// best tree wins (lowest root child on ties).
pub fn mst_decode(scores: &Tensor) -> Result<Vec<usize>> {
    let (n, cols) = scores
        .dims2()
        .ok_or_else(|| Error::shape("mst_decode", scores.shape(), &[0, 0]))?;
    if cols != n + 1 {
        return Err(Error::shape("mst_decode", scores.shape(), &[n, n + 1]));
    }
    if !scores.is_finite() {
        return Err(Error::Invalid("mst_decode needs finite scores".into()));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    // w[dep][head] over nodes 0..=n
    let mut w = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    for (d, row) in w.iter_mut().enumerate().skip(1) {
        for (h, x) in row.iter_mut().enumerate() {
            if h != d {
                *x = scores.get2(d - 1, h);
            }
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        let mut wr = w.clone();
        for (d, row) in wr.iter_mut().enumerate().skip(1) {
            if d != r {
                row[0] = f64::NEG_INFINITY;
            }
        }
        let parents = chu_liu_edmonds(&wr);
        let heads = parents[1..].to_vec();
        let total = tree_score(scores, &heads);
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, heads));
        }
    }
    Ok(best.expect("n ≥ 2").1)
}

/// Sum of the scores of the chosen arcs.
pub fn tree_score(scores: &Tensor, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(i, &h)| scores.get2(i, h)).sum()
}

/// True when `heads` (token `i+1` → `heads[i]`) is a tree with exactly one
/// child of ROOT.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if n == 0 || heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    if heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    // every token must reach ROOT within n steps
    (1..=n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if v == 0 {
                return true;
            }
            v = heads[v - 1];
        }
        false
    })
}

/// Unconstrained maximum arborescence rooted at node 0 of the dense graph
/// `w[dep][head]`. Returns a parent for every node (`parents[0]` is 0).
fn chu_liu_edmonds(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut parent = vec![0usize; m];
    for d in 1..m {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (h, &x) in w[d].iter().enumerate() {
            if h != d && (arg == usize::MAX || x > best) {
                best = x;
                arg = h;
            }
        }
        parent[d] = arg;
    }
    let Some(cycle) = find_cycle(&parent) else {
        return parent;
    };

    let mut in_cycle = vec![false; m];
    cycle.iter().for_each(|&v| in_cycle[v] = true);
    // new ids: non-cycle nodes in order, then the contracted node
    let mut new_id = vec![usize::MAX; m];
    let mut old_of = Vec::new();
    for v in 0..m {
        if !in_cycle[v] {
            new_id[v] = old_of.len();
            old_of.push(v);
        }
    }
    let c = old_of.len();
    cycle.iter().for_each(|&v| new_id[v] = c);
    let mm = c + 1;
    let mut w2 = vec![vec![f64::NEG_INFINITY; mm]; mm];
    // enter[u]: cycle node entered from outside head u; exit[v]: cycle node heading v
    let mut enter = vec![usize::MAX; m];
    let mut exit = vec![usize::MAX; m];
    for d in 1..m {
        for h in 0..m {
            if h == d || w[d][h] == f64::NEG_INFINITY {
                continue;
            }
            match (in_cycle[h], in_cycle[d]) {
                (false, true) => {
                    let s = w[d][h] - w[d][parent[d]];
                    if enter[h] == usize::MAX || s > w2[c][new_id[h]] {
                        w2[c][new_id[h]] = s;
                        enter[h] = d;
                    }
                }
                (true, false) => {
                    if exit[d] == usize::MAX || w[d][h] > w2[new_id[d]][c] {
                        w2[new_id[d]][c] = w[d][h];
                        exit[d] = h;
                    }
                }
                (false, false) => w2[new_id[d]][new_id[h]] = w[d][h],
                (true, true) => {}
            }
        }
    }
    let sub = chu_liu_edmonds(&w2);
    let mut out = parent.clone();
    for d2 in 1..mm {
        let h2 = sub[d2];
        if d2 == c {
            let u = old_of[h2];
            let v = enter[u];
            out[v] = u;
        } else {
            let d = old_of[d2];
            out[d] = if h2 == c { exit[d] } else { old_of[h2] };
        }
    }
    out
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let m = parent.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        path.iter().for_each(|&p| state[p] = 2);
    }
    None
}
