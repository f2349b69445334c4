use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Kahn topological sort over `n` nodes where `edge(from, to)` reports a
/// directed edge. Ready nodes are emitted smallest index first.
///
/// On failure returns the nodes of one directed cycle.
pub fn topo_order(n: usize, edge: impl Fn(usize, usize) -> bool) -> Result<Vec<usize>, Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for from in 0..n {
        for to in 0..n {
            if from != to && edge(from, to) {
                succ[from].push(to);
                indeg[to] += 1;
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(Reverse(w));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    Err(find_cycle(&succ, &indeg))
}

// Every remaining node has positive in-degree, so walking predecessors
// among them must revisit a node.
fn find_cycle(succ: &[Vec<usize>], indeg: &[usize]) -> Vec<usize> {
    let n = succ.len();
    let remaining: Vec<bool> = indeg.iter().map(|&d| d > 0).collect();
    let mut pred = vec![None; n];
    for from in 0..n {
        if !remaining[from] {
            continue;
        }
        for &to in &succ[from] {
            if remaining[to] && pred[to].is_none() {
                pred[to] = Some(from);
            }
        }
    }
    let start = match (0..n).find(|&v| remaining[v]) {
        Some(v) => v,
        None => return Vec::new(),
    };
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut v = start;
    while seen[v] == usize::MAX {
        seen[v] = path.len();
        path.push(v);
        v = match pred[v] {
            Some(p) => p,
            None => return path,
        };
    }
    let mut cycle: Vec<usize> = path[seen[v]..].to_vec();
    cycle.reverse();
    cycle
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_by_index() {
        assert_eq!(topo_order(4, |_, _| false).unwrap(), vec![0, 1, 2, 3]);
        let order = topo_order(3, |a, b| (a, b) == (2, 0) || (a, b) == (0, 1)).unwrap();
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn reports_cycle() {
        let cyc = topo_order(3, |a, b| {
            (a, b) == (0, 1) || (a, b) == (1, 2) || (a, b) == (2, 1)
        })
        .unwrap_err();
        let mut sorted = cyc.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2]);
    }
}
