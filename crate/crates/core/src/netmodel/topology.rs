use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::{Bus, Customer, Line};

/// Rooted view of a radial feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyReport {
    /// Buses in breadth-first order from the root; parents precede children.
    pub order: Vec<usize>,
    pub depth: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub parent_line: Vec<Option<usize>>,
    /// Downstream (child) bus of every line.
    pub line_child: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// Customers fed through each line, ascending.
    pub downstream_customers: Vec<Vec<usize>>,
    pub dt_line: usize,
}

impl TopologyReport {
    pub fn lowest_common_ancestor(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Lines on the forest path between `a` and `b` plus the closing line.
fn cycle_lines(adj: &[Vec<(usize, usize)>], a: usize, b: usize, closing: usize, lines: &[Line]) -> Vec<String> {
    let n = adj.len();
    let mut via: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([a]);
    seen[a] = true;
    while let Some(u) = queue.pop_front() {
        if u == b {
            break;
        }
        for &(v, li) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                via[v] = Some((u, li));
                queue.push_back(v);
            }
        }
    }
    let mut names = vec![lines[closing].name.clone()];
    let mut cur = b;
    while let Some((prev, li)) = via[cur] {
        names.push(lines[li].name.clone());
        cur = prev;
    }
    names.sort();
    names
}

/// Checks that the line set forms a tree spanning every bus and returns
/// the depth-ordered view rooted at `root`.
pub fn validate_radial(buses: &[Bus], lines: &[Line], root: usize, customers: &[Customer]) -> Result<TopologyReport> {
    let n = buses.len();
    let mut uf: Vec<usize> = (0..n).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (li, line) in lines.iter().enumerate() {
        if line.from == line.to {
            return Err(Error::Cycle(vec![line.name.clone()]));
        }
        let (ra, rb) = (find(&mut uf, line.from), find(&mut uf, line.to));
        if ra == rb {
            return Err(Error::Cycle(cycle_lines(&adj, line.from, line.to, li, lines)));
        }
        uf[ra] = rb;
        adj[line.from].push((line.to, li));
        adj[line.to].push((line.from, li));
    }

    let mut parent = vec![None; n];
    let mut parent_line = vec![None; n];
    let mut depth = vec![0; n];
    let mut children = vec![Vec::new(); n];
    let mut line_child = vec![usize::MAX; lines.len()];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        // deterministic child order: by line index
        let mut next: Vec<(usize, usize)> = adj[u].iter().copied().filter(|&(v, _)| !seen[v]).collect();
        next.sort_by_key(|&(_, li)| li);
        for (v, li) in next {
            seen[v] = true;
            parent[v] = Some(u);
            parent_line[v] = Some(li);
            depth[v] = depth[u] + 1;
            line_child[li] = v;
            children[u].push(v);
            queue.push_back(v);
        }
    }
    if order.len() != n {
        let missing = (0..n).filter(|&b| !seen[b]).map(|b| buses[b].id.clone()).collect();
        return Err(Error::Disconnected(missing));
    }
    if children[root].len() != 1 {
        return Err(Error::RootBranch {
            root: buses[root].id.clone(),
            count: children[root].len(),
        });
    }
    let dt_line = parent_line[children[root][0]].unwrap();

    let mut below: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ci, c) in customers.iter().enumerate() {
        below[c.bus].push(ci);
    }
    for &b in order.iter().rev() {
        if let Some(p) = parent[b] {
            let moved = std::mem::take(&mut below[b]);
            below[p].extend_from_slice(&moved);
            below[b] = moved;
        }
    }
    let downstream_customers = line_child
        .iter()
        .map(|&child| {
            let mut v = below[child].clone();
            v.sort_unstable();
            v
        })
        .collect();

    Ok(TopologyReport {
        order,
        depth,
        parent,
        parent_line,
        line_child,
        children,
        downstream_customers,
        dt_line,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::Mat3;
    use crate::Phase;

    fn bus(id: &str) -> Bus {
        Bus {
            id: id.into(),
            coords: None,
        }
    }

    fn line(name: &str, from: usize, to: usize) -> Line {
        Line {
            name: name.into(),
            from,
            to,
            impedance: Mat3::zeros(),
            code: None,
            length_m: None,
        }
    }

    #[test]
    fn two_bus_depth_order() {
        let buses = vec![bus("root"), bus("bus2")];
        let t = validate_radial(&buses, &[line("L1", 0, 1)], 0, &[]).unwrap();
        assert_eq!(t.order, vec![0, 1]);
        assert_eq!(t.dt_line, 0);
        assert_eq!(t.parent[1], Some(0));
    }

    #[test]
    fn three_line_cycle_is_reported() {
        let buses = vec![bus("0"), bus("1"), bus("2"), bus("3")];
        let lines = vec![line("L0", 0, 1), line("L1", 1, 2), line("L2", 2, 3), line("L3", 3, 1)];
        match validate_radial(&buses, &lines, 0, &[]) {
            Err(Error::Cycle(names)) => assert_eq!(names, vec!["L1", "L2", "L3"]),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_bus_is_reported() {
        let buses = vec![bus("0"), bus("1"), bus("2")];
        match validate_radial(&buses, &[line("L0", 0, 1)], 0, &[]) {
            Err(Error::Disconnected(ids)) => assert_eq!(ids, vec!["2"]),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn reversed_line_is_oriented_from_root() {
        let buses = vec![bus("0"), bus("1"), bus("2")];
        let lines = vec![line("L0", 0, 1), line("L1", 2, 1)];
        let t = validate_radial(&buses, &lines, 0, &[]).unwrap();
        assert_eq!(t.line_child, vec![1, 2]);
        assert_eq!(t.lowest_common_ancestor(2, 1), 1);
    }

    #[test]
    fn downstream_customer_sets() {
        let buses = vec![bus("0"), bus("1"), bus("2"), bus("3")];
        let lines = vec![line("L0", 0, 1), line("L1", 1, 2), line("L2", 1, 3)];
        let customers = vec![
            Customer {
                index: 1,
                name: "c1".into(),
                bus: 2,
                initial_phase: Phase::A,
            },
            Customer {
                index: 2,
                name: "c2".into(),
                bus: 3,
                initial_phase: Phase::B,
            },
            Customer {
                index: 3,
                name: "c3".into(),
                bus: 1,
                initial_phase: Phase::C,
            },
        ];
        let t = validate_radial(&buses, &lines, 0, &customers).unwrap();
        assert_eq!(t.downstream_customers[0], vec![0, 1, 2]);
        assert_eq!(t.downstream_customers[1], vec![0]);
        assert_eq!(t.downstream_customers[2], vec![1]);
    }
}
