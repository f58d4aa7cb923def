//! MAP inference for binary pairwise energies
//! `E(s) = sum_i s_i u_i + sum_{i<j} s_i s_j p_ij` with optional hard exclusions.
//!
//! Both observation fusion and hypothesis selection reduce to this problem.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Largest problem the exhaustive solver accepts.
pub const EXHAUSTIVE_LIMIT: usize = 25;

/// Default beam width of [`solve_multibranch`].
pub const DEFAULT_BRANCHES: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyGraph {
    pub unaries: Vec<f64>,
    pairwise: BTreeMap<(usize, usize), f64>,
    exclusions: BTreeSet<(usize, usize)>,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl EnergyGraph {
    pub fn new(unaries: Vec<f64>) -> Self {
        Self {
            unaries,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.unaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unaries.is_empty()
    }

    /// Adds `value` to the pairwise term between `i` and `j`.
    ///
    /// # Panics
    /// If `i == j` or either index is out of range.
    pub fn add_pairwise(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j && i < self.len() && j < self.len(), "bad pairwise edge ({i}, {j})");
        if value != 0.0 {
            *self.pairwise.entry(ordered(i, j)).or_insert(0.0) += value;
        }
    }

    /// Forbids selecting both `i` and `j`.
    pub fn add_exclusion(&mut self, i: usize, j: usize) {
        assert!(i != j && i < self.len() && j < self.len(), "bad exclusion ({i}, {j})");
        self.exclusions.insert(ordered(i, j));
    }

    pub fn pairwise(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.pairwise.iter().map(|(&k, &v)| (k, v))
    }

    pub fn exclusions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.exclusions.iter().copied()
    }

    pub fn is_excluded(&self, i: usize, j: usize) -> bool {
        self.exclusions.contains(&ordered(i, j))
    }

    pub fn energy_of(&self, selected: &[bool]) -> Result<f64> {
        if selected.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: selected.len(),
            });
        }
        if self.exclusions.iter().any(|&(i, j)| selected[i] && selected[j]) {
            return Ok(f64::INFINITY);
        }
        let unary: f64 = self
            .unaries
            .iter()
            .zip(selected)
            .filter(|(_, &s)| s)
            .map(|(u, _)| u)
            .sum();
        let pair: f64 = self
            .pairwise
            .iter()
            .filter(|(&(i, j), _)| selected[i] && selected[j])
            .map(|(_, v)| v)
            .sum();
        Ok(unary + pair)
    }

    fn adjacency(&self) -> Adjacency {
        let n = self.len();
        let mut pair = vec![Vec::new(); n];
        let mut excl = vec![Vec::new(); n];
        for (&(i, j), &v) in &self.pairwise {
            pair[i].push((j, v));
            pair[j].push((i, v));
        }
        for &(i, j) in &self.exclusions {
            excl[i].push(j);
            excl[j].push(i);
        }
        Adjacency { pair, excl }
    }
}

struct Adjacency {
    pair: Vec<Vec<(usize, f64)>>,
    excl: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: Vec<bool>,
    pub energy: f64,
}

impl Selection {
    pub fn empty(n: usize) -> Self {
        Self {
            selected: vec![false; n],
            energy: 0.0,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

fn energies_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Lower energy first, then fewer selected nodes, then the lexicographically
/// smallest indicator vector.
fn compare(a_energy: f64, a_sel: &[bool], b_energy: f64, b_sel: &[bool]) -> Ordering {
    if !energies_tie(a_energy, b_energy) {
        return a_energy.total_cmp(&b_energy);
    }
    let ca = a_sel.iter().filter(|&&s| s).count();
    let cb = b_sel.iter().filter(|&&s| s).count();
    let ia = a_sel.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i);
    let ib = b_sel.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i);
    ca.cmp(&cb).then_with(|| ia.cmp(ib))
}

/// Exact minimizer by depth-first enumeration. Test oracle for the
/// approximate solver.
pub fn solve_exhaustive(graph: &EnergyGraph) -> Result<Selection> {
    let n = graph.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooManyNodes {
            nodes: n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let adj = graph.adjacency();
    let mut best = Selection::empty(n);
    let mut current = vec![false; n];
    enumerate(graph, &adj, 0, 0.0, &mut current, &mut best);
    best.energy = graph.energy_of(&best.selected)?;
    Ok(best)
}

fn enumerate(
    graph: &EnergyGraph,
    adj: &Adjacency,
    node: usize,
    energy: f64,
    current: &mut Vec<bool>,
    best: &mut Selection,
) {
    if node == graph.len() {
        if compare(energy, current, best.energy, &best.selected) == Ordering::Less {
            best.selected.clone_from(current);
            best.energy = energy;
        }
        return;
    }
    enumerate(graph, adj, node + 1, energy, current, best);
    if adj.excl[node].iter().any(|&j| j < node && current[j]) {
        return;
    }
    let delta = graph.unaries[node]
        + adj.pair[node]
            .iter()
            .filter(|(j, _)| *j < node && current[*j])
            .map(|(_, v)| v)
            .sum::<f64>();
    current[node] = true;
    enumerate(graph, adj, node + 1, energy + delta, current, best);
    current[node] = false;
}

/// Partial solution with incremental bookkeeping: `gain[i]` is the energy
/// change caused by adding node `i` (or, for selected nodes, the negated
/// change of removing it) and `blocked[i]` counts selected exclusion partners.
#[derive(Clone)]
struct BeamState {
    selected: Vec<bool>,
    energy: f64,
    gain: Vec<f64>,
    blocked: Vec<u32>,
}

impl BeamState {
    fn empty(graph: &EnergyGraph) -> Self {
        let n = graph.len();
        Self {
            selected: vec![false; n],
            energy: 0.0,
            gain: graph.unaries.clone(),
            blocked: vec![0; n],
        }
    }

    fn flip(&mut self, adj: &Adjacency, i: usize) {
        let adding = !self.selected[i];
        let sign = if adding { 1.0 } else { -1.0 };
        self.energy += sign * self.gain[i];
        self.selected[i] = adding;
        for &(j, v) in &adj.pair[i] {
            self.gain[j] += sign * v;
        }
        for &j in &adj.excl[i] {
            if adding {
                self.blocked[j] += 1;
            } else {
                self.blocked[j] -= 1;
            }
        }
    }

    /// Energy change of flipping `i`, or `None` when the flip is infeasible.
    fn flip_delta(&self, i: usize) -> Option<f64> {
        if self.selected[i] {
            Some(-self.gain[i])
        } else if self.blocked[i] == 0 {
            Some(self.gain[i])
        } else {
            None
        }
    }
}

/// Approximate minimizer: beam search over single-node additions starting from
/// the empty selection, keeping the `branches` best distinct partial solutions
/// per step, followed by steepest 1-flip descent.
///
/// The search is repeated for every beam width up to `branches` and the best
/// result is kept, which makes the returned energy non-increasing in
/// `branches`. The result never violates an exclusion and its energy is at
/// most zero.
pub fn solve_multibranch(graph: &EnergyGraph, branches: usize) -> Selection {
    let branches = branches.max(1);
    let n = graph.len();
    if n == 0 {
        return Selection::empty(0);
    }
    let adj = graph.adjacency();
    let mut best = Selection::empty(n);
    for width in 1..=branches {
        let candidate = local_descent(&adj, beam_search(graph, &adj, width));
        if compare(candidate.energy, &candidate.selected, best.energy, &best.selected) == Ordering::Less {
            best = Selection {
                selected: candidate.selected,
                energy: candidate.energy,
            };
        }
    }
    // recompute from scratch so the reported energy matches energy_of exactly
    best.energy = graph.energy_of(&best.selected).unwrap_or(f64::INFINITY);
    debug_assert!(best.energy.is_finite());
    best
}

fn beam_search(graph: &EnergyGraph, adj: &Adjacency, width: usize) -> BeamState {
    let n = graph.len();
    let mut beams = vec![BeamState::empty(graph)];
    let mut best = beams[0].clone();

    loop {
        // (energy, beam, node, resulting selection)
        let mut candidates: Vec<(f64, usize, usize, Vec<bool>)> = Vec::new();
        for (b, state) in beams.iter().enumerate() {
            for i in 0..n {
                if state.selected[i] || state.blocked[i] > 0 || state.gain[i] >= 0.0 {
                    continue;
                }
                let mut sel = state.selected.clone();
                sel[i] = true;
                candidates.push((state.energy + state.gain[i], b, i, sel));
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.3.iter().filter(|&&x| x).count().cmp(&b.3.iter().filter(|&&x| x).count()))
                .then_with(|| a.3.cmp(&b.3))
        });
        candidates.dedup_by(|a, b| a.3 == b.3);
        candidates.truncate(width);

        let next: Vec<BeamState> = candidates
            .into_iter()
            .map(|(_, b, i, _)| {
                let mut s = beams[b].clone();
                s.flip(adj, i);
                s
            })
            .collect();
        for s in &next {
            if compare(s.energy, &s.selected, best.energy, &best.selected) == Ordering::Less {
                best = s.clone();
            }
        }
        beams = next;
    }
    best
}

fn local_descent(adj: &Adjacency, mut state: BeamState) -> BeamState {
    let n = state.selected.len();
    for _ in 0..(4 * n + 16) {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if let Some(delta) = state.flip_delta(i) {
                if delta < -1e-12 && best.is_none_or(|(d, _)| delta < d) {
                    best = Some((delta, i));
                }
            }
        }
        match best {
            Some((_, i)) => state.flip(adj, i),
            None => break,
        }
    }
    state
}
