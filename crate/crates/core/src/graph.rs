//! Neighborhood structures over finite discrete spaces and the directed
//! graphs they induce.
//!
//! Chain, Cycle, Star and Complete order states by flat index and therefore
//! need an enumerable space. Grid works on any space: it moves one
//! coordinate by one step, and on binary dimensions the `+1` and `-1` moves
//! coincide, so a binary dimension contributes a single bit flip.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{fmt_state, Error, Result};
use crate::space::{DiscreteSpace, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    Chain,
    Cycle,
    Star,
    Grid,
    Complete,
    Explicit,
}

impl StructureKind {
    pub fn name(self) -> &'static str {
        match self {
            StructureKind::Chain => "chain",
            StructureKind::Cycle => "cycle",
            StructureKind::Star => "star",
            StructureKind::Grid => "grid",
            StructureKind::Complete => "complete",
            StructureKind::Explicit => "explicit",
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "chain" => StructureKind::Chain,
            "cycle" => StructureKind::Cycle,
            "star" => StructureKind::Star,
            "grid" => StructureKind::Grid,
            "complete" => StructureKind::Complete,
            "explicit" => StructureKind::Explicit,
            other => return Err(Error::Unsupported(format!("unknown structure kind `{other}`"))),
        })
    }
}

/// What Grid does with moves that leave `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Out-of-range moves are omitted.
    #[default]
    Drop,
    /// Moves wrap around (toroidal grid).
    Wrap,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Drop => "drop",
            Boundary::Wrap => "wrap",
        }
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(Boundary::Drop),
            "wrap" => Ok(Boundary::Wrap),
            other => Err(Error::Unsupported(format!("unknown boundary policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
struct ExplicitEdges {
    out: Vec<Vec<usize>>,
    rev: Vec<Vec<(usize, usize)>>,
}

/// A neighborhood function `x -> [x_n1, ..., x_nk]` over a discrete space.
///
/// Immutable once built; neighbor lists are deterministic, ordered and
/// duplicate-free.
#[derive(Debug, Clone)]
pub struct NeighborhoodStructure {
    kind: StructureKind,
    space: DiscreteSpace,
    boundary: Boundary,
    explicit: Option<ExplicitEdges>,
}

/// Builds one of the built-in structures with the default `drop` boundary.
pub fn build_structure(kind: StructureKind, space: DiscreteSpace) -> Result<NeighborhoodStructure> {
    NeighborhoodStructure::new(kind, space, Boundary::default())
}

impl NeighborhoodStructure {
    pub fn new(kind: StructureKind, space: DiscreteSpace, boundary: Boundary) -> Result<Self> {
        match kind {
            StructureKind::Explicit => {
                return Err(Error::Unsupported("explicit structures are built from an edge list".into()))
            }
            StructureKind::Chain | StructureKind::Cycle | StructureKind::Star | StructureKind::Complete => {
                space.enumerable_len()?;
            }
            StructureKind::Grid => {}
        }
        Ok(NeighborhoodStructure { kind, space, boundary, explicit: None })
    }

    pub fn grid(space: DiscreteSpace, boundary: Boundary) -> Self {
        NeighborhoodStructure { kind: StructureKind::Grid, space, boundary, explicit: None }
    }

    /// An explicit structure. Neighbor order follows edge order; repeated
    /// edges are dropped.
    pub fn from_edges(space: DiscreteSpace, edges: &[(State, State)]) -> Result<Self> {
        let n = space.enumerable_len()?;
        let mut out: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for (src, dst) in edges {
            let check = |x: &State| {
                space.check(x).map_err(|_| Error::InvalidEdge(format!("{} -> {}", fmt_state(src), fmt_state(dst))))
            };
            check(src)?;
            check(dst)?;
            let (a, b) = (space.index_unchecked(src), space.index_unchecked(dst));
            if a == b {
                return Err(Error::InvalidEdge(format!("self loop at {}", fmt_state(src))));
            }
            if !out[a].contains(&b) {
                out[a].push(b);
            }
        }
        let mut rev: Vec<Vec<(usize, usize)>> = alloc::vec![Vec::new(); n];
        for (a, list) in out.iter().enumerate() {
            for (i, &b) in list.iter().enumerate() {
                rev[b].push((a, i));
            }
        }
        Ok(NeighborhoodStructure {
            kind: StructureKind::Explicit,
            space,
            boundary: Boundary::Drop,
            explicit: Some(ExplicitEdges { out, rev }),
        })
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Ordered neighbor list of `x`.
    pub fn neighbors(&self, x: &[usize]) -> Result<Vec<State>> {
        self.space.check(x)?;
        Ok(self.neighbors_unchecked(x))
    }

    pub(crate) fn neighbors_unchecked(&self, x: &[usize]) -> Vec<State> {
        let sp = &self.space;
        match self.kind {
            StructureKind::Grid => {
                let mut out = Vec::with_capacity(2 * x.len());
                for (d, &n) in sp.dims().iter().enumerate() {
                    let v = x[d];
                    if n == 2 {
                        let mut y = x.to_vec();
                        y[d] = 1 - v;
                        out.push(y);
                        continue;
                    }
                    let up = if v + 1 < n {
                        Some(v + 1)
                    } else if self.boundary == Boundary::Wrap {
                        Some(0)
                    } else {
                        None
                    };
                    let down = if v > 0 {
                        Some(v - 1)
                    } else if self.boundary == Boundary::Wrap {
                        Some(n - 1)
                    } else {
                        None
                    };
                    for w in [up, down].into_iter().flatten() {
                        let mut y = x.to_vec();
                        y[d] = w;
                        out.push(y);
                    }
                }
                out
            }
            StructureKind::Chain => {
                let n = sp.total_states() as usize;
                let i = sp.index_unchecked(x);
                if i + 1 < n {
                    alloc::vec![sp.state_at(i + 1)]
                } else {
                    Vec::new()
                }
            }
            StructureKind::Cycle => {
                let n = sp.total_states() as usize;
                let i = sp.index_unchecked(x);
                alloc::vec![sp.state_at((i + 1) % n)]
            }
            StructureKind::Star => {
                if sp.index_unchecked(x) == 0 {
                    Vec::new()
                } else {
                    alloc::vec![sp.state_at(0)]
                }
            }
            StructureKind::Complete => {
                let n = sp.total_states() as usize;
                let i = sp.index_unchecked(x);
                (0..n).filter(|&j| j != i).map(|j| sp.state_at(j)).collect()
            }
            StructureKind::Explicit => {
                let e = self.explicit.as_ref().expect("explicit edges");
                e.out[sp.index_unchecked(x)].iter().map(|&j| sp.state_at(j)).collect()
            }
        }
    }

    pub fn degree(&self, x: &[usize]) -> Result<usize> {
        self.space.check(x)?;
        Ok(match self.kind {
            StructureKind::Chain => usize::from(self.space.index_unchecked(x) + 1 < self.space.total_states() as usize),
            StructureKind::Cycle => 1,
            StructureKind::Star => usize::from(self.space.index_unchecked(x) != 0),
            StructureKind::Complete => self.space.total_states() as usize - 1,
            _ => self.neighbors_unchecked(x).len(),
        })
    }

    /// The degree shared by every state, if there is one.
    pub fn fixed_degree(&self) -> Option<usize> {
        let sp = &self.space;
        match self.kind {
            StructureKind::Cycle => Some(1),
            StructureKind::Complete => Some(sp.total_states() as usize - 1),
            StructureKind::Grid => {
                let all_binary = sp.dims().iter().all(|&n| n == 2);
                if all_binary || self.boundary == Boundary::Wrap {
                    Some(sp.dims().iter().map(|&n| if n == 2 { 1 } else { 2 }).sum())
                } else {
                    None
                }
            }
            StructureKind::Chain | StructureKind::Star => None,
            StructureKind::Explicit => {
                let e = self.explicit.as_ref()?;
                let d = e.out.first()?.len();
                e.out.iter().all(|l| l.len() == d).then_some(d)
            }
        }
    }

    /// Whether `y ∈ N(x)` implies `x ∈ N(y)` for every pair.
    pub fn is_symmetric(&self) -> bool {
        match self.kind {
            StructureKind::Grid | StructureKind::Complete => true,
            StructureKind::Cycle => self.space.total_states() == 2,
            StructureKind::Chain | StructureKind::Star => false,
            StructureKind::Explicit => {
                let e = self.explicit.as_ref().expect("explicit edges");
                e.out.iter().enumerate().all(|(a, l)| l.iter().all(|&b| e.out[b].contains(&a)))
            }
        }
    }

    /// Position of `y` in `N(x)`, if it is a neighbor.
    pub fn neighbor_position(&self, x: &[usize], y: &[usize]) -> Result<Option<usize>> {
        self.space.check(y)?;
        Ok(self.neighbors(x)?.iter().position(|n| n.as_slice() == y))
    }

    /// The reverse neighborhood of `x`: every `(source, i)` whose `i`-th
    /// neighbor is `x`, sorted by source state then index.
    pub fn in_neighbors(&self, x: &[usize]) -> Result<Vec<(State, usize)>> {
        self.space.check(x)?;
        let sp = &self.space;
        let mut out: Vec<(State, usize)> = match self.kind {
            StructureKind::Chain => {
                let i = sp.index_unchecked(x);
                if i > 0 {
                    alloc::vec![(sp.state_at(i - 1), 0)]
                } else {
                    Vec::new()
                }
            }
            StructureKind::Cycle => {
                let n = sp.total_states() as usize;
                let i = sp.index_unchecked(x);
                alloc::vec![(sp.state_at((i + n - 1) % n), 0)]
            }
            StructureKind::Star => {
                if sp.index_unchecked(x) == 0 {
                    let n = sp.total_states() as usize;
                    (1..n).map(|j| (sp.state_at(j), 0)).collect()
                } else {
                    Vec::new()
                }
            }
            StructureKind::Grid | StructureKind::Complete => {
                let mut v = Vec::new();
                for y in self.neighbors_unchecked(x) {
                    let j = self
                        .neighbors_unchecked(&y)
                        .iter()
                        .position(|n| n.as_slice() == x)
                        .expect("symmetric structure");
                    v.push((y, j));
                }
                v
            }
            StructureKind::Explicit => {
                let e = self.explicit.as_ref().expect("explicit edges");
                e.rev[sp.index_unchecked(x)].iter().map(|&(a, i)| (sp.state_at(a), i)).collect()
            }
        };
        out.sort();
        Ok(out)
    }

    /// Weak connectivity of the whole space.
    pub fn is_connected(&self) -> Result<bool> {
        match self.kind {
            StructureKind::Explicit => {
                let states: Vec<State> = self.space.states()?.collect();
                is_weakly_connected(self, &states)
            }
            // Every built-in kind links all states of a valid space.
            _ => Ok(true),
        }
    }
}

/// `N^{-1}` for every state of an enumerable space, stored densely by flat
/// index.
#[derive(Debug, Clone)]
pub struct ReverseIndex {
    space: DiscreteSpace,
    entries: Vec<Vec<(usize, usize)>>,
}

impl ReverseIndex {
    /// Entries `(flat source index, neighbor index)` pointing at `x`.
    pub fn get(&self, x: &[usize]) -> Result<&[(usize, usize)]> {
        let i = self.space.index_of(x)?;
        Ok(&self.entries[i])
    }

    pub fn get_flat(&self, index: usize) -> &[(usize, usize)] {
        &self.entries[index]
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn total_entries(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }
}

/// Builds `N^{-1}` by a single pass over all edges.
pub fn build_reverse_index(structure: &NeighborhoodStructure) -> Result<ReverseIndex> {
    let sp = structure.space();
    let n = sp.enumerable_len()?;
    let mut entries: Vec<Vec<(usize, usize)>> = alloc::vec![Vec::new(); n];
    for a in 0..n {
        let x = sp.state_at(a);
        for (i, y) in structure.neighbors_unchecked(&x).iter().enumerate() {
            entries[sp.index_unchecked(y)].push((a, i));
        }
    }
    Ok(ReverseIndex { space: sp.clone(), entries })
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    components: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: alloc::vec![1; n], components: n }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.components -= 1;
        true
    }

    pub fn components(&self) -> usize {
        self.components
    }
}

/// Whether the undirected view of the induced graph restricted to `support`
/// is connected.
pub fn is_weakly_connected(structure: &NeighborhoodStructure, support: &[State]) -> Result<bool> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut position: BTreeMap<&[usize], usize> = BTreeMap::new();
    for x in support {
        structure.space().check(x)?;
        let next = position.len();
        position.entry(x.as_slice()).or_insert(next);
    }
    let mut uf = UnionFind::new(position.len());
    for x in support {
        let a = position[x.as_slice()];
        for y in structure.neighbors_unchecked(x) {
            if let Some(&b) = position.get(y.as_slice()) {
                uf.union(a, b);
            }
        }
    }
    Ok(uf.components() == 1)
}

/// Parses an edge list: one `src -> dst` per line, states written as
/// comma-separated integers. Blank lines and `#` comments are ignored.
pub fn parse_edges(text: &str) -> Result<Vec<(State, State)>> {
    let parse_state = |s: &str, line: usize| -> Result<State> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidEdge(format!("line {line}: bad coordinate `{}`", t.trim())))
            })
            .collect()
    };
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (src, dst) = line
            .split_once("->")
            .ok_or_else(|| Error::InvalidEdge(format!("line {}: expected `src -> dst`", k + 1)))?;
        edges.push((parse_state(src, k + 1)?, parse_state(dst, k + 1)?));
    }
    Ok(edges)
}

/// Writes an edge list in the format read by [`parse_edges`].
pub fn format_edges(structure: &NeighborhoodStructure) -> Result<String> {
    let mut out = String::new();
    for x in structure.space().states()? {
        for y in structure.neighbors_unchecked(&x) {
            let join = |s: &State| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            out.push_str(&join(&x));
            out.push_str(" -> ");
            out.push_str(&join(&y));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn space(dims: &[usize]) -> DiscreteSpace {
        DiscreteSpace::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn star_hub_has_no_neighbors() {
        let s = build_structure(StructureKind::Star, space(&[6])).unwrap();
        assert!(s.neighbors(&[0]).unwrap().is_empty());
        for i in 1..6 {
            assert_eq!(s.neighbors(&[i]).unwrap(), vec![vec![0]]);
        }
    }

    #[test]
    fn grid_corner_of_binary_square() {
        let s = build_structure(StructureKind::Grid, space(&[2, 2])).unwrap();
        assert_eq!(s.neighbors(&[0, 0]).unwrap(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn cycle_wraps() {
        let s = build_structure(StructureKind::Cycle, space(&[4])).unwrap();
        assert_eq!(s.neighbors(&[3]).unwrap(), vec![vec![0]]);
        let s16 = build_structure(StructureKind::Cycle, space(&[16])).unwrap();
        assert_eq!(s16.neighbors(&[15]).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn grid_interior_and_complete() {
        let g = build_structure(StructureKind::Grid, space(&[91, 91])).unwrap();
        assert_eq!(g.neighbors(&[40, 7]).unwrap(), vec![vec![41, 7], vec![39, 7], vec![40, 8], vec![40, 6]]);
        assert_eq!(g.neighbors(&[0, 90]).unwrap(), vec![vec![1, 90], vec![0, 89]]);
        let c = build_structure(StructureKind::Complete, space(&[3])).unwrap();
        assert_eq!(c.neighbors(&[1]).unwrap(), vec![vec![0], vec![2]]);
    }

    #[test]
    fn wrap_grid_has_degree_2d() {
        let g = NeighborhoodStructure::grid(space(&[5, 4, 3]), Boundary::Wrap);
        for x in g.space().states().unwrap() {
            assert_eq!(g.neighbors(&x).unwrap().len(), 6);
        }
        assert_eq!(g.fixed_degree(), Some(6));
        let b = NeighborhoodStructure::grid(DiscreteSpace::binary(7).unwrap(), Boundary::Drop);
        assert_eq!(b.fixed_degree(), Some(7));
        assert_eq!(b.neighbors(&[0, 1, 0, 0, 1, 1, 0]).unwrap().len(), 7);
    }

    #[test]
    fn invalid_state_rejected() {
        let g = build_structure(StructureKind::Grid, space(&[3, 3])).unwrap();
        assert!(g.neighbors(&[3, 0]).is_err());
    }

    #[test]
    fn star_reverse_index() {
        let s = build_structure(StructureKind::Star, space(&[6])).unwrap();
        let r = build_reverse_index(&s).unwrap();
        assert_eq!(r.get(&[0]).unwrap(), &[(1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]);
        for i in 1..6 {
            assert!(r.get(&[i]).unwrap().is_empty());
        }
    }

    #[test]
    fn cycle_reverse_index() {
        let s = build_structure(StructureKind::Cycle, space(&[4])).unwrap();
        let r = build_reverse_index(&s).unwrap();
        assert_eq!(r.get(&[0]).unwrap(), &[(3, 0)]);
    }

    #[test]
    fn in_neighbors_agree_with_reverse_index() {
        let spaces = [space(&[7]), space(&[3, 4]), space(&[2, 2, 2])];
        for sp in spaces {
            for kind in [
                StructureKind::Chain,
                StructureKind::Cycle,
                StructureKind::Star,
                StructureKind::Grid,
                StructureKind::Complete,
            ] {
                for boundary in [Boundary::Drop, Boundary::Wrap] {
                    let s = NeighborhoodStructure::new(kind, sp.clone(), boundary).unwrap();
                    let r = build_reverse_index(&s).unwrap();
                    let mut edges = 0;
                    for x in sp.states().unwrap() {
                        let a: Vec<(State, usize)> =
                            r.get(&x).unwrap().iter().map(|&(i, k)| (sp.state_at(i), k)).collect();
                        assert_eq!(a, s.in_neighbors(&x).unwrap(), "{kind} {x:?}");
                        edges += s.neighbors(&x).unwrap().len();
                    }
                    assert_eq!(edges, r.total_entries());
                }
            }
        }
    }

    #[test]
    fn connectivity() {
        let star = build_structure(StructureKind::Star, space(&[6])).unwrap();
        let all: Vec<State> = star.space().states().unwrap().collect();
        assert!(is_weakly_connected(&star, &all).unwrap());

        let two_cycles = NeighborhoodStructure::from_edges(
            space(&[4]),
            &[(vec![0], vec![1]), (vec![1], vec![0]), (vec![2], vec![3]), (vec![3], vec![2])],
        )
        .unwrap();
        assert!(!is_weakly_connected(&two_cycles, &all[..4]).unwrap());
        assert!(!two_cycles.is_connected().unwrap());

        let grid = build_structure(StructureKind::Grid, space(&[91, 91])).unwrap();
        let states: Vec<State> = grid.space().states().unwrap().collect();
        assert!(is_weakly_connected(&grid, &states).unwrap());

        assert_eq!(is_weakly_connected(&grid, &[]), Err(Error::EmptySupport));
        // Removing the middle column of a 3x3 grid splits it.
        let g3 = build_structure(StructureKind::Grid, space(&[3, 3])).unwrap();
        let support: Vec<State> = g3.space().states().unwrap().filter(|x| x[1] != 1).collect();
        assert!(!is_weakly_connected(&g3, &support).unwrap());
    }

    #[test]
    fn explicit_edges_validate() {
        let sp = space(&[4]);
        assert!(matches!(
            NeighborhoodStructure::from_edges(sp.clone(), &[(vec![0], vec![4])]),
            Err(Error::InvalidEdge(_))
        ));
        let s = NeighborhoodStructure::from_edges(sp, &[(vec![0], vec![2]), (vec![0], vec![1]), (vec![0], vec![2])])
            .unwrap();
        assert_eq!(s.neighbors(&[0]).unwrap(), vec![vec![2], vec![1]]);
        assert!(!s.is_symmetric());
    }

    #[test]
    fn edge_text_round_trip() {
        let s = build_structure(StructureKind::Grid, space(&[3, 2])).unwrap();
        let text = format_edges(&s).unwrap();
        let edges = parse_edges(&text).unwrap();
        let e = NeighborhoodStructure::from_edges(s.space().clone(), &edges).unwrap();
        for x in s.space().states().unwrap() {
            assert_eq!(e.neighbors(&x).unwrap(), s.neighbors(&x).unwrap());
        }
        assert!(parse_edges("0,1 => 1,1").is_err());
        assert!(parse_edges("0,a -> 1,1").is_err());
        assert_eq!(parse_edges("# comment\n\n1 -> 2\n").unwrap(), vec![(vec![1], vec![2])]);
    }

    #[test]
    fn symmetry_flags() {
        let sp = space(&[5]);
        assert!(!build_structure(StructureKind::Cycle, sp.clone()).unwrap().is_symmetric());
        assert!(build_structure(StructureKind::Complete, sp.clone()).unwrap().is_symmetric());
        assert!(build_structure(StructureKind::Grid, sp).unwrap().is_symmetric());
    }
}
