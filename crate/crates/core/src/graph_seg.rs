//! Column-graph boundary segmentation solved as an s-t minimum cut.

use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxflow::FlowGraph;
use crate::ray_seg::BoundaryField;
use crate::raygrid::EvalGrid;
use crate::tracking::Streamline;
use crate::volume::{sample_tensor, TensorVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothnessParams {
    pub delta_ray: usize,
    pub delta_plane: usize,
}

impl Default for SmoothnessParams {
    fn default() -> Self {
        SmoothnessParams { delta_ray: 1, delta_plane: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub lambda_weight: f64,
    pub fa_avg: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_weight > 0.0 && self.lambda_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_weight must be > 0, got {}",
                self.lambda_weight
            )));
        }
        if !(self.fa_avg > 0.0 && self.fa_avg <= 1.0) {
            return Err(Error::InvalidParameter(format!("fa_avg must lie in (0, 1], got {}", self.fa_avg)));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.fa_avg / 2.0
    }

    /// `(source, sink)` capacities for a point with anisotropy `fa`.
    pub fn terminal_capacities(&self, fa: f64) -> (f64, f64) {
        let t = self.threshold();
        (self.lambda_weight * (fa - t).max(0.0), self.lambda_weight * (t - fa).max(0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub d: f64,
    pub smoothness: SmoothnessParams,
    /// capacity used for the structural arcs
    pub inf: f64,
    pub arcs: Vec<FlowArc>,
}

impl FlowNetwork {
    /// Builds the network from explicit per-node terminal capacities, indexed
    /// like the lattice (`(p·k + r)·m + j`). Zero capacities produce no arc.
    pub fn from_terminal_capacities(
        dims: (usize, usize, usize),
        d: f64,
        sp: SmoothnessParams,
        source_caps: &[f64],
        sink_caps: &[f64],
    ) -> Result<Self> {
        let (n, k, m) = dims;
        if n == 0 || m == 0 || k < 3 {
            return Err(Error::InvalidGrid(format!("graph needs n, m >= 1 and k >= 3 (n={n}, k={k}, m={m})")));
        }
        let len = n * k * m;
        if source_caps.len() != len || sink_caps.len() != len {
            return Err(Error::InvalidParameter(format!(
                "expected {len} terminal capacities, got {} / {}",
                source_caps.len(),
                sink_caps.len()
            )));
        }
        if let Some(c) = source_caps.iter().chain(sink_caps).find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter(format!("terminal capacity {c} is not a finite non-negative value")));
        }
        let inf = 1.0 + source_caps.iter().sum::<f64>() + sink_caps.iter().sum::<f64>();
        let (s, t) = (len, len + 1);
        let index = |p: usize, r: usize, j: usize| (p * k + r) * m + j;
        let columns: Vec<Vec<FlowArc>> = (0..n * k)
            .into_par_iter()
            .map(|col| {
                let (p, r) = (col / k, col % k);
                let mut arcs = Vec::with_capacity(m * 6);
                for j in 0..m {
                    let here = index(p, r, j);
                    let mut structural = |to: usize| arcs.push(FlowArc { from: here, to, capacity: inf });
                    if j >= 1 {
                        structural(index(p, r, j - 1));
                    }
                    let jr = j.saturating_sub(sp.delta_ray);
                    structural(index(p, (r + 1) % k, jr));
                    structural(index(p, (r + k - 1) % k, jr));
                    let jp = j.saturating_sub(sp.delta_plane);
                    if p >= 1 {
                        structural(index(p - 1, r, jp));
                    }
                    if p + 1 < n {
                        structural(index(p + 1, r, jp));
                    }
                    if source_caps[here] > 0.0 {
                        arcs.push(FlowArc { from: s, to: here, capacity: source_caps[here] });
                    }
                    if sink_caps[here] > 0.0 {
                        arcs.push(FlowArc { from: here, to: t, capacity: sink_caps[here] });
                    }
                }
                arcs
            })
            .collect();
        Ok(FlowNetwork {
            n,
            k,
            m,
            d,
            smoothness: sp,
            inf,
            arcs: columns.into_iter().flatten().collect(),
        })
    }

    pub fn lattice_len(&self) -> usize {
        self.n * self.k * self.m
    }

    pub fn node_count(&self) -> usize {
        self.lattice_len() + 2
    }

    pub fn source(&self) -> usize {
        self.lattice_len()
    }

    pub fn sink(&self) -> usize {
        self.lattice_len() + 1
    }

    pub fn is_terminal_arc(&self, a: &FlowArc) -> bool {
        a.from == self.source() || a.to == self.sink()
    }

    pub fn structural_arc_count(&self) -> usize {
        self.arcs.iter().filter(|a| !self.is_terminal_arc(a)).count()
    }

    /// Writes the network in DIMACS max-flow format (1-based node ids).
    pub fn write_dimacs(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "c column graph {}x{}x{}", self.n, self.k, self.m).map_err(io)?;
        writeln!(w, "p max {} {}", self.node_count(), self.arcs.len()).map_err(io)?;
        writeln!(w, "n {} s", self.source() + 1).map_err(io)?;
        writeln!(w, "n {} t", self.sink() + 1).map_err(io)?;
        for a in &self.arcs {
            writeln!(w, "a {} {} {}", a.from + 1, a.to + 1, a.capacity).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Mean FA over every vertex of every fiber.
pub fn bundle_mean_fa(fibers: &[Streamline], vol: &TensorVolume) -> Result<f64> {
    let count: usize = fibers.iter().map(Streamline::len).sum();
    if count == 0 {
        return Err(Error::EmptyBundle("no fiber vertices to average FA over".into()));
    }
    let per_fiber: Vec<f64> = fibers
        .par_iter()
        .map(|f| f.points.iter().map(|p| sample_tensor(vol, *p)?.fa()).sum::<Result<f64>>())
        .collect::<Result<_>>()?;
    Ok(per_fiber.iter().sum::<f64>() / count as f64)
}

pub fn build_graph(grid: &EvalGrid, sp: SmoothnessParams, cp: &CostParams) -> Result<FlowNetwork> {
    cp.validate()?;
    let gp = grid.params;
    let (source, sink): (Vec<f64>, Vec<f64>) = grid.points.iter().map(|q| cp.terminal_capacities(q.fa)).unzip();
    FlowNetwork::from_terminal_capacities((gp.n, gp.k, gp.m), gp.d, sp, &source, &sink)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinCut {
    /// membership per node, including `s` and `t`
    pub source_set: Vec<bool>,
    pub flow_value: f64,
}

pub fn min_cut(g: &FlowNetwork) -> MinCut {
    let mut flow = FlowGraph::with_capacity(g.node_count(), g.arcs.len());
    flow.set_epsilon(1e-14 * g.inf);
    for a in &g.arcs {
        flow.add_edge(a.from, a.to, a.capacity);
    }
    let flow_value = flow.max_flow(g.source(), g.sink());
    MinCut { source_set: flow.reachable_from(g.source()), flow_value }
}

/// Total capacity of arcs leaving `source_set`.
pub fn cut_capacity(g: &FlowNetwork, source_set: &[bool]) -> f64 {
    g.arcs
        .iter()
        .filter(|a| source_set[a.from] && !source_set[a.to])
        .map(|a| a.capacity)
        .sum()
}

/// Number of structural (infinite) arcs leaving `source_set`.
pub fn cut_structural_arcs(g: &FlowNetwork, source_set: &[bool]) -> usize {
    g.arcs
        .iter()
        .filter(|a| !g.is_terminal_arc(a) && source_set[a.from] && !source_set[a.to])
        .count()
}

/// Converts a source set into per-column boundary radii.
pub fn extract_boundary(g: &FlowNetwork, source_set: &[bool]) -> Result<BoundaryField> {
    if source_set.len() != g.node_count() {
        return Err(Error::InternalConsistency(format!(
            "source set has {} entries for {} nodes",
            source_set.len(),
            g.node_count()
        )));
    }
    if !source_set[g.source()] || source_set[g.sink()] {
        return Err(Error::InternalConsistency("source set must hold s and exclude t".into()));
    }
    let mut radii = Vec::with_capacity(g.n * g.k);
    for col in 0..g.n * g.k {
        let column = &source_set[col * g.m..(col + 1) * g.m];
        let len = column.iter().take_while(|x| **x).count();
        if column[len..].iter().any(|x| *x) {
            return Err(Error::InternalConsistency(format!(
                "column {col} (plane {}, ray {}) is not a prefix",
                col / g.k,
                col % g.k
            )));
        }
        radii.push(len as f64 * g.d);
    }
    BoundaryField::new(g.n, g.k, g.m, g.d, radii, "graph")
}

/// Build, solve and extract in one call. Also returns the flow value.
pub fn segment_graph(grid: &EvalGrid, sp: SmoothnessParams, cp: &CostParams) -> Result<(BoundaryField, f64)> {
    let g = build_graph(grid, sp, cp)?;
    let cut = min_cut(&g);
    Ok((extract_boundary(&g, &cut.source_set)?, cut.flow_value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn network(dims: (usize, usize, usize), sp: SmoothnessParams, s: &[f64], t: &[f64]) -> FlowNetwork {
        FlowNetwork::from_terminal_capacities(dims, 0.5, sp, s, t).unwrap()
    }

    #[test]
    fn small_graph_counts() {
        let sp = SmoothnessParams { delta_ray: 0, delta_plane: 0 };
        let g = network((1, 3, 2), sp, &[0.0; 6], &[0.0; 6]);
        assert_eq!(g.node_count(), 8);
        assert_eq!(g.structural_arc_count(), 3 + 12);
        assert_eq!(g.inf, 1.0);
    }

    #[test]
    fn terminal_capacity_examples() {
        let cp = CostParams { lambda_weight: 2.0, fa_avg: 0.6 };
        assert_eq!(cp.terminal_capacities(0.6), (2.0 * 0.3, 0.0));
        assert_eq!(cp.terminal_capacities(0.0), (0.0, 2.0 * 0.3));
        assert_eq!(cp.terminal_capacities(0.3), (0.0, 0.0));
    }

    #[test]
    fn single_column_prefix() {
        let sp = SmoothnessParams::default();
        // three identical columns so ray coupling is neutral
        let s: Vec<f64> = (0..3).flat_map(|_| [5.0, 5.0, 0.0]).collect();
        let t: Vec<f64> = (0..3).flat_map(|_| [0.0, 0.0, 5.0]).collect();
        let g = network((1, 3, 3), sp, &s, &t);
        let cut = min_cut(&g);
        assert_eq!(cut.flow_value, 0.0);
        let b = extract_boundary(&g, &cut.source_set).unwrap();
        assert_eq!(b.radii, vec![1.0; 3]);
    }

    #[test]
    fn all_source_or_all_sink() {
        let sp = SmoothnessParams::default();
        let g = network((2, 4, 3), sp, &[1.0; 24], &[0.0; 24]);
        let cut = min_cut(&g);
        assert_eq!(cut.flow_value, 0.0);
        assert_eq!(extract_boundary(&g, &cut.source_set).unwrap().radii, vec![1.5; 8]);
        let g = network((2, 4, 3), sp, &[0.0; 24], &[1.0; 24]);
        let cut = min_cut(&g);
        assert_eq!(cut.source_set.iter().filter(|x| **x).count(), 1);
        assert_eq!(extract_boundary(&g, &cut.source_set).unwrap().radii, vec![0.0; 8]);
    }

    #[test]
    fn non_prefix_is_internal_error() {
        let sp = SmoothnessParams::default();
        let g = network((1, 3, 2), sp, &[0.0; 6], &[0.0; 6]);
        let mut set = vec![false; 8];
        set[6] = true;
        set[1] = true;
        assert!(matches!(extract_boundary(&g, &set), Err(Error::InternalConsistency(_))));
    }

    #[test]
    fn smoothness_limits_neighbour_jump() {
        let (n, k, m) = (1, 4, 6);
        let mut s = vec![0.0; n * k * m];
        let mut t = vec![0.0; n * k * m];
        for r in 0..k {
            let want = if r == 0 { 6 } else { 1 };
            for j in 0..m {
                let i = r * m + j;
                if j < want {
                    s[i] = 1.0;
                } else {
                    t[i] = 1.0;
                }
            }
        }
        let sp = SmoothnessParams { delta_ray: 1, delta_plane: 1 };
        let g = network((n, k, m), sp, &s, &t);
        let cut = min_cut(&g);
        assert_eq!(cut_structural_arcs(&g, &cut.source_set), 0);
        assert!((cut.flow_value - cut_capacity(&g, &cut.source_set)).abs() < 1e-12);
        let b = extract_boundary(&g, &cut.source_set).unwrap();
        for r in 0..k {
            let a = b.radius(0, r) / 0.5;
            let c = b.radius(0, (r + 1) % k) / 0.5;
            assert!((a - c).abs() <= 1.0);
        }
    }

    #[test]
    fn dimacs_dump() {
        let sp = SmoothnessParams::default();
        let g = network((1, 3, 2), sp, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[0.0, 2.0, 0.0, 2.0, 0.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.dimacs");
        g.write_dimacs(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(&format!("p max 8 {}", g.arcs.len())));
        assert!(text.contains("n 7 s") && text.contains("n 8 t"));
        assert_eq!(text.lines().filter(|l| l.starts_with("a ")).count(), g.arcs.len());
    }

    #[test]
    fn bad_inputs() {
        let sp = SmoothnessParams::default();
        assert!(FlowNetwork::from_terminal_capacities((1, 2, 2), 0.5, sp, &[0.0; 4], &[0.0; 4]).is_err());
        assert!(FlowNetwork::from_terminal_capacities((1, 3, 2), 0.5, sp, &[0.0; 5], &[0.0; 6]).is_err());
        assert!(FlowNetwork::from_terminal_capacities((1, 3, 1), 0.5, sp, &[-1.0, 0.0, 0.0], &[0.0; 3]).is_err());
        assert!(CostParams { lambda_weight: 0.0, fa_avg: 0.5 }.validate().is_err());
        assert!(CostParams { lambda_weight: 1.0, fa_avg: 0.0 }.validate().is_err());
    }

    #[test]
    fn empty_bundle_rejected() {
        let grid = crate::volume::VoxelGrid::new([2, 2, 2], [1.0; 3], crate::Vec3::ZERO).unwrap();
        let vol = TensorVolume::from_fn(grid, |_, _, _| crate::tensor::DiffusionTensor::isotropic(1e-3)).unwrap();
        assert!(matches!(bundle_mean_fa(&[], &vol), Err(Error::EmptyBundle(_))));
        let fibers = [Streamline::new(vec![crate::Vec3::new(0.5, 0.5, 0.5)])];
        assert_eq!(bundle_mean_fa(&fibers, &vol).unwrap(), 0.0);
    }
}
