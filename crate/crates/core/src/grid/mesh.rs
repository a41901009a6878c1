//! Uniform cubic mesh over a ball (or a ball∩ball lens), with the exit
//! channels shared with the Monte Carlo exit-law histogram.

use std::collections::HashMap;

use crate::estimate::ExitLawCells;
use crate::geom::{self, BallDomain, SpherePartition};
use crate::quad::ball_volume;

use super::GridError;

/// Region covered by interior cells.
#[derive(Debug, Clone)]
pub enum MeshDomain {
    Ball(BallDomain),
    /// `outer ∩ patch`: the localized domain used for boundary-patch
    /// solves, with `patch` centered at a boundary point of `outer`.
    Lens { outer: BallDomain, patch: BallDomain },
}

impl MeshDomain {
    pub fn dim(&self) -> usize {
        match self {
            MeshDomain::Ball(b) => b.center.len(),
            MeshDomain::Lens { outer, .. } => outer.center.len(),
        }
    }

    /// Lattice anchor: cell centers sit at `anchor + h·k`, `k ∈ Z^d`.
    pub fn anchor(&self) -> &[f64] {
        match self {
            MeshDomain::Ball(b) => &b.center,
            MeshDomain::Lens { patch, .. } => &patch.center,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            MeshDomain::Ball(b) => geom::dist(x, &b.center) < b.radius,
            MeshDomain::Lens { outer, patch } => {
                geom::dist(x, &outer.center) < outer.radius
                    && geom::dist(x, &patch.center) < patch.radius
            }
        }
    }

    /// Distance from an interior point to the region boundary.
    pub fn delta(&self, x: &[f64]) -> f64 {
        match self {
            MeshDomain::Ball(b) => b.radius - geom::dist(x, &b.center),
            MeshDomain::Lens { outer, patch } => (outer.radius - geom::dist(x, &outer.center))
                .min(patch.radius - geom::dist(x, &patch.center)),
        }
    }

    /// Radius the five-cells-per-radius resolution rule applies to.
    pub fn span(&self) -> f64 {
        match self {
            MeshDomain::Ball(b) => b.radius,
            MeshDomain::Lens { patch, .. } => patch.radius,
        }
    }

    /// Distance from an interior point `x` to the boundary along the unit
    /// direction `dir`. Both region shapes are convex, so the ray crosses
    /// the boundary exactly once.
    pub fn boundary_hit(&self, x: &[f64], dir: &[f64]) -> f64 {
        fn sphere_hit(x: &[f64], dir: &[f64], center: &[f64], radius: f64) -> f64 {
            let rel: Vec<f64> = geom::sub(x, center);
            let b = rel.iter().zip(dir).map(|(r, d)| r * d).sum::<f64>();
            let c = rel.iter().map(|r| r * r).sum::<f64>() - radius * radius;
            -b + (b * b - c).max(0.0).sqrt()
        }
        match self {
            MeshDomain::Ball(b) => sphere_hit(x, dir, &b.center, b.radius),
            MeshDomain::Lens { outer, patch } => {
                sphere_hit(x, dir, &outer.center, outer.radius)
                    .min(sphere_hit(x, dir, &patch.center, patch.radius))
            }
        }
    }
}

/// Exit-channel layout of a ball mesh: the flat cell layout of
/// [`ExitLawCells`] (boundary caps for continuous exits, exterior shell
/// cells for jumps, far atom) plus midpoint quadrature nodes and exact
/// volumes for the shell cells.
#[derive(Debug, Clone)]
pub struct ExitChannels {
    pub cells: ExitLawCells,
    /// Quadrature node per shell cell, indexed by `flat − n_caps`.
    pub shell_nodes: Vec<Vec<f64>>,
    /// Exact volume per shell cell (equal-area angular split of each
    /// annulus).
    pub shell_vols: Vec<f64>,
}

impl ExitChannels {
    pub fn new(cells: ExitLawCells) -> Self {
        let d = cells.ball.center.len();
        let na = cells.angular.n_cells();
        let nc = cells.caps.n_cells();
        let mut shell_nodes = Vec::new();
        let mut shell_vols = Vec::new();
        for s in 0..cells.n_shells() {
            let vol = (ball_volume(d, cells.shell_edges[s + 1])
                - ball_volume(d, cells.shell_edges[s]))
                / na as f64;
            for a in 0..na {
                shell_nodes.push(cells.representative(nc + s * na + a));
                shell_vols.push(vol);
            }
        }
        Self {
            cells,
            shell_nodes,
            shell_vols,
        }
    }

    /// Total channel count (caps + shell cells + atom).
    pub fn n(&self) -> usize {
        self.cells.n_cells()
    }

    pub fn n_caps(&self) -> usize {
        self.cells.caps.n_cells()
    }

    pub fn atom(&self) -> usize {
        self.n() - 1
    }

    /// Continuous-exit channel for a boundary crossing in direction `dir`
    /// from the ball center.
    pub fn cap_channel(&self, dir: &[f64]) -> usize {
        self.cells.caps.cell_of(dir)
    }
}

/// Uniform mesh: interior cells are lattice cubes whose centers lie in
/// the domain. Cut cells are kept or dropped whole by that center rule;
/// the geometric error this makes at the boundary is part of the
/// discretization error budget.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: MeshDomain,
    pub h: f64,
    pub centers: Vec<Vec<f64>>,
    pub coords: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
    /// Exit channels for ball meshes; `None` for lens meshes, which lump
    /// every exit into a single absorption channel.
    pub channels: Option<ExitChannels>,
}

impl Mesh {
    /// Ball mesh with the default channel layout: 12 boundary caps,
    /// 8 geometric shells × 12 angular cells out to `3R`, one far atom.
    pub fn ball(ball: &BallDomain, h: f64) -> Result<Self, GridError> {
        let d = ball.center.len();
        let (caps, angular) = if d == 3 {
            (SpherePartition::new(3, 3, 4), SpherePartition::new(3, 3, 4))
        } else {
            (SpherePartition::new(d, 12, 1), SpherePartition::new(d, 12, 1))
        };
        let cells = ExitLawCells::new(ball.clone(), caps, 8, angular, 3.0 * ball.radius);
        Self::ball_with_cells(h, cells)
    }

    /// Ball mesh with a caller-chosen channel layout.
    pub fn ball_with_cells(h: f64, cells: ExitLawCells) -> Result<Self, GridError> {
        let mut mesh = Self::build(MeshDomain::Ball(cells.ball.clone()), h)?;
        mesh.channels = Some(ExitChannels::new(cells));
        Ok(mesh)
    }

    /// Lens mesh over `outer ∩ patch`.
    pub fn lens(outer: &BallDomain, patch: &BallDomain, h: f64) -> Result<Self, GridError> {
        Self::build(
            MeshDomain::Lens {
                outer: outer.clone(),
                patch: patch.clone(),
            },
            h,
        )
    }

    fn build(domain: MeshDomain, h: f64) -> Result<Self, GridError> {
        let span = domain.span();
        if !(h > 0.0) || span / h < 5.0 - 1e-12 {
            return Err(GridError::MeshTooCoarse { h, span });
        }
        let d = domain.dim();
        let anchor = domain.anchor().to_vec();
        let m = (span / h).ceil() as i64 + 1;
        let mut centers = Vec::new();
        let mut coords = Vec::new();
        let mut index = HashMap::new();
        let mut k = vec![-m; d];
        'cells: loop {
            let x: Vec<f64> = (0..d).map(|j| anchor[j] + h * k[j] as f64).collect();
            if domain.contains(&x) {
                index.insert(k.clone(), centers.len());
                coords.push(k.clone());
                centers.push(x);
            }
            for j in (0..d).rev() {
                k[j] += 1;
                if k[j] <= m {
                    continue 'cells;
                }
                k[j] = -m;
            }
            break;
        }
        Ok(Self {
            domain,
            h,
            centers,
            coords,
            index,
            channels: None,
        })
    }

    pub fn n(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i]
    }

    /// Distance from cell center `i` to the domain boundary.
    pub fn delta(&self, i: usize) -> f64 {
        self.domain.delta(&self.centers[i])
    }

    pub fn cell_at(&self, coord: &[i64]) -> Option<usize> {
        self.index.get(coord).copied()
    }

    /// Interior cell whose center is nearest to `x` (ties broken by the
    /// lower index). `None` only for an empty mesh.
    pub fn nearest_cell(&self, x: &[f64]) -> Option<usize> {
        let anchor = self.domain.anchor();
        let rounded: Vec<i64> = (0..x.len())
            .map(|j| ((x[j] - anchor[j]) / self.h).round() as i64)
            .collect();
        if let Some(i) = self.cell_at(&rounded) {
            return Some(i);
        }
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = geom::dist2(c, x);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> BallDomain {
        BallDomain::new(vec![0.0; 3], 0.4).unwrap()
    }

    #[test]
    fn ball_mesh_has_the_expected_cell_count_and_membership() {
        let b = ball();
        let mesh = Mesh::ball(&b, b.radius / 8.0).unwrap();
        // integer lattice points with k₁²+k₂²+k₃² < 64: 2103 of them
        assert_eq!(mesh.n(), 2103);
        for c in &mesh.centers {
            assert!(geom::dist(c, &b.center) < b.radius);
        }
        // the anchor cell is the ball center itself
        let i0 = mesh.cell_at(&[0, 0, 0]).unwrap();
        assert_eq!(mesh.center(i0), &b.center[..]);
        // coordinates round-trip through the index
        for (i, k) in mesh.coords.iter().enumerate() {
            assert_eq!(mesh.cell_at(k), Some(i));
        }
    }

    #[test]
    fn too_coarse_spacing_is_refused() {
        let b = ball();
        let err = Mesh::ball(&b, b.radius / 4.0).unwrap_err();
        assert!(matches!(err, GridError::MeshTooCoarse { .. }));
        assert!(Mesh::ball(&b, b.radius / 5.0).is_ok());
    }

    #[test]
    fn nearest_cell_maps_points_to_close_centers() {
        let b = ball();
        let mesh = Mesh::ball(&b, b.radius / 6.0).unwrap();
        let i = mesh.nearest_cell(&[0.01, -0.02, 0.015]).unwrap();
        assert_eq!(mesh.coords[i], vec![0, 0, 0]);
        // a point just inside the boundary rounds to a missing lattice
        // point and falls back to a scan; the result must still be within
        // one cell diagonal
        let p = [0.0, 0.0, 0.399];
        let j = mesh.nearest_cell(&p).unwrap();
        assert!(geom::dist(mesh.center(j), &p) <= mesh.h * 3f64.sqrt());
    }

    #[test]
    fn exit_channel_volumes_tile_the_shell() {
        let b = ball();
        let mesh = Mesh::ball(&b, b.radius / 6.0).unwrap();
        let ch = mesh.channels.as_ref().unwrap();
        let total: f64 = ch.shell_vols.iter().sum();
        let exact = ball_volume(3, 3.0 * b.radius) - ball_volume(3, b.radius);
        assert!((total - exact).abs() <= 1e-12 * exact);
        // every shell node lies strictly between R and 3R
        for node in &ch.shell_nodes {
            let r = geom::dist(node, &b.center);
            assert!(r > b.radius && r < 3.0 * b.radius);
        }
        // channel count: 12 caps + 8 shells × 12 cells + atom
        assert_eq!(ch.n(), 12 + 96 + 1);
        assert_eq!(ch.atom(), 108);
    }

    #[test]
    fn lens_mesh_keeps_cells_in_both_balls() {
        let outer = ball();
        let q = vec![0.0, 0.0, -0.4];
        let patch = BallDomain::new(q.clone(), 0.1).unwrap();
        let mesh = Mesh::lens(&outer, &patch, 0.1 / 6.0).unwrap();
        assert!(mesh.n() > 100);
        for c in &mesh.centers {
            assert!(geom::dist(c, &outer.center) < outer.radius);
            assert!(geom::dist(c, &q) < patch.radius);
        }
        assert!(mesh.channels.is_none());
    }
}
