//! Structured axis-aligned grids in one and two dimensions.
//!
//! Cells are indexed `i + nx * j`. Faces are stored in a canonical order:
//! interior x-faces (row by row), interior y-faces, then boundary faces in
//! the order left, right, bottom, top. Within an edge, boundary faces are
//! ordered by increasing coordinate along the edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tag carried by every boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
}

/// Edge of the domain a boundary face belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    /// Axis the edge is normal to.
    pub fn normal_axis(self) -> usize {
        match self {
            Side::Left | Side::Right => 0,
            Side::Bottom | Side::Top => 1,
        }
    }
}

/// A tagged portion of one domain edge. `range` is a coordinate interval
/// along the edge; `None` means the whole edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub side: Side,
    pub tag: BoundaryTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

impl BoundarySegment {
    pub fn whole(side: Side, tag: BoundaryTag) -> Self {
        Self { side, tag, range: None }
    }

    pub fn partial(side: Side, tag: BoundaryTag, lo: f64, hi: f64) -> Self {
        Self { side, tag, range: Some([lo, hi]) }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("expected {expected} entries for {what}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("at least 2 cells per axis are required, axis {axis} has {cells}")]
    TooFewCells { axis: usize, cells: usize },
    #[error("domain extent along axis {axis} must be positive, got {extent}")]
    NonPositiveExtent { axis: usize, extent: f64 },
    #[error("boundary side {0:?} does not exist in a 1-D grid")]
    SideNotInDimension(Side),
    #[error("boundary segment on {side:?} [{lo}, {hi}] does not align with cell faces")]
    PartialFace { side: Side, lo: f64, hi: f64 },
    #[error("inflow and outflow segments overlap on {side:?} at face {face}")]
    OverlappingBoundarySpec { side: Side, face: usize },
    #[error("the outflow boundary is empty")]
    EmptyOutflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceKind {
    Interior { lower: usize, upper: usize },
    Boundary { cell: usize, side: Side, tag: BoundaryTag },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub kind: FaceKind,
    /// Axis the face is normal to.
    pub axis: usize,
    /// Face measure (length in 2-D, 1 in 1-D).
    pub area: f64,
    /// Distance between the two cell centers (interior faces) or from the
    /// cell center to the face (boundary faces).
    pub distance: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, FaceKind::Boundary { .. })
    }

    pub fn tag(&self) -> Option<BoundaryTag> {
        match self.kind {
            FaceKind::Boundary { tag, .. } => Some(tag),
            FaceKind::Interior { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells_per_axis: Vec<usize>,
    extent: Vec<f64>,
    spacing: Vec<f64>,
    cell_volume: f64,
    faces: Vec<Face>,
    n_interior: usize,
    /// For each cell, the ids of the faces touching it.
    cell_faces: Vec<Vec<usize>>,
}

impl Grid {
    /// Builds a grid. Boundary faces not covered by any segment are walls.
    /// Segments with the same tag may overlap; an inflow segment overlapping
    /// an outflow segment is rejected.
    pub fn build(dim: usize, cells_per_axis: &[usize], extent: &[f64], boundary: &[BoundarySegment]) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::BadDimension(dim));
        }
        if cells_per_axis.len() != dim {
            return Err(GridError::ShapeMismatch { what: "cells_per_axis", expected: dim, got: cells_per_axis.len() });
        }
        if extent.len() != dim {
            return Err(GridError::ShapeMismatch { what: "domain_extent", expected: dim, got: extent.len() });
        }
        for (axis, &n) in cells_per_axis.iter().enumerate() {
            if n < 2 {
                return Err(GridError::TooFewCells { axis, cells: n });
            }
        }
        for (axis, &l) in extent.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(GridError::NonPositiveExtent { axis, extent: l });
            }
        }

        let spacing: Vec<f64> = extent.iter().zip(cells_per_axis).map(|(&l, &n)| l / n as f64).collect();
        let nx = cells_per_axis[0];
        let ny = if dim == 2 { cells_per_axis[1] } else { 1 };
        let dx = spacing[0];
        let dy = if dim == 2 { spacing[1] } else { 1.0 };
        let cell_volume = dx * dy;

        let mut faces = Vec::new();
        for j in 0..ny {
            for i in 0..nx - 1 {
                let c = i + nx * j;
                faces.push(Face { kind: FaceKind::Interior { lower: c, upper: c + 1 }, axis: 0, area: dy, distance: dx });
            }
        }
        if dim == 2 {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let c = i + nx * j;
                    faces.push(Face { kind: FaceKind::Interior { lower: c, upper: c + nx }, axis: 1, area: dx, distance: dy });
                }
            }
        }
        let n_interior = faces.len();

        let sides: &[Side] =
            if dim == 1 { &[Side::Left, Side::Right] } else { &[Side::Left, Side::Right, Side::Bottom, Side::Top] };
        for seg in boundary {
            if !sides.contains(&seg.side) {
                return Err(GridError::SideNotInDimension(seg.side));
            }
        }
        for &side in sides {
            // faces along this edge, indexed by position along the edge
            let (count, along_spacing) = match side {
                Side::Left | Side::Right => (ny, dy),
                Side::Bottom | Side::Top => (nx, dx),
            };
            let mut inflow = vec![false; count];
            let mut outflow = vec![false; count];
            for seg in boundary.iter().filter(|s| s.side == side) {
                let (lo, hi) = match seg.range {
                    None => (0, count),
                    Some([a, b]) => {
                        if dim == 1 {
                            // a 1-D edge is a single point; only the whole edge can be tagged
                            return Err(GridError::PartialFace { side, lo: a, hi: b });
                        }
                        face_index_range(a, b, along_spacing, count).ok_or(GridError::PartialFace { side, lo: a, hi: b })?
                    }
                };
                for k in lo..hi {
                    match seg.tag {
                        BoundaryTag::Inflow => inflow[k] = true,
                        BoundaryTag::Outflow => outflow[k] = true,
                        BoundaryTag::Wall => {}
                    }
                }
            }
            for k in 0..count {
                if inflow[k] && outflow[k] {
                    return Err(GridError::OverlappingBoundarySpec { side, face: k });
                }
                let tag = if inflow[k] {
                    BoundaryTag::Inflow
                } else if outflow[k] {
                    BoundaryTag::Outflow
                } else {
                    BoundaryTag::Wall
                };
                let cell = match side {
                    Side::Left => nx * k,
                    Side::Right => (nx - 1) + nx * k,
                    Side::Bottom => k,
                    Side::Top => k + nx * (ny - 1),
                };
                let (area, distance) = match side {
                    Side::Left | Side::Right => (dy, dx / 2.0),
                    Side::Bottom | Side::Top => (dx, dy / 2.0),
                };
                faces.push(Face { kind: FaceKind::Boundary { cell, side, tag }, axis: side.normal_axis(), area, distance });
            }
        }

        let mut cell_faces = vec![Vec::with_capacity(2 * dim); nx * ny];
        for (id, face) in faces.iter().enumerate() {
            match face.kind {
                FaceKind::Interior { lower, upper } => {
                    cell_faces[lower].push(id);
                    cell_faces[upper].push(id);
                }
                FaceKind::Boundary { cell, .. } => cell_faces[cell].push(id),
            }
        }

        Ok(Self {
            dim,
            cells_per_axis: cells_per_axis.to_vec(),
            extent: extent.to_vec(),
            spacing,
            cell_volume,
            faces,
            n_interior,
            cell_faces,
        })
    }

    /// One-dimensional interval `[0, length]` with the given end tags.
    pub fn interval(cells: usize, length: f64, left: BoundaryTag, right: BoundaryTag) -> Result<Self, GridError> {
        Self::build(
            1,
            &[cells],
            &[length],
            &[BoundarySegment::whole(Side::Left, left), BoundarySegment::whole(Side::Right, right)],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn num_cells(&self) -> usize {
        self.cell_faces.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Measure of the whole domain, `|D|`.
    pub fn domain_measure(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn interior_faces(&self) -> &[Face] {
        &self.faces[..self.n_interior]
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = (usize, &Face)> {
        self.faces.iter().enumerate().skip(self.n_interior)
    }

    pub fn cell_faces(&self, cell: usize) -> &[usize] {
        &self.cell_faces[cell]
    }

    /// Boundary faces carrying `tag`, as `(face id, face)`.
    pub fn faces_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = (usize, &Face)> {
        self.boundary_faces().filter(move |(_, f)| f.tag() == Some(tag))
    }

    /// Surface measure of the faces carrying `tag`.
    pub fn boundary_measure(&self, tag: BoundaryTag) -> f64 {
        self.faces_with_tag(tag).map(|(_, f)| f.area).sum()
    }

    /// Fails with [`GridError::EmptyOutflow`] if no face is tagged outflow.
    pub fn require_outflow(&self) -> Result<(), GridError> {
        if self.faces_with_tag(BoundaryTag::Outflow).next().is_none() {
            Err(GridError::EmptyOutflow)
        } else {
            Ok(())
        }
    }

    /// Cell across `face` from `cell`, or `None` at the boundary or if the
    /// face does not touch the cell.
    pub fn neighbor_across(&self, cell: usize, face: usize) -> Option<usize> {
        match self.faces.get(face)?.kind {
            FaceKind::Interior { lower, upper } if lower == cell => Some(upper),
            FaceKind::Interior { lower, upper } if upper == cell => Some(lower),
            _ => None,
        }
    }

    /// `(i, j)` index of a cell; `j = 0` in 1-D.
    pub fn cell_index(&self, cell: usize) -> (usize, usize) {
        let nx = self.cells_per_axis[0];
        (cell % nx, cell / nx)
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.cell_index(cell);
        let x = (i as f64 + 0.5) * self.spacing[0];
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.spacing[1] } else { 0.0 };
        [x, y]
    }

    /// Midpoint of a face.
    pub fn face_center(&self, face: &Face) -> [f64; 2] {
        match face.kind {
            FaceKind::Interior { lower, upper } => {
                let (a, b) = (self.cell_center(lower), self.cell_center(upper));
                [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
            }
            FaceKind::Boundary { cell, side, .. } => {
                let mut c = self.cell_center(cell);
                let half = 0.5 * self.spacing[face.axis];
                match side {
                    Side::Left | Side::Bottom => c[face.axis] -= half,
                    Side::Right | Side::Top => c[face.axis] += half,
                }
                c
            }
        }
    }

    /// True for cells that touch no boundary face.
    pub fn is_interior_cell(&self, cell: usize) -> bool {
        self.cell_faces[cell].iter().all(|&f| !self.faces[f].is_boundary())
    }
}

/// Maps a coordinate interval along an edge onto whole face indices.
fn face_index_range(lo: f64, hi: f64, h: f64, count: usize) -> Option<(usize, usize)> {
    if !(hi > lo) {
        return None;
    }
    let snap = |v: f64| -> Option<usize> {
        let k = (v / h).round();
        if (v - k * h).abs() > 1e-9 * h.max(1.0) || k < 0.0 || k > count as f64 {
            None
        } else {
            Some(k as usize)
        }
    };
    Some((snap(lo)?, snap(hi)?))
}

/// Uniform time grid with stage boundaries on step boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    num_steps: usize,
    /// Step index at which each stage starts, plus `num_steps` at the end.
    stage_steps: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeGridError {
    #[error("final time must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("at least one time step is required")]
    NoSteps,
    #[error("stage boundaries must increase from 0 to T")]
    NotIncreasing,
    #[error("stage boundary {0} does not fall on a time step")]
    OffGrid(f64),
    #[error("{steps} steps cannot be split into {stages} equal stages")]
    UnevenStages { steps: usize, stages: usize },
}

impl TimeGrid {
    /// A single-stage time grid.
    pub fn new(t_final: f64, num_steps: usize) -> Result<Self, TimeGridError> {
        Self::with_stage_steps(t_final, num_steps, vec![0, num_steps])
    }

    /// `stages` stages of equal length.
    pub fn with_equal_stages(t_final: f64, num_steps: usize, stages: usize) -> Result<Self, TimeGridError> {
        if stages == 0 || !num_steps.is_multiple_of(stages) {
            return Err(TimeGridError::UnevenStages { steps: num_steps, stages });
        }
        let per = num_steps / stages;
        Self::with_stage_steps(t_final, num_steps, (0..=stages).map(|s| s * per).collect())
    }

    /// Stage boundaries given as times `0 = t0 < t1 < ... < tn = T`.
    pub fn with_stage_times(t_final: f64, num_steps: usize, times: &[f64]) -> Result<Self, TimeGridError> {
        if !(t_final > 0.0) {
            return Err(TimeGridError::NonPositiveHorizon(t_final));
        }
        if num_steps == 0 {
            return Err(TimeGridError::NoSteps);
        }
        let dt = t_final / num_steps as f64;
        let mut steps = Vec::with_capacity(times.len());
        for &t in times {
            let k = (t / dt).round();
            if (t - k * dt).abs() > 1e-9 * t_final || k < 0.0 {
                return Err(TimeGridError::OffGrid(t));
            }
            steps.push(k as usize);
        }
        Self::with_stage_steps(t_final, num_steps, steps)
    }

    pub fn with_stage_steps(t_final: f64, num_steps: usize, stage_steps: Vec<usize>) -> Result<Self, TimeGridError> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(TimeGridError::NonPositiveHorizon(t_final));
        }
        if num_steps == 0 {
            return Err(TimeGridError::NoSteps);
        }
        if stage_steps.len() < 2
            || stage_steps[0] != 0
            || *stage_steps.last().unwrap() != num_steps
            || stage_steps.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(TimeGridError::NotIncreasing);
        }
        Ok(Self { t_final, num_steps, stage_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn step_size(&self) -> f64 {
        self.t_final / self.num_steps as f64
    }

    /// Time of level `k`, `0 <= k <= num_steps`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.num_steps {
            self.t_final
        } else {
            self.t_final * k as f64 / self.num_steps as f64
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_steps.len() - 1
    }

    pub fn stage_steps(&self) -> &[usize] {
        &self.stage_steps
    }

    pub fn stage_times(&self) -> Vec<f64> {
        self.stage_steps.iter().map(|&k| self.time(k)).collect()
    }

    /// Stage containing the step interval `[t_k, t_{k+1}]`.
    pub fn stage_of_step(&self, k: usize) -> usize {
        match self.stage_steps[1..].iter().position(|&s| k < s) {
            Some(s) => s,
            None => self.num_stages() - 1,
        }
    }

    /// Time level index for `t`, if `t` lies on the grid.
    pub fn level_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step_size()).round();
        if k < 0.0 || k > self.num_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= 1e-9 * self.t_final).then_some(k)
    }

    /// Trapezoid quadrature weight of level `k`.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        let dt = self.step_size();
        if k == 0 || k == self.num_steps {
            0.5 * dt
        } else {
            dt
        }
    }

    /// Same horizon with a different final time and proportionally scaled
    /// stage structure.
    pub fn rescaled(&self, t_final: f64) -> Result<Self, TimeGridError> {
        Self::with_stage_steps(t_final, self.num_steps, self.stage_steps.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_four_cells() {
        let g = Grid::interval(4, 1.0, BoundaryTag::Inflow, BoundaryTag::Outflow).unwrap();
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.cell_volume(), 0.25);
        assert_eq!(g.boundary_faces().count(), 2);
        assert_eq!(g.faces_with_tag(BoundaryTag::Inflow).count(), 1);
        assert_eq!(g.faces_with_tag(BoundaryTag::Outflow).count(), 1);
    }

    #[test]
    fn square_all_walls() {
        let g = Grid::build(2, &[3, 3], &[1.0, 1.0], &[]).unwrap();
        let tags: Vec<_> = g.boundary_faces().map(|(_, f)| f.tag().unwrap()).collect();
        assert_eq!(tags.len(), 12);
        assert!(tags.iter().all(|&t| t == BoundaryTag::Wall));
    }

    #[test]
    fn rectangle_cell_volume() {
        let g = Grid::build(
            2,
            &[8, 4],
            &[2.0, 1.0],
            &[BoundarySegment::whole(Side::Left, BoundaryTag::Inflow), BoundarySegment::whole(Side::Right, BoundaryTag::Outflow)],
        )
        .unwrap();
        assert_eq!(g.cell_volume(), 2.0 * 1.0 / 32.0);
        let total: f64 = (0..g.num_cells()).map(|_| g.cell_volume()).sum();
        assert!((total - 2.0).abs() <= 1e-12 * 2.0);
        assert_eq!(g.boundary_measure(BoundaryTag::Inflow), 1.0);
    }

    #[test]
    fn overlapping_inflow_outflow_rejected() {
        let err = Grid::build(
            2,
            &[4, 4],
            &[1.0, 1.0],
            &[
                BoundarySegment::partial(Side::Left, BoundaryTag::Inflow, 0.0, 0.5),
                BoundarySegment::partial(Side::Left, BoundaryTag::Outflow, 0.25, 1.0),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, GridError::OverlappingBoundarySpec { side: Side::Left, .. }));
    }

    #[test]
    fn partial_face_rejected() {
        let err = Grid::build(2, &[4, 4], &[1.0, 1.0], &[BoundarySegment::partial(Side::Top, BoundaryTag::Inflow, 0.1, 0.5)])
            .unwrap_err();
        assert!(matches!(err, GridError::PartialFace { .. }));
    }

    #[test]
    fn sub_interval_tags_only_covered_faces() {
        let g = Grid::build(
            2,
            &[4, 4],
            &[1.0, 1.0],
            &[
                BoundarySegment::partial(Side::Left, BoundaryTag::Inflow, 0.25, 0.75),
                BoundarySegment::whole(Side::Right, BoundaryTag::Outflow),
            ],
        )
        .unwrap();
        assert_eq!(g.faces_with_tag(BoundaryTag::Inflow).count(), 2);
        assert!((g.boundary_measure(BoundaryTag::Inflow) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_outflow_flagged_on_request() {
        let g = Grid::build(2, &[3, 3], &[1.0, 1.0], &[]).unwrap();
        assert_eq!(g.require_outflow(), Err(GridError::EmptyOutflow));
    }

    #[test]
    fn neighbor_is_involutive() {
        let g = Grid::build(2, &[5, 3], &[1.0, 0.6], &[]).unwrap();
        for cell in 0..g.num_cells() {
            for &face in g.cell_faces(cell) {
                if let Some(n) = g.neighbor_across(cell, face) {
                    assert_eq!(g.neighbor_across(n, face), Some(cell));
                }
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let segments = [BoundarySegment::partial(Side::Bottom, BoundaryTag::Inflow, 0.0, 0.5)];
        let a = Grid::build(2, &[6, 4], &[1.5, 1.0], &segments).unwrap();
        let b = Grid::build(2, &[6, 4], &[1.5, 1.0], &segments).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn time_grid_stages() {
        let tg = TimeGrid::with_equal_stages(1.5, 30, 3).unwrap();
        assert_eq!(tg.stage_steps(), &[0, 10, 20, 30]);
        assert_eq!(tg.stage_of_step(0), 0);
        assert_eq!(tg.stage_of_step(9), 0);
        assert_eq!(tg.stage_of_step(10), 1);
        assert_eq!(tg.stage_of_step(29), 2);
        assert!((tg.step_size() * 30.0 - 1.5).abs() <= 1e-12 * 1.5);
        assert_eq!(tg.level_of(0.5), Some(10));
        assert_eq!(tg.level_of(0.51), None);
        assert!(TimeGrid::with_stage_times(1.0, 10, &[0.0, 0.33, 1.0]).is_err());
    }
}
