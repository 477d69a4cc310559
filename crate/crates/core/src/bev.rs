//! Bird's-eye-view grids: occupancy, semantics, and the three-level value map
//! the refinement planner searches over.
//!
//! Cells are addressed by `(row, col)`; rows grow with world `y`, columns with
//! world `x`. Cell `(r, c)` covers
//! `[ox + c·res, ox + (c+1)·res) × [oy + r·res, oy + (r+1)·res)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ObjectGeometry;
use crate::scene::SceneBundle;

/// Upper bound on `rows · cols`.
pub const MAX_CELLS: usize = 4_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("no object in the scene has LiDAR support")]
    EmptyScene,
    #[error("grids do not share one grid spec")]
    SpecMismatch,
    #[error("grid of {rows}x{cols} cells exceeds the {MAX_CELLS}-cell limit")]
    GridTooLarge { rows: usize, cols: usize },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(
        origin: [f64; 2],
        resolution: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self, MapError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(MapError::InvalidSpec(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(MapError::InvalidSpec(
                "grid must have at least one cell".into(),
            ));
        }
        if rows.saturating_mul(cols) > MAX_CELLS {
            return Err(MapError::GridTooLarge { rows, cols });
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(MapError::InvalidSpec("origin is not finite".into()));
        }
        Ok(Self {
            origin,
            resolution,
            rows,
            cols,
        })
    }

    /// Smallest grid aligned to `resolution` that covers every point plus
    /// `margin` meters on each side.
    pub fn covering<I>(points: I, resolution: f64, margin: f64) -> Result<Self, MapError>
    where
        I: IntoIterator<Item = [f64; 2]>,
    {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Err(MapError::EmptyScene);
        }
        let origin = [
            ((lo[0] - margin) / resolution).floor() * resolution,
            ((lo[1] - margin) / resolution).floor() * resolution,
        ];
        let cols = ((hi[0] + margin - origin[0]) / resolution).ceil() as usize + 1;
        let rows = ((hi[1] + margin - origin[1]) / resolution).ceil() as usize + 1;
        Self::new(origin, resolution, rows, cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<Cell> {
        let c = ((p[0] - self.origin[0]) / self.resolution).floor();
        let r = ((p[1] - self.origin[1]) / self.resolution).floor();
        if c < 0.0 || r < 0.0 || !c.is_finite() || !r.is_finite() {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.rows && c < self.cols).then_some(Cell::new(r, c))
    }

    pub fn center(&self, cell: Cell) -> [f64; 2] {
        [
            self.origin[0] + (cell.col as f64 + 0.5) * self.resolution,
            self.origin[1] + (cell.row as f64 + 0.5) * self.resolution,
        ]
    }

    /// Lower-left and upper-right corners of a cell.
    pub fn bounds(&self, cell: Cell) -> ([f64; 2], [f64; 2]) {
        let lo = [
            self.origin[0] + cell.col as f64 * self.resolution,
            self.origin[1] + cell.row as f64 * self.resolution,
        ];
        (lo, [lo[0] + self.resolution, lo[1] + self.resolution])
    }

    /// Inclusive cell range overlapping an axis-aligned world box, clamped to
    /// the grid. `None` when the box misses the grid.
    pub fn cells_in_box(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<(Cell, Cell)> {
        let c0 = ((lo[0] - self.origin[0]) / self.resolution).floor();
        let r0 = ((lo[1] - self.origin[1]) / self.resolution).floor();
        let c1 = ((hi[0] - self.origin[0]) / self.resolution).floor();
        let r1 = ((hi[1] - self.origin[1]) / self.resolution).floor();
        if c1 < 0.0 || r1 < 0.0 || c0 >= self.cols as f64 || r0 >= self.rows as f64 {
            return None;
        }
        let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64) as usize;
        Some((
            Cell::new(clamp(r0, self.rows), clamp(c0, self.cols)),
            Cell::new(clamp(r1, self.rows), clamp(c1, self.cols)),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupancy {
    Free,
    Occupied,
    Unknown,
}

impl Occupancy {
    /// File encoding: 0 free, 1 occupied, -1 unknown.
    pub fn code(self) -> i8 {
        match self {
            Occupancy::Free => 0,
            Occupancy::Occupied => 1,
            Occupancy::Unknown => -1,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            0 => Some(Occupancy::Free),
            1 => Some(Occupancy::Occupied),
            -1 => Some(Occupancy::Unknown),
            _ => None,
        }
    }
}

mod occupancy_codes {
    use super::Occupancy;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cells: &[Occupancy], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(cells.iter().map(|c| c.code()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Occupancy>, D::Error> {
        Vec::<i8>::deserialize(d)?
            .into_iter()
            .map(|c| {
                Occupancy::from_code(c)
                    .ok_or_else(|| D::Error::custom(format!("bad occupancy code {c}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    #[serde(with = "occupancy_codes")]
    pub cells: Vec<Occupancy>,
}

impl OccupancyGrid {
    pub fn filled(spec: GridSpec, state: Occupancy) -> Self {
        Self {
            spec,
            cells: vec![state; spec.len()],
        }
    }

    pub fn get(&self, cell: Cell) -> Occupancy {
        self.cells[self.spec.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, state: Occupancy) {
        let i = self.spec.index(cell);
        self.cells[i] = state;
    }

    pub fn count(&self, state: Occupancy) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticGrid {
    pub spec: GridSpec,
    pub cells: Vec<Option<u32>>,
}

impl SemanticGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            cells: vec![None; spec.len()],
        }
    }

    pub fn get(&self, cell: Cell) -> Option<u32> {
        self.cells[self.spec.index(cell)]
    }

    pub fn cells_with(&self, id: u32) -> Vec<Cell> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == Some(id))
            .map(|(i, _)| self.spec.cell_at(i))
            .collect()
    }
}

/// Per-meter traversal costs of the three value-map levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostLevels {
    pub corridor: f64,
    pub drivable: f64,
    /// Treated as untraversable by the planner.
    pub blocked: f64,
}

impl Default for CostLevels {
    fn default() -> Self {
        Self {
            corridor: 1.0,
            drivable: 10.0,
            blocked: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMap {
    pub spec: GridSpec,
    pub levels: CostLevels,
    pub cost: Vec<f64>,
}

impl ValueMap {
    pub fn uniform(spec: GridSpec, levels: CostLevels, cost: f64) -> Self {
        Self {
            spec,
            levels,
            cost: vec![cost; spec.len()],
        }
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.cost[self.spec.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, cost: f64) {
        let i = self.spec.index(cell);
        self.cost[i] = cost;
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.get(cell) >= self.levels.blocked
    }

    /// Points outside the grid count as blocked.
    pub fn is_blocked_at(&self, p: [f64; 2]) -> bool {
        self.spec.cell_of(p).is_none_or(|c| self.is_blocked(c))
    }

    pub fn count(&self, cost: f64) -> usize {
        self.cost.iter().filter(|&&c| c == cost).count()
    }

    /// True when every cell holds one of the three levels.
    pub fn is_three_level(&self) -> bool {
        let l = self.levels;
        self.cost
            .iter()
            .all(|&c| c == l.corridor || c == l.drivable || c == l.blocked)
    }
}

/// Ground elevation estimate: median world `z` over all drivable-region
/// points, or 0 when the scene has none.
pub fn ground_elevation(bundle: &SceneBundle, objects: &[ObjectGeometry]) -> f64 {
    let drivable: BTreeSet<u32> = bundle.drivable_ids().into_iter().collect();
    let mut zs: Vec<f64> = objects
        .iter()
        .filter(|o| drivable.contains(&o.detection_id))
        .flat_map(|o| o.points_world.iter().map(|p| p[2]))
        .collect();
    if zs.is_empty() {
        return 0.0;
    }
    zs.sort_by(f64::total_cmp);
    let n = zs.len();
    if n % 2 == 1 {
        zs[n / 2]
    } else {
        0.5 * (zs[n / 2 - 1] + zs[n / 2])
    }
}

/// Marks cells holding a non-drivable point inside the height band (relative
/// to [`ground_elevation`]) as occupied and cells holding drivable-region
/// points as free. Occupied wins when both apply.
pub fn build_occupancy(
    bundle: &SceneBundle,
    objects: &[ObjectGeometry],
    spec: GridSpec,
    height_band: (f64, f64),
) -> Result<OccupancyGrid, MapError> {
    if objects.iter().all(|o| o.points_world.is_empty()) {
        return Err(MapError::EmptyScene);
    }
    let drivable: BTreeSet<u32> = bundle.drivable_ids().into_iter().collect();
    let ground = ground_elevation(bundle, objects);
    let (z_lo, z_hi) = (ground + height_band.0, ground + height_band.1);
    let mut grid = OccupancyGrid::filled(spec, Occupancy::Unknown);

    for obj in objects
        .iter()
        .filter(|o| drivable.contains(&o.detection_id))
    {
        for p in &obj.points_world {
            if let Some(cell) = spec.cell_of([p[0], p[1]]) {
                grid.set(cell, Occupancy::Free);
            }
        }
    }
    for obj in objects
        .iter()
        .filter(|o| !drivable.contains(&o.detection_id))
    {
        for p in &obj.points_world {
            if p[2] < z_lo || p[2] > z_hi {
                continue;
            }
            if let Some(cell) = spec.cell_of([p[0], p[1]]) {
                grid.set(cell, Occupancy::Occupied);
            }
        }
    }
    Ok(grid)
}

/// Labels each cell with the object whose points cover it. Contested cells go
/// to the object whose centroid is nearest the cell center, then lower id.
pub fn build_semantic(
    _bundle: &SceneBundle,
    objects: &[ObjectGeometry],
    spec: GridSpec,
) -> SemanticGrid {
    let mut best: Vec<Option<(f64, u32)>> = vec![None; spec.len()];
    for obj in objects {
        let c = [obj.centroid[0], obj.centroid[1]];
        for p in &obj.points_world {
            let Some(cell) = spec.cell_of([p[0], p[1]]) else {
                continue;
            };
            let center = spec.center(cell);
            let d = (center[0] - c[0]).hypot(center[1] - c[1]);
            let slot = &mut best[spec.index(cell)];
            let better = match *slot {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && obj.detection_id < bid),
            };
            if better {
                *slot = Some((d, obj.detection_id));
            }
        }
    }
    SemanticGrid {
        spec,
        cells: best.into_iter().map(|s| s.map(|(_, id)| id)).collect(),
    }
}

/// Occupied → blocked; free and labeled with a drivable id → drivable;
/// everything else (unknown, other ground) → blocked.
pub fn init_value_map(
    occ: &OccupancyGrid,
    sem: &SemanticGrid,
    drivable_ids: &BTreeSet<u32>,
    levels: CostLevels,
) -> Result<ValueMap, MapError> {
    if occ.spec != sem.spec {
        return Err(MapError::SpecMismatch);
    }
    let cost = occ
        .cells
        .iter()
        .zip(&sem.cells)
        .map(|(o, s)| match (o, s) {
            (Occupancy::Free, Some(id)) if drivable_ids.contains(id) => levels.drivable,
            _ => levels.blocked,
        })
        .collect();
    Ok(ValueMap {
        spec: occ.spec,
        levels,
        cost,
    })
}

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * dx, a[1] + t * dy];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Lowers drivable cells whose centers lie within `radius` of the coarse
/// polyline to the corridor level. Blocked cells never change. An empty
/// polyline leaves the map untouched.
pub fn imprint_corridor(vm: &ValueMap, coarse: &[[f64; 2]], radius: f64) -> ValueMap {
    let mut out = vm.clone();
    let spec = vm.spec;
    let segments: Vec<([f64; 2], [f64; 2])> = match coarse {
        [] => return out,
        [only] => vec![(*only, *only)],
        _ => coarse.windows(2).map(|w| (w[0], w[1])).collect(),
    };
    for (a, b) in segments {
        let lo = [a[0].min(b[0]) - radius, a[1].min(b[1]) - radius];
        let hi = [a[0].max(b[0]) + radius, a[1].max(b[1]) + radius];
        let Some((c0, c1)) = spec.cells_in_box(lo, hi) else {
            continue;
        };
        for row in c0.row..=c1.row {
            for col in c0.col..=c1.col {
                let cell = Cell::new(row, col);
                let i = spec.index(cell);
                if out.cost[i] != vm.levels.drivable {
                    continue;
                }
                if point_segment_distance(spec.center(cell), a, b) <= radius {
                    out.cost[i] = vm.levels.corridor;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rows: usize, cols: usize) -> GridSpec {
        GridSpec::new([0.0, 0.0], 0.2, rows, cols).unwrap()
    }

    #[test]
    fn cell_lookup_matches_bounds() {
        let s = spec(10, 20);
        let c = s.cell_of([1.05, 0.45]).unwrap();
        assert_eq!(c, Cell::new(2, 5));
        let (lo, hi) = s.bounds(c);
        assert!(lo[0] <= 1.05 && 1.05 < hi[0]);
        assert!(s.cell_of([-0.01, 0.0]).is_none());
        assert!(s.cell_of([4.0, 0.0]).is_none());
    }

    #[test]
    fn rejects_pathological_extent() {
        assert_eq!(
            GridSpec::new([0.0, 0.0], 0.2, 3000, 3000),
            Err(MapError::GridTooLarge {
                rows: 3000,
                cols: 3000
            })
        );
        assert!(GridSpec::new([0.0, 0.0], 0.0, 3, 3).is_err());
    }

    #[test]
    fn covering_includes_margin() {
        let s = GridSpec::covering([[0.0, 0.0], [10.0, 4.0]], 0.2, 5.0).unwrap();
        assert!(s.cell_of([-4.9, -4.9]).is_some());
        assert!(s.cell_of([14.9, 8.9]).is_some());
    }

    #[test]
    fn all_free_drivable_grid_is_uniform() {
        let s = spec(4, 4);
        let occ = OccupancyGrid::filled(s, Occupancy::Free);
        let sem = SemanticGrid {
            spec: s,
            cells: vec![Some(0); 16],
        };
        let vm = init_value_map(&occ, &sem, &BTreeSet::from([0]), CostLevels::default()).unwrap();
        assert_eq!(vm.count(10.0), 16);
    }

    #[test]
    fn occupied_and_sidewalk_cells_are_blocked() {
        let s = spec(3, 3);
        let mut occ = OccupancyGrid::filled(s, Occupancy::Free);
        occ.set(Cell::new(1, 1), Occupancy::Occupied);
        let mut sem = SemanticGrid {
            spec: s,
            cells: vec![Some(0); 9],
        };
        // column 2 is sidewalk (id 1, not drivable)
        for r in 0..3 {
            sem.cells[s.index(Cell::new(r, 2))] = Some(1);
        }
        let vm = init_value_map(&occ, &sem, &BTreeSet::from([0]), CostLevels::default()).unwrap();
        assert_eq!(vm.get(Cell::new(1, 1)), 1000.0);
        for r in 0..3 {
            assert_eq!(vm.get(Cell::new(r, 2)), 1000.0);
            assert_eq!(vm.get(Cell::new(r, 0)), 10.0);
        }
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let occ = OccupancyGrid::filled(spec(3, 3), Occupancy::Free);
        let sem = SemanticGrid::empty(spec(3, 4));
        assert_eq!(
            init_value_map(&occ, &sem, &BTreeSet::new(), CostLevels::default()),
            Err(MapError::SpecMismatch)
        );
    }

    #[test]
    fn corridor_band_matches_brute_force() {
        let s = spec(30, 50);
        let vm = ValueMap::uniform(s, CostLevels::default(), 10.0);
        let line = [[0.5, 3.0], [9.5, 3.0]];
        let radius = 0.4;
        let out = imprint_corridor(&vm, &line, radius);
        for i in 0..s.len() {
            let c = s.center(s.cell_at(i));
            let d = point_segment_distance(c, line[0], line[1]);
            let expect = if d <= radius { 1.0 } else { 10.0 };
            assert_eq!(out.cost[i], expect, "cell {:?}", s.cell_at(i));
        }
        // band is two radii wide: rows with centers in [2.6, 3.4]
        let col = s.cell_of([5.0, 0.0]).unwrap().col;
        let band: Vec<usize> = (0..30)
            .filter(|&r| out.get(Cell::new(r, col)) == 1.0)
            .collect();
        assert_eq!(band, vec![13, 14, 15, 16]);
    }

    #[test]
    fn corridor_never_lowers_blocked_cells() {
        let s = spec(5, 5);
        let mut vm = ValueMap::uniform(s, CostLevels::default(), 10.0);
        vm.set(Cell::new(2, 2), 1000.0);
        let out = imprint_corridor(&vm, &[[0.0, 0.5], [1.0, 0.5]], 0.3);
        assert_eq!(out.get(Cell::new(2, 2)), 1000.0);
        assert_eq!(out.get(Cell::new(2, 1)), 1.0);
    }

    #[test]
    fn tiny_radius_only_touches_cells_on_the_line() {
        let s = spec(5, 5);
        let vm = ValueMap::uniform(s, CostLevels::default(), 10.0);
        // passes through centers of row 2
        let out = imprint_corridor(&vm, &[[0.1, 0.5], [0.9, 0.5]], 0.05);
        assert_eq!(out.count(1.0), 5);
        for c in 0..5 {
            assert_eq!(out.get(Cell::new(2, c)), 1.0);
        }
    }

    #[test]
    fn occupancy_codes_roundtrip() {
        let mut g = OccupancyGrid::filled(spec(2, 2), Occupancy::Unknown);
        g.set(Cell::new(0, 1), Occupancy::Occupied);
        g.set(Cell::new(1, 0), Occupancy::Free);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("[-1,1,0,-1]"));
        let back: OccupancyGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }
}
