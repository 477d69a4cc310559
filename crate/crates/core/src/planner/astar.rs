use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::bev::{Cell, ValueMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPath {
    pub cells: Vec<Cell>,
    pub total_cost: f64,
}

const STEPS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Traversable 8-neighbors of `cell`. A diagonal step is dropped when either
/// orthogonal cell it squeezes between is blocked.
pub fn neighbors(vm: &ValueMap, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
    let spec = vm.spec;
    let at = move |dr: isize, dc: isize| -> Option<Cell> {
        let r = cell.row.checked_add_signed(dr)?;
        let c = cell.col.checked_add_signed(dc)?;
        (r < spec.rows && c < spec.cols).then_some(Cell::new(r, c))
    };
    STEPS.iter().filter_map(move |&(dr, dc)| {
        let next = at(dr, dc)?;
        if vm.is_blocked(next) {
            return None;
        }
        if dr != 0 && dc != 0 {
            let a = at(dr, 0)?;
            let b = at(0, dc)?;
            if vm.is_blocked(a) || vm.is_blocked(b) {
                return None;
            }
        }
        Some(next)
    })
}

fn edge_cost(vm: &ValueMap, a: Cell, b: Cell) -> f64 {
    let diagonal = a.row != b.row && a.col != b.col;
    let step = if diagonal {
        vm.spec.resolution * SQRT_2
    } else {
        vm.spec.resolution
    };
    step * 0.5 * (vm.get(a) + vm.get(b))
}

/// Cost of a cell sequence under the endpoint-mean edge rule.
///
/// Orthogonal and diagonal contributions are summed separately and combined
/// once, so two paths with the same step mix produce bit-identical totals
/// regardless of step order (exact while costs are small integers).
pub fn path_cost(vm: &ValueMap, cells: &[Cell]) -> f64 {
    let (mut orth, mut diag) = (0.0, 0.0);
    for w in cells.windows(2) {
        let sum = vm.get(w[0]) + vm.get(w[1]);
        if w[0].row != w[1].row && w[0].col != w[1].col {
            diag += sum;
        } else {
            orth += sum;
        }
    }
    vm.spec.resolution * (orth + diag * SQRT_2) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    h: f64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    // BinaryHeap is a max-heap; reverse so the smallest (f, h, row, col) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 8-connected path between the cells containing `start` and
/// `goal`.
pub fn astar(vm: &ValueMap, start: [f64; 2], goal: [f64; 2]) -> Result<CellPath, PlanError> {
    let spec = vm.spec;
    let s = spec.cell_of(start).ok_or(PlanError::StartOutsideMap {
        x: start[0],
        y: start[1],
    })?;
    let g = spec.cell_of(goal).ok_or(PlanError::GoalOutsideMap {
        x: goal[0],
        y: goal[1],
    })?;
    if vm.is_blocked(s) {
        return Err(PlanError::StartBlocked {
            x: start[0],
            y: start[1],
        });
    }
    if vm.is_blocked(g) {
        return Err(PlanError::GoalBlocked {
            x: goal[0],
            y: goal[1],
        });
    }

    let goal_center = spec.center(g);
    let min_cost = vm.levels.corridor;
    let heuristic = |c: Cell| {
        let p = spec.center(c);
        (p[0] - goal_center[0]).hypot(p[1] - goal_center[1]) * min_cost
    };

    let n = spec.len();
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();

    best[spec.index(s)] = 0.0;
    let h0 = heuristic(s);
    open.push(Entry {
        f: h0,
        h: h0,
        cell: s,
    });

    while let Some(Entry { cell, .. }) = open.pop() {
        let ci = spec.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == g {
            let mut cells = vec![cell];
            let mut i = ci;
            while parent[i] != usize::MAX {
                i = parent[i];
                cells.push(spec.cell_at(i));
            }
            cells.reverse();
            let total_cost = path_cost(vm, &cells);
            return Ok(CellPath { cells, total_cost });
        }
        for next in neighbors(vm, cell) {
            let ni = spec.index(next);
            if closed[ni] {
                continue;
            }
            let tentative = best[ci] + edge_cost(vm, cell, next);
            if tentative < best[ni] {
                best[ni] = tentative;
                parent[ni] = ci;
                let h = heuristic(next);
                open.push(Entry {
                    f: tentative + h,
                    h,
                    cell: next,
                });
            }
        }
    }
    Err(PlanError::NoPath)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{CostLevels, GridSpec};

    fn uniform(rows: usize, cols: usize, cost: f64) -> ValueMap {
        ValueMap::uniform(
            GridSpec::new([0.0, 0.0], 0.2, rows, cols).unwrap(),
            CostLevels::default(),
            cost,
        )
    }

    #[test]
    fn open_diagonal() {
        let vm = uniform(3, 3, 10.0);
        let p = astar(&vm, [0.1, 0.1], [0.5, 0.5]).unwrap();
        assert_eq!(
            p.cells,
            vec![Cell::new(0, 0), Cell::new(1, 1), Cell::new(2, 2)]
        );
        let expected = 2.0 * SQRT_2 * 0.2 * 10.0;
        assert!((p.total_cost - expected).abs() < 1e-12);
    }

    #[test]
    fn same_cell_is_a_single_cell_path() {
        let vm = uniform(3, 3, 10.0);
        let p = astar(&vm, [0.1, 0.1], [0.15, 0.12]).unwrap();
        assert_eq!(p.cells.len(), 1);
        assert_eq!(p.total_cost, 0.0);
    }

    #[test]
    fn blocked_endpoints_are_distinguished() {
        let mut vm = uniform(3, 3, 10.0);
        vm.set(Cell::new(0, 0), 1000.0);
        assert!(matches!(
            astar(&vm, [0.1, 0.1], [0.5, 0.5]),
            Err(PlanError::StartBlocked { .. })
        ));
        assert!(matches!(
            astar(&vm, [0.5, 0.5], [0.1, 0.1]),
            Err(PlanError::GoalBlocked { .. })
        ));
        assert!(matches!(
            astar(&vm, [0.5, 0.5], [5.0, 0.1]),
            Err(PlanError::GoalOutsideMap { .. })
        ));
    }

    #[test]
    fn wall_without_gap_has_no_path() {
        let mut vm = uniform(5, 5, 10.0);
        for r in 0..5 {
            vm.set(Cell::new(r, 2), 1000.0);
        }
        assert_eq!(astar(&vm, [0.1, 0.1], [0.9, 0.9]), Err(PlanError::NoPath));
    }

    #[test]
    fn diagonal_squeeze_between_blocks_is_refused() {
        let mut vm = uniform(2, 2, 10.0);
        vm.set(Cell::new(0, 1), 1000.0);
        vm.set(Cell::new(1, 0), 1000.0);
        assert_eq!(astar(&vm, [0.1, 0.1], [0.3, 0.3]), Err(PlanError::NoPath));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let mut vm = uniform(12, 12, 10.0);
        for r in 2..10 {
            vm.set(Cell::new(r, 6), 1000.0);
        }
        let a = astar(&vm, [0.1, 1.1], [2.3, 1.1]).unwrap();
        let b = astar(&vm, [0.1, 1.1], [2.3, 1.1]).unwrap();
        assert_eq!(a, b);
        assert!(a.cells.iter().all(|&c| !vm.is_blocked(c)));
    }
}
