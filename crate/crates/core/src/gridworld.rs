//! Slippery gridworlds, goal-only reward models over them, and ASCII layouts.
//!
//! Coordinates are `(x, y)` with `y` growing downwards. States are the
//! non-wall cells in row-major order followed by one absorbing terminal.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dp;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const NUM_ACTIONS: usize = 4;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["N", "E", "S", "W"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub usize, pub usize);

impl Cell {
    pub fn x(self) -> usize {
        self.0
    }
    pub fn y(self) -> usize {
        self.1
    }
    pub fn transposed(self) -> Cell {
        Cell(self.1, self.0)
    }
    pub fn manhattan(self, other: Cell) -> usize {
        self.0.abs_diff(other.0) + self.1.abs_diff(other.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardShape {
    /// `-manhattan(landing, goal) / D_max` on every non-goal landing.
    DistanceShaped,
    /// `goal_reward` on every landing in `goal_cell`, zero elsewhere.
    GoalOnly { goal_cell: Cell },
}

fn default_max_steps() -> usize {
    100
}
fn default_gamma() -> f64 {
    0.9
}
fn default_goal_reward() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    /// Entering this cell ends the episode.
    pub goal: Cell,
    #[serde(default)]
    pub slip: f64,
    #[serde(default = "distance_shaped")]
    pub reward_shape: RewardShape,
    #[serde(default)]
    pub walls: Vec<Cell>,
    #[serde(default)]
    pub lava: Vec<Cell>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
}

fn distance_shaped() -> RewardShape {
    RewardShape::DistanceShaped
}

impl Default for GridSpec {
    /// The 10x10 slippery gridworld used by the experiments.
    fn default() -> Self {
        GridSpec {
            width: 10,
            height: 10,
            start: Cell(9, 4),
            goal: Cell(2, 0),
            slip: 0.1,
            reward_shape: RewardShape::DistanceShaped,
            walls: Vec::new(),
            lava: Vec::new(),
            max_steps: 100,
            gamma: 0.9,
            goal_reward: 10.0,
        }
    }
}

impl GridSpec {
    pub fn contains(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 || self.width * self.height < 2 {
            problems.push(format!("grid {}x{} is degenerate", self.width, self.height));
        }
        let walls: BTreeSet<Cell> = self.walls.iter().copied().collect();
        for (name, c) in [("start", self.start), ("goal", self.goal)] {
            if !self.contains(c) {
                problems.push(format!("{name} {c:?} is outside the grid"));
            } else if walls.contains(&c) {
                problems.push(format!("{name} {c:?} is a wall"));
            }
        }
        if self.start == self.goal {
            problems.push("start and goal coincide".into());
        }
        if let RewardShape::GoalOnly { goal_cell } = self.reward_shape {
            if !self.contains(goal_cell) || walls.contains(&goal_cell) {
                problems.push(format!("reward goal {goal_cell:?} is outside the grid or a wall"));
            }
        }
        if !(0.0..=1.0).contains(&self.slip) {
            problems.push(format!("slip {} outside [0, 1]", self.slip));
        }
        if let Some(c) = self.walls.iter().chain(&self.lava).find(|c| !self.contains(**c)) {
            problems.push(format!("wall/lava cell {c:?} is outside the grid"));
        }
        if self.lava.contains(&self.start) {
            problems.push("start is lava".into());
        }
        if self.lava.contains(&self.goal) {
            problems.push("goal is lava".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.max_steps == 0 {
            problems.push("max_steps must be positive".into());
        }
        if !self.goal_reward.is_finite() {
            problems.push("goal_reward must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    /// The same dynamics with a goal-only reward at `goal_cell`.
    pub fn with_goal_only_reward(&self, goal_cell: Cell) -> GridSpec {
        GridSpec { reward_shape: RewardShape::GoalOnly { goal_cell }, ..self.clone() }
    }

    /// Goal and reward field mirrored across the main diagonal.
    pub fn transposed(&self) -> Result<GridSpec> {
        if self.width != self.height {
            return Err(Error::invalid(format!(
                "transposition needs a square grid, got {}x{}",
                self.width, self.height
            )));
        }
        let reward_shape = match self.reward_shape {
            RewardShape::DistanceShaped => RewardShape::DistanceShaped,
            RewardShape::GoalOnly { goal_cell } => RewardShape::GoalOnly { goal_cell: goal_cell.transposed() },
        };
        let spec = GridSpec { goal: self.goal.transposed(), reward_shape, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bottom_right(&self) -> Cell {
        Cell(self.width - 1, self.height - 1)
    }

    fn max_distance(&self) -> f64 {
        ((self.width - 1) + (self.height - 1)) as f64
    }

    /// Reward for landing in the non-terminal cell `c`.
    fn landing_reward(&self, c: Cell) -> f64 {
        match self.reward_shape {
            RewardShape::DistanceShaped => -(c.manhattan(self.goal) as f64) / self.max_distance(),
            RewardShape::GoalOnly { goal_cell } => {
                if c == goal_cell {
                    self.goal_reward
                } else {
                    0.0
                }
            }
        }
    }

    /// Reward for entering the terminating goal cell.
    fn goal_entry_reward(&self) -> f64 {
        match self.reward_shape {
            RewardShape::DistanceShaped => self.goal_reward,
            RewardShape::GoalOnly { goal_cell } => {
                if goal_cell == self.goal {
                    self.goal_reward
                } else {
                    0.0
                }
            }
        }
    }
}

/// A built gridworld: the MDP plus the cell layout behind its state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    cells: Vec<Cell>,
    index: Vec<Option<usize>>,
}

impl GridWorld {
    pub fn terminal_state(&self) -> usize {
        self.cells.len()
    }

    pub fn num_states(&self) -> usize {
        self.cells.len() + 1
    }

    pub fn state_of(&self, c: Cell) -> Option<usize> {
        if !self.spec.contains(c) {
            return None;
        }
        self.index[c.1 * self.spec.width + c.0]
    }

    /// `None` for the terminal state.
    pub fn cell_of(&self, s: usize) -> Option<Cell> {
        self.cells.get(s).copied()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }
}

/// Non-wall cells in row-major order.
pub fn state_cells(spec: &GridSpec) -> Vec<Cell> {
    let walls: BTreeSet<Cell> = spec.walls.iter().copied().collect();
    (0..spec.height)
        .flat_map(|y| (0..spec.width).map(move |x| Cell(x, y)))
        .filter(|c| !walls.contains(c))
        .collect()
}

fn step_cell(spec: &GridSpec, walls: &BTreeSet<Cell>, c: Cell, dir: usize) -> Cell {
    let (x, y) = (c.0 as isize, c.1 as isize);
    let (nx, ny) = match dir {
        0 => (x, y - 1),
        1 => (x + 1, y),
        2 => (x, y + 1),
        _ => (x - 1, y),
    };
    if nx < 0 || ny < 0 {
        return c;
    }
    let n = Cell(nx as usize, ny as usize);
    if !spec.contains(n) || walls.contains(&n) {
        c
    } else {
        n
    }
}

/// Build the MDP for `spec`.
///
/// The intended move happens with probability `1 - slip`; each other direction
/// with `slip / 3`. When two landings with different rewards share the
/// terminal state (goal and lava next to each other), the stored reward is
/// their probability-weighted mean, which keeps expected rewards exact.
pub fn build_gridworld(spec: &GridSpec) -> Result<GridWorld> {
    spec.validate()?;
    let walls: BTreeSet<Cell> = spec.walls.iter().copied().collect();
    let lava: BTreeSet<Cell> = spec.lava.iter().copied().collect();
    let cells = state_cells(spec);
    let mut index = vec![None; spec.width * spec.height];
    for (s, c) in cells.iter().enumerate() {
        index[c.1 * spec.width + c.0] = Some(s);
    }
    let ns = cells.len() + 1;
    let terminal = cells.len();
    let mut p = vec![0.0; ns * NUM_ACTIONS * ns];
    let mut r = vec![0.0; ns * NUM_ACTIONS * ns];
    for (s, &c) in cells.iter().enumerate() {
        for a in 0..NUM_ACTIONS {
            let base = (s * NUM_ACTIONS + a) * ns;
            for dir in 0..NUM_ACTIONS {
                let q = if dir == a { 1.0 - spec.slip } else { spec.slip / 3.0 };
                if q == 0.0 {
                    continue;
                }
                let land = step_cell(spec, &walls, c, dir);
                let (next, reward) = if land == spec.goal {
                    (terminal, spec.goal_entry_reward())
                } else if lava.contains(&land) {
                    (terminal, 0.0)
                } else {
                    (index[land.1 * spec.width + land.0].expect("landing cell is not a wall"), spec.landing_reward(land))
                };
                p[base + next] += q;
                r[base + next] += q * reward;
            }
            for next in 0..ns {
                if p[base + next] > 0.0 {
                    r[base + next] /= p[base + next];
                }
            }
        }
    }
    for a in 0..NUM_ACTIONS {
        p[(terminal * NUM_ACTIONS + a) * ns + terminal] = 1.0;
    }
    let mut d = vec![0.0; ns];
    d[index[spec.start.1 * spec.width + spec.start.0].expect("start is not a wall")] = 1.0;
    let mut term = vec![false; ns];
    term[terminal] = true;
    let mdp = TabularMdp::new(ns, NUM_ACTIONS, p, r, d, term, spec.gamma)?;
    Ok(GridWorld { spec: spec.clone(), mdp, cells, index })
}

/// Goal-only model whose reward cell is the bottom-right corner.
pub fn make_initial_pdm(spec: &GridSpec) -> Result<GridWorld> {
    build_gridworld(&spec.with_goal_only_reward(spec.bottom_right()))
}

/// The task with goal and reward field transposed; dynamics are unchanged.
pub fn make_transposed_task(spec: &GridSpec) -> Result<(GridSpec, GridWorld)> {
    let t = spec.transposed()?;
    let world = build_gridworld(&t)?;
    Ok((t, world))
}

/// A model of the pure-planning sequence.
#[derive(Debug, Clone)]
pub struct PpModel {
    pub goal_cell: Cell,
    pub world: GridWorld,
}

/// Cell whose goal-only model has the worst certainty-equivalence policy in
/// the true task, scanning cells in row-major order (first minimum wins).
pub fn worst_goal_cell(spec: &GridSpec) -> Result<Cell> {
    let env = build_gridworld(spec)?;
    let lava: BTreeSet<Cell> = spec.lava.iter().copied().collect();
    let mut best: Option<(f64, Cell)> = None;
    for &c in env.cells().iter().filter(|c| !lava.contains(c)) {
        let model = build_gridworld(&spec.with_goal_only_reward(c))?;
        let policy = dp::optimal_policy(&model.mdp)?;
        let j = dp::performance(&env.mdp, &policy)?;
        if best.map_or(true, |(bj, _)| j < bj) {
            best = Some((j, c));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| Error::invalid("grid has no candidate goal cells"))
}

/// Breadth-first shortest path over open cells, neighbours tried N, E, S, W.
pub fn shortest_cell_path(spec: &GridSpec, from: Cell, to: Cell) -> Option<Vec<Cell>> {
    let walls: BTreeSet<Cell> = spec.walls.iter().copied().collect();
    let w = spec.width;
    let mut parent: Vec<Option<Cell>> = vec![None; w * spec.height];
    let mut seen = vec![false; w * spec.height];
    seen[from.1 * w + from.0] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some(p) = parent[cur.1 * w + cur.0] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for dir in 0..NUM_ACTIONS {
            let n = step_cell(spec, &walls, c, dir);
            if !seen[n.1 * w + n.0] {
                seen[n.1 * w + n.0] = true;
                parent[n.1 * w + n.0] = Some(c);
                queue.push_back(n);
            }
        }
    }
    None
}

/// `k` goal-only models from the worst goal cell to the true goal, with the
/// intermediate goals evenly spaced along a shortest path.
pub fn make_pp_sequence(spec: &GridSpec, k: usize) -> Result<Vec<PpModel>> {
    if k < 2 {
        return Err(Error::invalid("the sequence needs at least two models"));
    }
    let first = worst_goal_cell(spec)?;
    let path = shortest_cell_path(spec, first, spec.goal)
        .ok_or_else(|| Error::invalid(format!("no path from {first:?} to the goal")))?;
    if path.len() < k {
        return Err(Error::invalid(format!(
            "path from {first:?} to {:?} has {} cells, fewer than the {k} distinct goals requested",
            spec.goal,
            path.len()
        )));
    }
    let last = (path.len() - 1) as f64;
    (0..k)
        .map(|i| {
            let at = (i as f64 * last / (k - 1) as f64).round() as usize;
            let goal_cell = path[at];
            Ok(PpModel { goal_cell, world: build_gridworld(&spec.with_goal_only_reward(goal_cell))? })
        })
        .collect()
}

/// Deterministic goal-only world from an ASCII map: `#` wall, `.` floor,
/// `S` start, `G` goal (+1, terminal), `L` lava (terminal, no reward).
pub fn build_layout_gridworld(layout: &str) -> Result<GridWorld> {
    let rows: Vec<&str> = layout.lines().map(|l| l.trim_end()).filter(|l| !l.is_empty()).collect();
    if rows.is_empty() {
        return Err(Error::invalid("empty layout"));
    }
    let width = rows[0].chars().count();
    if let Some((y, row)) = rows.iter().enumerate().find(|(_, r)| r.chars().count() != width) {
        return Err(Error::invalid(format!(
            "layout is not rectangular: row {y} has {} columns, expected {width}",
            row.chars().count()
        )));
    }
    let (mut start, mut goal) = (None, None);
    let (mut walls, mut lava) = (Vec::new(), Vec::new());
    for (y, row) in rows.iter().enumerate() {
        for (x, ch) in row.chars().enumerate() {
            let c = Cell(x, y);
            match ch {
                '#' => walls.push(c),
                '.' => {}
                'L' => lava.push(c),
                'S' if start.is_none() => start = Some(c),
                'G' if goal.is_none() => goal = Some(c),
                'S' | 'G' => return Err(Error::invalid(format!("duplicate '{ch}' at {c:?}"))),
                other => return Err(Error::invalid(format!("unknown layout character {other:?} at {c:?}"))),
            }
        }
    }
    let start = start.ok_or_else(|| Error::invalid("layout has no 'S'"))?;
    let goal = goal.ok_or_else(|| Error::invalid("layout has no 'G'"))?;
    let spec = GridSpec {
        width,
        height: rows.len(),
        start,
        goal,
        slip: 0.0,
        reward_shape: RewardShape::GoalOnly { goal_cell: goal },
        walls,
        lava,
        max_steps: 100,
        gamma: 0.99,
        goal_reward: 1.0,
    };
    build_gridworld(&spec)
}

/// Small built-in maps in the spirit of common gridworld benchmarks.
pub mod layouts {
    pub const EMPTY_10X10: &str = "\
##########
#S.......#
#........#
#........#
#........#
#........#
#........#
#........#
#.......G#
##########
";

    pub const FOUR_ROOMS: &str = "\
##########
#S...#...#
#....#...#
#........#
#....#...#
##.#####.#
#....#...#
#........#
#....#..G#
##########
";

    pub const SIMPLE_CROSSING: &str = "\
#########
#S..#...#
#...#...#
#.......#
#...#...#
#...#...#
#...#...#
#...#..G#
#########
";

    pub const LAVA_CROSSING: &str = "\
#########
#S..L...#
#...L...#
#...L...#
#.......#
#...L...#
#...L...#
#...L..G#
#########
";
}
