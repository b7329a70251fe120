//! Deterministic 11×11 FourRooms gridworld.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::RngStream;
use crate::error::{Error, Result};

pub const WIDTH: usize = 11;
pub const HEIGHT: usize = 11;
pub const N_CELLS: usize = WIDTH * HEIGHT;
pub const N_ACTIONS: usize = 4;
pub const OBS_DIM: usize = 16;

pub const GOAL_REWARD: f64 = 50.0;
pub const WALL_REWARD: f64 = -1.0;

/// Index normalisation for the state and goal features.
const INDEX_SCALE: f64 = 1.0 / 120.0;

/// Canonical layout, rows top to bottom, `#` = wall.
pub const MAP_ASCII: [&str; HEIGHT] = [
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....###.##",
    "#.####.....",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
];

pub const DOORWAYS: [Cell; 4] = [
    Cell::new(2, 5),
    Cell::new(8, 5),
    Cell::new(5, 1),
    Cell::new(4, 8),
];

/// Grid coordinate, row 0 at the top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn index(self) -> usize {
        self.row * WIDTH + self.col
    }

    pub fn from_index(index: usize) -> Self {
        Self::new(index / WIDTH, index % WIDTH)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("action {i} outside 0-3")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Room {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    walls: [bool; N_CELLS],
}

impl Default for GridMap {
    fn default() -> Self {
        build_grid()
    }
}

/// The fixed FourRooms layout.
pub fn build_grid() -> GridMap {
    let mut walls = [false; N_CELLS];
    for (r, line) in MAP_ASCII.iter().enumerate() {
        for (c, ch) in line.bytes().enumerate() {
            walls[r * WIDTH + c] = ch == b'#';
        }
    }
    GridMap { walls }
}

impl GridMap {
    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[cell.index()]
    }

    pub fn is_doorway(&self, cell: Cell) -> bool {
        DOORWAYS.contains(&cell)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..N_CELLS)
            .map(Cell::from_index)
            .filter(|&c| !self.is_wall(c))
            .collect()
    }

    /// Room of a free, non-doorway cell.
    pub fn room(&self, cell: Cell) -> Option<Room> {
        if self.is_wall(cell) || self.is_doorway(cell) {
            return None;
        }
        let Cell { row, col } = cell;
        match (col < 5, col > 5) {
            (true, _) if row <= 4 => Some(Room::TopLeft),
            (true, _) if row >= 6 => Some(Room::BottomLeft),
            (_, true) if row <= 3 => Some(Room::TopRight),
            (_, true) if row >= 5 => Some(Room::BottomRight),
            _ => None,
        }
    }

    pub fn room_cells(&self, room: Room) -> Vec<Cell> {
        self.free_cells()
            .into_iter()
            .filter(|&c| self.room(c) == Some(room))
            .collect()
    }

    /// Neighbour in direction `a`, `None` when off-grid or a wall.
    pub fn neighbour(&self, cell: Cell, a: Action) -> Option<Cell> {
        let (dr, dc) = a.delta();
        let r = cell.row as isize + dr;
        let c = cell.col as isize + dc;
        if r < 0 || c < 0 || r >= HEIGHT as isize || c >= WIDTH as isize {
            return None;
        }
        let next = Cell::new(r as usize, c as usize);
        (!self.is_wall(next)).then_some(next)
    }

    /// BFS distances from `from`; walls and unreachable cells are `None`.
    pub fn distances(&self, from: Cell) -> [Option<usize>; N_CELLS] {
        let mut dist = [None; N_CELLS];
        if self.is_wall(from) {
            return dist;
        }
        dist[from.index()] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c.index()].unwrap();
            for a in Action::ALL {
                if let Some(n) = self.neighbour(c, a) {
                    if dist[n.index()].is_none() {
                        dist[n.index()] = Some(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    pub fn shortest_path_len(&self, from: Cell, to: Cell) -> Option<usize> {
        self.distances(from)[to.index()]
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(N_CELLS + HEIGHT);
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                s.push(if self.is_wall(Cell::new(r, c)) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GoalGeneralization,
    ContingencyChange,
}

/// Which goals are possible in a phase and how the goal feature is shown.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: ExperimentKind,
    pub phase: u8,
    pub goal_candidates: Vec<Cell>,
    pub contingency_inverted: bool,
    pub step_cap: usize,
}

pub const CONTINGENCY_CANDIDATES: [Cell; 2] = [Cell::new(0, 0), Cell::new(10, 10)];

impl TaskSpec {
    /// Goal generalisation: phase 1 goals in top-left/bottom-right rooms with
    /// cap 100; phase 2 goals in top-right/bottom-left rooms with cap 25.
    pub fn goal_generalization(map: &GridMap, phase: u8) -> Self {
        let (rooms, cap) = match phase {
            1 => ([Room::TopLeft, Room::BottomRight], 100),
            _ => ([Room::TopRight, Room::BottomLeft], 25),
        };
        let goal_candidates = rooms.iter().flat_map(|&r| map.room_cells(r)).collect();
        Self {
            kind: ExperimentKind::GoalGeneralization,
            phase,
            goal_candidates,
            contingency_inverted: false,
            step_cap: cap,
        }
    }

    /// Contingency change: corner goals; in phase 2 the goal feature marks the
    /// unrewarded corner.
    pub fn contingency_change(phase: u8) -> Self {
        Self {
            kind: ExperimentKind::ContingencyChange,
            phase,
            goal_candidates: CONTINGENCY_CANDIDATES.to_vec(),
            contingency_inverted: phase == 2,
            step_cap: 100,
        }
    }

    pub fn for_phase(kind: ExperimentKind, map: &GridMap, phase: u8) -> Self {
        match kind {
            ExperimentKind::GoalGeneralization => Self::goal_generalization(map, phase),
            ExperimentKind::ContingencyChange => Self::contingency_change(phase),
        }
    }

    pub fn with_step_cap(mut self, cap: usize) -> Self {
        self.step_cap = cap;
        self
    }

    pub fn validate(&self, map: &GridMap) -> Result<()> {
        if self.goal_candidates.is_empty() {
            return Err(Error::config("task has no goal candidates"));
        }
        if let Some(c) = self.goal_candidates.iter().find(|&&c| map.is_wall(c)) {
            return Err(Error::config(format!("goal candidate {c:?} is a wall")));
        }
        if !(self.phase == 1 || self.phase == 2) {
            return Err(Error::config(format!("phase {} not in {{1, 2}}", self.phase)));
        }
        if self.contingency_inverted
            && !(self.kind == ExperimentKind::ContingencyChange && self.phase == 2)
        {
            return Err(Error::config(
                "contingency inversion requires contingency-change phase 2",
            ));
        }
        if self.contingency_inverted && self.goal_candidates.len() != 2 {
            return Err(Error::config("contingency inversion needs exactly two candidates"));
        }
        Ok(())
    }

    /// Cell shown in the goal feature for a given true goal.
    pub fn advertised_goal(&self, goal: Cell) -> Cell {
        if self.contingency_inverted {
            *self
                .goal_candidates
                .iter()
                .find(|&&c| c != goal)
                .unwrap_or(&goal)
        } else {
            goal
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Cell,
    pub goal: Cell,
    pub advertised_goal: Cell,
    pub steps: usize,
    pub step_cap: usize,
    pub prev_action: Option<Action>,
    pub prev_reward: f64,
    pub done: bool,
}

/// Policy input: state index, 3×3 wall window, previous action one-hot,
/// previous reward, advertised goal index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const STATE_INDEX: usize = 0;
    pub const WINDOW: std::ops::Range<usize> = 1..10;
    pub const PREV_ACTION: std::ops::Range<usize> = 10..14;
    pub const PREV_REWARD: usize = 14;
    pub const GOAL_INDEX: usize = 15;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    /// Copy with the goal feature zeroed.
    pub fn without_goal(&self) -> Self {
        let mut o = *self;
        o.0[Self::GOAL_INDEX] = 0.0;
        o
    }
}

pub fn encode_observation(state: &EnvState, map: &GridMap) -> Observation {
    let mut o = [0.0; OBS_DIM];
    o[Observation::STATE_INDEX] = state.agent.index() as f64 * INDEX_SCALE;
    let mut k = Observation::WINDOW.start;
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            let r = state.agent.row as isize + dr;
            let c = state.agent.col as isize + dc;
            let wall = r < 0
                || c < 0
                || r >= HEIGHT as isize
                || c >= WIDTH as isize
                || map.is_wall(Cell::new(r as usize, c as usize));
            o[k] = if wall { 1.0 } else { 0.0 };
            k += 1;
        }
    }
    if let Some(a) = state.prev_action {
        o[Observation::PREV_ACTION.start + a as usize] = 1.0;
    }
    o[Observation::PREV_REWARD] = state.prev_reward;
    o[Observation::GOAL_INDEX] = state.advertised_goal.index() as f64 * INDEX_SCALE;
    Observation(o)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub hit_wall: bool,
    pub reached_goal: bool,
}

/// FourRooms environment bound to one map.
#[derive(Clone, Debug, Default)]
pub struct FourRooms {
    map: GridMap,
}

impl FourRooms {
    pub fn new() -> Self {
        Self { map: build_grid() }
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    /// Goal uniform over the candidates, agent uniform over the other free cells.
    pub fn reset(&self, task: &TaskSpec, rng: &mut RngStream) -> Result<(EnvState, Observation)> {
        task.validate(&self.map)?;
        let goal = task.goal_candidates[rng.below(task.goal_candidates.len())];
        let starts: Vec<Cell> = self
            .map
            .free_cells()
            .into_iter()
            .filter(|&c| c != goal)
            .collect();
        let agent = starts[rng.below(starts.len())];
        Ok(self.reset_at(task, agent, goal))
    }

    /// Deterministic reset with explicit start and goal.
    pub fn reset_at(&self, task: &TaskSpec, agent: Cell, goal: Cell) -> (EnvState, Observation) {
        let state = EnvState {
            agent,
            goal,
            advertised_goal: task.advertised_goal(goal),
            steps: 0,
            step_cap: task.step_cap,
            prev_action: None,
            prev_reward: 0.0,
            done: task.step_cap == 0,
        };
        let obs = encode_observation(&state, &self.map);
        (state, obs)
    }

    /// Pure transition function.
    pub fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, Observation, StepOutcome)> {
        if state.done {
            return Err(Error::contract("step after episode end"));
        }
        let a = Action::from_index(action)?;
        let mut next = state.clone();
        let (agent, hit_wall) = match self.map.neighbour(state.agent, a) {
            Some(c) => (c, false),
            None => (state.agent, true),
        };
        let reached_goal = agent == state.goal;
        let reward = if reached_goal {
            GOAL_REWARD
        } else if hit_wall {
            WALL_REWARD
        } else {
            0.0
        };
        next.agent = agent;
        next.steps += 1;
        next.prev_action = Some(a);
        next.prev_reward = reward;
        next.done = reached_goal || next.steps >= state.step_cap;
        let obs = encode_observation(&next, &self.map);
        let done = next.done;
        Ok((
            next,
            obs,
            StepOutcome {
                reward,
                done,
                hit_wall,
                reached_goal,
            },
        ))
    }

    /// Best achievable undiscounted return: the goal reward when the goal is
    /// within `cap` moves, else zero.
    pub fn optimal_return(&self, start: Cell, goal: Cell, cap: usize) -> Result<f64> {
        optimal_return(&self.map, start, goal, cap)
    }
}

pub fn optimal_return(map: &GridMap, start: Cell, goal: Cell, cap: usize) -> Result<f64> {
    if map.is_wall(start) || map.is_wall(goal) {
        return Err(Error::contract("optimal_return on a wall cell"));
    }
    if cap == 0 {
        return Ok(0.0);
    }
    match map.shortest_path_len(start, goal) {
        Some(d) if d <= cap => Ok(GOAL_REWARD),
        _ => Ok(0.0),
    }
}

/// First action of a shortest path from `from` to `to`.
pub fn greedy_action(map: &GridMap, from: Cell, to: Cell) -> Option<Action> {
    let dist = map.distances(to);
    let here = dist[from.index()]?;
    Action::ALL.into_iter().find(|&a| {
        map.neighbour(from, a)
            .and_then(|n| dist[n.index()])
            .is_some_and(|d| d + 1 == here)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_map_facts() {
        let m = build_grid();
        assert!(!m.is_wall(Cell::new(2, 5)));
        assert!(m.is_doorway(Cell::new(2, 5)));
        assert!(m.is_wall(Cell::new(0, 5)));
        assert_eq!(m.free_cells().len(), 104);
        for d in DOORWAYS {
            assert!(!m.is_wall(d));
        }
    }

    #[test]
    fn rooms_partition_free_cells() {
        let m = build_grid();
        let sizes: Vec<usize> = [Room::TopLeft, Room::TopRight, Room::BottomLeft, Room::BottomRight]
            .iter()
            .map(|&r| m.room_cells(r).len())
            .collect();
        assert_eq!(sizes.iter().sum::<usize>() + DOORWAYS.len(), 104);
        assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn wall_bump_example() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (s, _) = env.reset_at(&task, Cell::new(0, 4), Cell::new(10, 10));
        let (n, _, out) = env.step(&s, Action::Right as usize).unwrap();
        assert_eq!(n.agent, Cell::new(0, 4));
        assert_eq!(out.reward, -1.0);
        assert!(!out.done);
    }

    #[test]
    fn up_move_example() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (s, _) = env.reset_at(&task, Cell::new(2, 2), Cell::new(10, 10));
        let (n, _, out) = env.step(&s, Action::Up as usize).unwrap();
        assert_eq!(n.agent, Cell::new(1, 2));
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn reaching_goal_ends_episode() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (s, _) = env.reset_at(&task, Cell::new(3, 3), Cell::new(3, 4));
        let (n, _, out) = env.step(&s, Action::Right as usize).unwrap();
        assert_eq!(out.reward, 50.0);
        assert!(out.done && n.done);
        assert!(env.step(&n, 0).is_err());
    }

    #[test]
    fn invalid_action_rejected() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (s, _) = env.reset_at(&task, Cell::new(3, 3), Cell::new(3, 4));
        assert!(matches!(env.step(&s, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn corner_window_marks_out_of_bounds() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (_, obs) = env.reset_at(&task, Cell::new(0, 0), Cell::new(3, 3));
        // window rows: top row off-grid, left column off-grid
        let w = &obs.0[Observation::WINDOW];
        assert_eq!(w, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(obs.0[Observation::PREV_ACTION].iter().all(|&x| x == 0.0));
        assert_eq!(obs.0[Observation::PREV_REWARD], 0.0);
    }

    #[test]
    fn index_normalisation() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let (_, obs) = env.reset_at(&task, Cell::from_index(24), Cell::from_index(119));
        assert_eq!(obs.0[0], 24.0 / 120.0);
        assert_eq!(obs.0[15], 119.0 / 120.0);
    }

    #[test]
    fn optimal_return_cases() {
        let m = build_grid();
        let g = Cell::new(3, 3);
        assert_eq!(optimal_return(&m, Cell::new(3, 2), g, 1).unwrap(), 50.0);
        assert_eq!(optimal_return(&m, Cell::new(3, 2), g, 0).unwrap(), 0.0);
        let d = m.shortest_path_len(Cell::new(0, 0), Cell::new(10, 10)).unwrap();
        let expect = if d <= 25 { 50.0 } else { 0.0 };
        assert_eq!(optimal_return(&m, Cell::new(0, 0), Cell::new(10, 10), 25).unwrap(), expect);
        assert!(optimal_return(&m, Cell::new(0, 5), g, 10).is_err());
    }

    #[test]
    fn goal_generalisation_phase1_goals_in_tl_or_br() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 1);
        let mut rng = RngStream::new(3);
        for _ in 0..200 {
            let (s, _) = env.reset(&task, &mut rng).unwrap();
            let room = env.map().room(s.goal);
            assert!(matches!(room, Some(Room::TopLeft) | Some(Room::BottomRight)));
            assert_ne!(s.agent, s.goal);
        }
    }

    #[test]
    fn contingency_phase2_advertises_other_corner() {
        let env = FourRooms::new();
        let task = TaskSpec::contingency_change(2);
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let (s, _) = env.reset(&task, &mut rng).unwrap();
            assert_ne!(s.advertised_goal, s.goal);
            assert!(CONTINGENCY_CANDIDATES.contains(&s.advertised_goal));
        }
        // swapping candidates swaps goal and advertised goal
        let [a, b] = CONTINGENCY_CANDIDATES;
        assert_eq!(task.advertised_goal(a), b);
        assert_eq!(task.advertised_goal(b), a);
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let env = FourRooms::new();
        let task = TaskSpec::goal_generalization(env.map(), 2);
        let a = env.reset(&task, &mut RngStream::new(9)).unwrap().0;
        let b = env.reset(&task, &mut RngStream::new(9)).unwrap().0;
        assert_eq!((a.agent, a.goal), (b.agent, b.goal));
    }

    #[test]
    fn empty_candidates_is_config_error() {
        let env = FourRooms::new();
        let mut task = TaskSpec::contingency_change(1);
        task.goal_candidates.clear();
        assert!(matches!(
            env.reset(&task, &mut RngStream::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ascii_round_trip() {
        let m = build_grid();
        let expected: String = MAP_ASCII.iter().map(|l| format!("{l}\n")).collect();
        assert_eq!(m.to_ascii(), expected);
    }
}
