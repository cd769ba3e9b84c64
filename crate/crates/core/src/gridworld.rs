//! Procedural grid worlds compiled to [`TabularMdp`]s.
//!
//! Agents move on a rectangular grid with walls. Five actions: up, right,
//! down, left, stay. With probability `slip_prob` the executed action is drawn
//! uniformly from all five. Entering (or staying on) a cell holding an object
//! pays the object's reward. Respawning objects pay every time; consumable
//! objects pay once and the state tracks which ones are gone.
//!
//! Text format (see `maps/` for the shipped layouts):
//!
//! ```text
//! gamma = 0.99
//! slip_prob = 0.05
//! object.a = 1 respawn
//! object.b = 0.5 consume
//! [map]
//! S..#.
//! .#.#a
//! ..b..
//! ```
//!
//! `#` is a wall, `.` open floor, `S` a start cell and a lowercase letter an
//! object declared in the header.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kv;
use crate::mdp::TabularMdp;
use crate::rng;

pub const NUM_ACTIONS: usize = 5;
pub const DEFAULT_GAMMA: f64 = 0.99;
/// Upper bound on compiled states accepted by validation.
pub const MAX_STATES: usize = 1024;
pub const MAX_CONSUMABLES: usize = 6;
const MAX_OBJECTS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Respawn,
    Consume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridObject {
    pub cell: Cell,
    pub reward: f64,
    pub kind: ObjectKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Cell>,
    pub objects: Vec<GridObject>,
    pub start_cells: BTreeSet<Cell>,
    pub gamma: f64,
    pub slip_prob: f64,
}

impl GridSpec {
    fn in_bounds(&self, c: Cell) -> bool {
        c.row < self.height && c.col < self.width
    }

    fn is_wall(&self, c: Cell) -> bool {
        self.walls.contains(&c)
    }

    fn free_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let c = Cell::new(row, col);
                if !self.is_wall(c) {
                    cells.push(c);
                }
            }
        }
        cells
    }

    fn consumables(&self) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&i| self.objects[i].kind == ObjectKind::Consume)
            .collect()
    }

    /// Number of states after compilation.
    pub fn num_states(&self) -> usize {
        self.free_cells().len() << self.consumables().len()
    }

    /// Cell reached by executing `action` from `c`; blocked moves stay put.
    fn step(&self, c: Cell, action: usize) -> Cell {
        let target = match action {
            0 if c.row > 0 => Cell::new(c.row - 1, c.col),
            1 => Cell::new(c.row, c.col + 1),
            2 => Cell::new(c.row + 1, c.col),
            3 if c.col > 0 => Cell::new(c.row, c.col - 1),
            _ => c,
        };
        if self.in_bounds(target) && !self.is_wall(target) {
            target
        } else {
            c
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.width == 0 || self.height == 0 {
            return fail("grid must be at least 1x1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return fail(format!("slip_prob must lie in [0, 1), got {}", self.slip_prob));
        }
        if let Some(w) = self.walls.iter().find(|c| !self.in_bounds(**c)) {
            return fail(format!("wall {w:?} out of bounds"));
        }
        if self.start_cells.is_empty() {
            return fail("at least one start cell is required".into());
        }
        for c in &self.start_cells {
            if !self.in_bounds(*c) || self.is_wall(*c) {
                return fail(format!("start cell {c:?} is out of bounds or a wall"));
            }
        }
        if self.objects.len() > MAX_OBJECTS {
            return fail(format!("at most {MAX_OBJECTS} objects are supported"));
        }
        let mut seen = BTreeSet::new();
        for obj in &self.objects {
            if !self.in_bounds(obj.cell) || self.is_wall(obj.cell) {
                return fail(format!("object at {:?} is out of bounds or on a wall", obj.cell));
            }
            if self.start_cells.contains(&obj.cell) {
                return fail(format!("object at {:?} shares a start cell", obj.cell));
            }
            if !seen.insert(obj.cell) {
                return fail(format!("two objects share cell {:?}", obj.cell));
            }
            if !(0.0..=1.0).contains(&obj.reward) {
                return fail(format!("object reward {} outside [0, 1]", obj.reward));
            }
        }
        if self.consumables().len() > MAX_CONSUMABLES {
            return fail(format!("at most {MAX_CONSUMABLES} consumable objects are supported"));
        }
        let states = self.num_states();
        if states > MAX_STATES {
            return fail(format!("grid compiles to {states} states (limit {MAX_STATES})"));
        }
        for start in &self.start_cells {
            let reachable = self.reachable_from(*start);
            if !self.objects.iter().any(|o| o.reward > 0.0 && reachable.contains(&o.cell)) {
                return fail(format!("no rewarding object is reachable from start {start:?}"));
            }
        }
        Ok(())
    }

    fn reachable_from(&self, start: Cell) -> BTreeSet<Cell> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for a in 0..4 {
                let n = self.step(c, a);
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Compiles to a tabular MDP. State index is
    /// `mask * num_free_cells + cell_index` with free cells in row-major
    /// order and `mask` the set of consumed objects.
    pub fn compile(&self) -> Result<TabularMdp> {
        self.validate()?;
        let cells = self.free_cells();
        let index_of = |c: Cell| cells.binary_search(&c).expect("free cell");
        let consumables = self.consumables();
        let num_masks = 1usize << consumables.len();
        let num_cells = cells.len();
        let n = num_cells * num_masks;
        let object_at = |c: Cell| self.objects.iter().position(|o| o.cell == c);

        let mut transition = vec![0.0; n * NUM_ACTIONS * n];
        let mut reward = vec![0.0; n * NUM_ACTIONS];
        for mask in 0..num_masks {
            for (ci, &cell) in cells.iter().enumerate() {
                let s = mask * num_cells + ci;
                for a in 0..NUM_ACTIONS {
                    for executed in 0..NUM_ACTIONS {
                        let mut prob = self.slip_prob / NUM_ACTIONS as f64;
                        if executed == a {
                            prob += 1.0 - self.slip_prob;
                        }
                        if prob == 0.0 {
                            continue;
                        }
                        let target = self.step(cell, executed);
                        let mut next_mask = mask;
                        let mut gain = 0.0;
                        if let Some(oi) = object_at(target) {
                            let obj = &self.objects[oi];
                            match obj.kind {
                                ObjectKind::Respawn => gain = obj.reward,
                                ObjectKind::Consume => {
                                    let bit = 1 << consumables.iter().position(|&c| c == oi).expect("consumable");
                                    if mask & bit == 0 {
                                        gain = obj.reward;
                                        next_mask |= bit;
                                    }
                                }
                            }
                        }
                        let sp = next_mask * num_cells + index_of(target);
                        transition[(s * NUM_ACTIONS + a) * n + sp] += prob;
                        reward[s * NUM_ACTIONS + a] += prob * gain;
                    }
                    // Clamp accumulated round-off so rewards stay inside [0, 1].
                    let r = &mut reward[s * NUM_ACTIONS + a];
                    *r = r.clamp(0.0, 1.0);
                }
            }
        }
        let mut start = vec![0.0; n];
        let weight = 1.0 / self.start_cells.len() as f64;
        for c in &self.start_cells {
            start[index_of(*c)] += weight;
        }
        TabularMdp::new(n, NUM_ACTIONS, transition, reward, self.gamma, start)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "gamma = {:?}\nslip_prob = {:?}\n",
            self.gamma, self.slip_prob
        );
        for (i, obj) in self.objects.iter().enumerate() {
            let kind = match obj.kind {
                ObjectKind::Respawn => "respawn",
                ObjectKind::Consume => "consume",
            };
            out.push_str(&format!("object.{} = {:?} {kind}\n", (b'a' + i as u8) as char, obj.reward));
        }
        out.push_str("[map]\n");
        for row in 0..self.height {
            for col in 0..self.width {
                let c = Cell::new(row, col);
                let ch = if self.is_wall(c) {
                    '#'
                } else if self.start_cells.contains(&c) {
                    'S'
                } else if let Some(i) = self.objects.iter().position(|o| o.cell == c) {
                    (b'a' + i as u8) as char
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format. The result is validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let doc = kv::parse(text, &["map"])?;
        let root = doc.root();
        let gamma = match root.get("gamma") {
            Some(e) => e.parse()?,
            None => DEFAULT_GAMMA,
        };
        let slip_prob = match root.get("slip_prob") {
            Some(e) => e.parse()?,
            None => 0.0,
        };
        let mut declared: Vec<(char, f64, ObjectKind, usize)> = Vec::new();
        for entry in &root.entries {
            match entry.key.as_str() {
                "gamma" | "slip_prob" => {}
                key => {
                    let letter = key
                        .strip_prefix("object.")
                        .filter(|l| l.len() == 1 && l.as_bytes()[0].is_ascii_lowercase())
                        .ok_or_else(|| Error::parse(entry.offset, format!("unknown key {key:?}")))?;
                    let mut parts = entry.value.split_whitespace();
                    let reward: f64 = parts
                        .next()
                        .and_then(|r| r.parse().ok())
                        .ok_or_else(|| Error::parse(entry.offset, "object needs a numeric reward"))?;
                    let kind = match parts.next() {
                        None | Some("respawn") => ObjectKind::Respawn,
                        Some("consume") => ObjectKind::Consume,
                        Some(other) => return Err(Error::parse(entry.offset, format!("unknown object kind {other:?}"))),
                    };
                    if parts.next().is_some() {
                        return Err(Error::parse(entry.offset, "trailing tokens after object kind"));
                    }
                    declared.push((letter.chars().next().expect("one char"), reward, kind, entry.offset));
                }
            }
        }
        declared.sort_by_key(|d| d.0);
        let map = doc.require_section("map")?;
        if map.lines.is_empty() {
            return Err(Error::parse(map.offset, "empty map"));
        }
        let height = map.lines.len();
        let width = map.lines[0].1.trim_end().chars().count();
        let mut walls = BTreeSet::new();
        let mut start_cells = BTreeSet::new();
        let mut placed: Vec<Option<Cell>> = vec![None; declared.len()];
        for (row, (offset, line)) in map.lines.iter().enumerate() {
            let line = line.trim_end();
            if line.chars().count() != width {
                return Err(Error::parse(*offset, format!("map row {row} has a different width")));
            }
            for (col, ch) in line.chars().enumerate() {
                let c = Cell::new(row, col);
                match ch {
                    '#' => {
                        walls.insert(c);
                    }
                    '.' => {}
                    'S' => {
                        start_cells.insert(c);
                    }
                    'a'..='z' => {
                        let idx = declared
                            .iter()
                            .position(|d| d.0 == ch)
                            .ok_or_else(|| Error::parse(*offset, format!("object {ch:?} is not declared")))?;
                        if placed[idx].replace(c).is_some() {
                            return Err(Error::parse(*offset, format!("object {ch:?} placed twice")));
                        }
                    }
                    other => return Err(Error::parse(*offset, format!("unexpected map character {other:?}"))),
                }
            }
        }
        let mut objects = Vec::with_capacity(declared.len());
        for (d, cell) in declared.iter().zip(placed) {
            let cell = cell.ok_or_else(|| Error::parse(d.3, format!("object {:?} is not on the map", d.0)))?;
            objects.push(GridObject {
                cell,
                reward: d.1,
                kind: d.2,
            });
        }
        if objects.iter().enumerate().any(|(i, _)| declared[i].0 != (b'a' + i as u8) as char) {
            return Err(Error::parse(0, "object letters must be contiguous starting at 'a'"));
        }
        let spec = GridSpec {
            width,
            height,
            walls,
            objects,
            start_cells,
            gamma,
            slip_prob,
        };
        spec.validate().map_err(|e| Error::parse(map.offset, e.to_string()))?;
        Ok(spec)
    }
}

/// A distribution over grid layouts for meta-training.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    pub width: (usize, usize),
    pub height: (usize, usize),
    pub wall_density: (f64, f64),
    pub num_objects: (usize, usize),
    pub reward_values: Vec<f64>,
    /// Probability that a sampled object is consumable rather than respawning.
    pub consume_prob: f64,
    pub slip_prob: (f64, f64),
    pub gamma: f64,
    pub max_attempts: usize,
}

impl Default for GridDistribution {
    fn default() -> Self {
        Self {
            width: (4, 8),
            height: (4, 8),
            wall_density: (0.0, 0.2),
            num_objects: (1, 3),
            reward_values: vec![0.25, 0.5, 1.0],
            consume_prob: 0.0,
            slip_prob: (0.0, 0.1),
            gamma: DEFAULT_GAMMA,
            max_attempts: 1000,
        }
    }
}

impl GridDistribution {
    /// Fixed-size grids, all other settings default.
    pub fn square(side: usize) -> Self {
        Self {
            width: (side, side),
            height: (side, side),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width.0 >= 1
            && self.width.0 <= self.width.1
            && self.height.0 >= 1
            && self.height.0 <= self.height.1
            && self.width.1 * self.height.1 <= MAX_STATES
            && 0.0 <= self.wall_density.0
            && self.wall_density.0 <= self.wall_density.1
            && self.wall_density.1 < 1.0
            && self.num_objects.0 >= 1
            && self.num_objects.0 <= self.num_objects.1
            && self.num_objects.1 <= MAX_OBJECTS
            && !self.reward_values.is_empty()
            && self.reward_values.iter().all(|r| (0.0..=1.0).contains(r))
            && self.reward_values.iter().any(|&r| r > 0.0)
            && (0.0..=1.0).contains(&self.consume_prob)
            && 0.0 <= self.slip_prob.0
            && self.slip_prob.0 <= self.slip_prob.1
            && self.slip_prob.1 < 1.0
            && (0.0..1.0).contains(&self.gamma)
            && self.max_attempts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid grid distribution {self:?}")))
        }
    }
}

fn uniform_usize(rng: &mut rng::Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn uniform_f64(rng: &mut rng::Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Samples a valid layout, rejecting draws until validation passes.
pub fn sample_task(dist: &GridDistribution, seed: u64) -> Result<GridSpec> {
    dist.validate()?;
    let mut rng = rng::stream(seed, &[0x6772_6964]);
    for _ in 0..dist.max_attempts {
        let width = uniform_usize(&mut rng, dist.width);
        let height = uniform_usize(&mut rng, dist.height);
        let density = uniform_f64(&mut rng, dist.wall_density);
        let mut walls = BTreeSet::new();
        let mut free = Vec::new();
        for row in 0..height {
            for col in 0..width {
                if rng.random::<f64>() < density {
                    walls.insert(Cell::new(row, col));
                } else {
                    free.push(Cell::new(row, col));
                }
            }
        }
        let wanted = uniform_usize(&mut rng, dist.num_objects);
        if free.len() < wanted + 1 {
            continue;
        }
        // Partial Fisher-Yates: the first `wanted + 1` cells become objects and the start.
        for i in 0..=wanted {
            let j = rng.random_range(i..free.len());
            free.swap(i, j);
        }
        let objects: Vec<GridObject> = free[..wanted]
            .iter()
            .map(|&cell| {
                let reward = dist.reward_values[rng.random_range(0..dist.reward_values.len())];
                let kind = if rng.random::<f64>() < dist.consume_prob {
                    ObjectKind::Consume
                } else {
                    ObjectKind::Respawn
                };
                GridObject { cell, reward, kind }
            })
            .collect();
        let spec = GridSpec {
            width,
            height,
            walls,
            objects,
            start_cells: BTreeSet::from([free[wanted]]),
            gamma: dist.gamma,
            slip_prob: uniform_f64(&mut rng, dist.slip_prob),
        };
        if spec.validate().is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::Validation(format!(
        "no valid grid after {} attempts",
        dist.max_attempts
    )))
}

const HELD_OUT: [(&str, &str); 5] = [
    ("open-field", include_str!("../maps/open-field.grid")),
    ("two-rooms", include_str!("../maps/two-rooms.grid")),
    ("four-rooms", include_str!("../maps/four-rooms.grid")),
    ("zigzag", include_str!("../maps/zigzag.grid")),
    ("bottleneck", include_str!("../maps/bottleneck.grid")),
];

/// The shipped evaluation layouts, in a fixed order. They are larger than
/// anything the default distribution samples.
pub fn held_out_configs() -> Vec<(String, GridSpec)> {
    HELD_OUT
        .iter()
        .map(|(name, text)| {
            let spec = GridSpec::from_text(text).unwrap_or_else(|e| panic!("shipped map {name} is invalid: {e}"));
            (name.to_string(), spec)
        })
        .collect()
}

pub fn held_out_names() -> Vec<&'static str> {
    HELD_OUT.iter().map(|(n, _)| *n).collect()
}

pub fn held_out(name: &str) -> Option<GridSpec> {
    held_out_configs().into_iter().find(|(n, _)| n == name).map(|(_, s)| s)
}
