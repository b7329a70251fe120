//! Self-checks shared by the test suites and the acceptance run: layer
//! gradient checks against central differences and an exhaustive
//! environment conformance sweep against the map fixture.

use crate::agents::{build_a2c_loss, collect_episode, teacher_forced, AgentConfig, MethodKind, Trajectory};
use crate::autodiff::{finite_diff_check, finite_diff_check_steps, RngStream, Tape, Tensor, Var};
use crate::env::{Cell, ExperimentKind, FourRooms, Observation, TaskSpec, HEIGHT, N_ACTIONS, WIDTH};
use crate::error::{Error, Result};
use crate::policy::{gate_forward, CategoricalDist, ForwardMode, Linear, LstmCell, PolicyArch, PolicyParams};

/// Canonical map, rows top to bottom, `#` = wall.
pub const MAP_FIXTURE: &str = include_str!("../fixtures/fourrooms.txt");

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_STEP: f64 = 1e-5;
/// Log-variances sit near −10 with gradients around 1e-8; a wider step keeps
/// roundoff below the relative tolerance.
pub const LOG_VARIANCE_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub name: String,
    pub max_rel_error: f64,
}

fn named_check<F>(all: &[Tensor], names: &[String], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Var,
{
    let steps: Vec<f64> = names
        .iter()
        .map(|n| if n.ends_with("log_sigma2") { LOG_VARIANCE_STEP } else { GRADIENT_STEP })
        .collect();
    finite_diff_check_steps(
        |tape, vars| {
            let ts: Vec<Tensor> = vars.iter().map(|&v| tape.value(v).clone()).collect();
            f(tape, &ts)
        },
        all,
        &steps,
    )
}

fn load_linear(l: &Linear, ts: &[Tensor]) -> Linear {
    let mut l = l.clone();
    for (dst, src) in l.tensors_mut().into_iter().zip(ts) {
        *dst = src.clone();
    }
    l
}

fn load_policy(p: &PolicyParams, ts: &[Tensor]) -> PolicyParams {
    let mut p = p.clone();
    for (dst, src) in p.tensors_mut().into_iter().zip(ts) {
        *dst = src.clone();
    }
    p
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let n = tape.value(x).len();
    let w = tape.constant(Tensor::vector(RngStream::new(seed).normals(n)));
    tape.dot(x, w)
}

fn gate_check() -> Result<f64> {
    let obs = RngStream::new(1).normals(16);
    let kappa = Tensor::vector((0..16).map(|i| 0.02 - 0.003 * i as f64).collect());
    finite_diff_check(
        |tape, vars| {
            let o = tape.constant(Tensor::vector(obs.clone()));
            let y = gate_forward(tape, vars[0], 150.0, o).expect("matching widths");
            weighted_sum(tape, y, 2)
        },
        &[kappa],
        GRADIENT_STEP,
    )
}

fn dense_check(variational: bool, bias: bool) -> Result<f64> {
    let layer = Linear::init(5, 7, bias, variational, &mut RngStream::new(3));
    let x = RngStream::new(4).normals(7);
    let all: Vec<Tensor> = layer.tensors().into_iter().cloned().collect();
    named_check(&all, &layer.tensor_names("dense"), |tape, ts| {
        let l = load_linear(&layer, ts);
        let mut key = 0;
        let bound = l.bind(tape, &mut key, ForwardMode::Sample);
        let xv = tape.constant(Tensor::vector(x.clone()));
        let y = bound.apply(tape, xv, &mut RngStream::new(5));
        let y = tape.tanh(y);
        let s = weighted_sum(tape, y, 6);
        match bound.kl(tape) {
            Some(kl) => {
                let kl = tape.scale(kl, 1e-3);
                tape.add(s, kl)
            }
            None => s,
        }
    })
}

fn lstm_check(variational: bool) -> Result<f64> {
    let cell = LstmCell::init(6, 4, variational, &mut RngStream::new(7));
    let mut all: Vec<Tensor> = cell.input.tensors().into_iter().cloned().collect();
    let split = all.len();
    all.extend(cell.recurrent.tensors().into_iter().cloned());
    let mut names = cell.input.tensor_names("input");
    names.extend(cell.recurrent.tensor_names("recurrent"));
    let xs: Vec<Vec<f64>> = (0..3).map(|t| RngStream::new(10 + t).normals(6)).collect();
    named_check(&all, &names, |tape, ts| {
        let mut c = cell.clone();
        c.input = load_linear(&cell.input, &ts[..split]);
        c.recurrent = load_linear(&cell.recurrent, &ts[split..]);
        let mut key = 0;
        let bound = c.bind(tape, &mut key, ForwardMode::Sample);
        let mut rng = RngStream::new(8);
        let mut state = None;
        for x in &xs {
            let xv = tape.constant(Tensor::vector(x.clone()));
            state = Some(bound.step(tape, xv, state, &mut rng));
        }
        let s = state.expect("three steps");
        let a = weighted_sum(tape, s.h, 9);
        let b = weighted_sum(tape, s.c, 10);
        tape.add(a, b)
    })
}

/// A few steps of a goal-generalisation episode under `control`.
pub fn short_episode(control: &PolicyParams, seed: u64) -> Result<Trajectory> {
    let env = FourRooms::new();
    let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 1).with_step_cap(6);
    collect_episode(&env, &task, control, &mut RngStream::new(seed))
}

/// Full episode loss (policy, value, regulariser, weight KL) of `method`.
///
/// The value head is zeroed and held fixed: the policy term treats the
/// advantage as a constant, so only then is the loss an ordinary function
/// of the remaining parameters. The value head is a dense layer and is
/// covered by the dense checks.
fn episode_check(method: MethodKind) -> Result<f64> {
    let cfg = AgentConfig {
        hidden: 6,
        ..AgentConfig::default().with_method(method)
    };
    let arch = PolicyArch {
        hidden: 6,
        ..PolicyArch::default()
    }
    .variational(method.control_is_variational());
    let mut control = PolicyParams::init(&arch, &mut RngStream::new(11));
    let head = &mut control.value_head;
    head.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    head.bias.iter_mut().for_each(|b| b.data_mut().iter_mut().for_each(|v| *v = 0.0));
    head.log_sigma2.iter_mut().for_each(|s| s.data_mut().iter_mut().for_each(|v| *v = -60.0));
    let traj = short_episode(&control, 12)?;
    let defaults: Option<Vec<CategoricalDist>> = if method.has_default() {
        let mut rng = RngStream::new(13);
        let d = traj
            .steps
            .iter()
            .map(|_| {
                let p: Vec<f64> = (0..N_ACTIONS).map(|_| 0.2 + rng.uniform()).collect();
                let z: f64 = p.iter().sum();
                CategoricalDist::new(p.iter().map(|v| v / z).collect())
            })
            .collect::<Result<_>>()?;
        Some(d)
    } else {
        None
    };
    let frozen = control.value_head.tensors().len();
    let all: Vec<Tensor> = control.tensors().into_iter().cloned().collect();
    let free = all.len() - frozen;
    let names = control.tensor_names();
    named_check(&all[..free], &names[..free], |tape, ts| {
        let mut ts = ts.to_vec();
        ts.extend_from_slice(&all[free..]);
        let p = load_policy(&control, &ts);
        let bound = p.bind(tape, ForwardMode::Sample);
        let mut rng = RngStream::new(14);
        let steps = teacher_forced(tape, &bound, &traj, &mut rng).expect("finite forward");
        let wkl = bound.weight_kl(tape).map(|v| (v, 1e-3));
        build_a2c_loss(tape, &steps, &traj.steps, 0.5, defaults.as_deref(), wkl, &cfg)
            .expect("finite loss")
            .0
    })
}

/// Max relative error of every layer type and of each method's episode loss.
pub fn gradient_checks() -> Result<Vec<GradientCheck>> {
    let mut out = Vec::new();
    let mut push = |name: String, e: Result<f64>| -> Result<()> {
        out.push(GradientCheck {
            name,
            max_rel_error: e?,
        });
        Ok(())
    };
    push("gate".into(), gate_check())?;
    for (v, b) in [(false, true), (false, false), (true, true), (true, false)] {
        let kind = if v { "variational-dense" } else { "dense" };
        let tail = if b { "" } else { "-no-bias" };
        push(format!("{kind}{tail}"), dense_check(v, b))?;
    }
    push("lstm".into(), lstm_check(false))?;
    push("variational-lstm".into(), lstm_check(true))?;
    for m in MethodKind::ALL {
        push(format!("episode-loss-{m}"), episode_check(m))?;
    }
    Ok(out)
}

/// Wall layout parsed from the fixture text.
pub fn fixture_walls(text: &str) -> Result<Vec<Vec<bool>>> {
    let rows: Vec<Vec<bool>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().chars().map(|c| c == '#').collect())
        .collect();
    if rows.len() != HEIGHT || rows.iter().any(|r| r.len() != WIDTH) {
        return Err(Error::config(format!("map fixture must be {HEIGHT}x{WIDTH}")));
    }
    Ok(rows)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConformanceReport {
    pub free_cells: usize,
    pub cases: usize,
    pub mismatches: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.cases > 0
    }
}

/// Every (free cell, action) pair, once with the move target as the goal
/// and once with a distant goal, checked against an oracle built from the
/// fixture alone: next cell, reward, termination, wall flag and the full
/// observation.
pub fn environment_conformance() -> Result<ConformanceReport> {
    let walls = fixture_walls(MAP_FIXTURE)?;
    let wall = |r: isize, c: isize| r < 0 || c < 0 || r >= HEIGHT as isize || c >= WIDTH as isize || walls[r as usize][c as usize];
    let env = FourRooms::new();
    let mut rep = ConformanceReport::default();
    let fail = |rep: &mut ConformanceReport, msg: String| {
        if rep.mismatches.len() < 50 {
            rep.mismatches.push(msg);
        }
    };
    if env.map().to_ascii().lines().ne(MAP_FIXTURE.lines().filter(|l| !l.trim().is_empty())) {
        fail(&mut rep, "map differs from fixture".into());
    }
    let free: Vec<Cell> = (0..HEIGHT)
        .flat_map(|r| (0..WIDTH).map(move |c| Cell::new(r, c)))
        .filter(|c| !walls[c.row][c.col])
        .collect();
    rep.free_cells = free.len();
    let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 1);
    let deltas = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)];
    for &cell in &free {
        for (a, &(dr, dc)) in deltas.iter().enumerate() {
            let (tr, tc) = (cell.row as isize + dr, cell.col as isize + dc);
            let blocked = wall(tr, tc);
            let target = if blocked { cell } else { Cell::new(tr as usize, tc as usize) };
            let far = *free
                .iter()
                .rev()
                .find(|&&g| g != cell && g != target)
                .expect("map has free cells");
            let goals = if blocked { vec![far] } else { vec![target, far] };
            for goal in goals {
                for cap in [1usize, 100] {
                    rep.cases += 1;
                    let (s0, _) = env.reset_at(&task.clone().with_step_cap(cap), cell, goal);
                    let (s1, obs, out) = env.step(&s0, a)?;
                    let reached = target == goal;
                    let reward = if reached {
                        50.0
                    } else if blocked {
                        -1.0
                    } else {
                        0.0
                    };
                    let done = reached || cap == 1;
                    let tag = format!("cell ({},{}) action {a} goal ({},{}) cap {cap}", cell.row, cell.col, goal.row, goal.col);
                    if s1.agent != target {
                        fail(&mut rep, format!("{tag}: moved to {:?}, expected {target:?}", s1.agent));
                    }
                    if out.reward != reward || out.done != done || out.hit_wall != blocked || out.reached_goal != reached {
                        fail(&mut rep, format!("{tag}: outcome {out:?}"));
                    }
                    let mut want = [0.0; 16];
                    want[Observation::STATE_INDEX] = target.index() as f64 / 120.0;
                    let mut k = 1;
                    for wr in -1..=1 {
                        for wc in -1..=1 {
                            want[k] = if wall(target.row as isize + wr, target.col as isize + wc) { 1.0 } else { 0.0 };
                            k += 1;
                        }
                    }
                    want[10 + a] = 1.0;
                    want[Observation::PREV_REWARD] = reward;
                    want[Observation::GOAL_INDEX] = goal.index() as f64 / 120.0;
                    if obs.0.iter().zip(&want).any(|(x, y)| (x - y).abs() > 1e-12) {
                        fail(&mut rep, format!("{tag}: observation {:?}", obs.0));
                    }
                    if !done && env.step(&s1, a).is_err() {
                        fail(&mut rep, format!("{tag}: episode ended early"));
                    }
                    if done && env.step(&s1, a).is_ok() {
                        fail(&mut rep, format!("{tag}: step after done accepted"));
                    }
                }
            }
        }
    }
    for &cell in &free {
        if env.map().distances(cell).iter().flatten().count() != free.len() {
            fail(&mut rep, format!("({},{}) does not reach every free cell", cell.row, cell.col));
        }
    }
    if env.step(&env.reset_at(&task, free[0], free[1]).0, N_ACTIONS).is_ok() {
        fail(&mut rep, "out-of-range action accepted".into());
    }
    Ok(rep)
}
