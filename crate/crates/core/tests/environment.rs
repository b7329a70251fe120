use mdlc_core::checks::{environment_conformance, fixture_walls, MAP_FIXTURE};
use mdlc_core::env::{optimal_return, Cell, ExperimentKind, FourRooms, TaskSpec};
use mdlc_core::RngStream;

#[test]
fn exhaustive_transition_conformance() {
    let rep = environment_conformance().unwrap();
    assert_eq!(rep.free_cells, 104);
    assert!(rep.passed(), "{:#?}", rep.mismatches);
}

#[test]
fn fixture_shape() {
    let walls = fixture_walls(MAP_FIXTURE).unwrap();
    assert!(!walls[2][5] && walls[0][5]);
    assert!(fixture_walls("...\n").is_err());
}

#[test]
fn contingency_swap_is_symmetric() {
    let env = FourRooms::new();
    let task = TaskSpec::contingency_change(2);
    let (a, b) = (Cell::new(0, 0), Cell::new(10, 10));
    let start = Cell::new(2, 2);
    let (s1, _) = env.reset_at(&task, start, a);
    let (s2, _) = env.reset_at(&task, start, b);
    assert_eq!((s1.goal, s1.advertised_goal), (s2.advertised_goal, s2.goal));
}

#[test]
fn resets_are_seed_deterministic_and_stay_in_phase_rooms() {
    let env = FourRooms::new();
    let task = TaskSpec::for_phase(ExperimentKind::GoalGeneralization, env.map(), 1);
    let mut r1 = RngStream::new(5);
    let mut r2 = RngStream::new(5);
    for _ in 0..200 {
        let (a, _) = env.reset(&task, &mut r1).unwrap();
        let (b, _) = env.reset(&task, &mut r2).unwrap();
        assert_eq!((a.agent, a.goal), (b.agent, b.goal));
        assert!(task.goal_candidates.contains(&a.goal) && a.agent != a.goal);
    }
}

#[test]
fn corner_to_corner_fits_in_the_long_cap_only() {
    let env = FourRooms::new();
    let d = env.map().shortest_path_len(Cell::new(0, 0), Cell::new(10, 10)).unwrap();
    let expect = |cap: usize| if d <= cap { 50.0 } else { 0.0 };
    for cap in [0, 25, 100] {
        let want = if cap == 0 { 0.0 } else { expect(cap) };
        assert_eq!(optimal_return(env.map(), Cell::new(0, 0), Cell::new(10, 10), cap).unwrap(), want);
    }
}
