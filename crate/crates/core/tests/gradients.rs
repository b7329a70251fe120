use mdlc_core::checks::{gradient_checks, short_episode, GRADIENT_TOLERANCE};
use mdlc_core::policy::{ForwardMode, PolicyArch, PolicyParams};
use mdlc_core::{agents::teacher_forced, RngStream, Tape};

#[test]
fn every_layer_and_episode_loss_matches_finite_differences() {
    let report = gradient_checks().unwrap();
    assert_eq!(report.len(), 13);
    for c in &report {
        assert!(c.max_rel_error < GRADIENT_TOLERANCE, "{}: {:e}", c.name, c.max_rel_error);
    }
}

#[test]
fn tape_replay_reproduces_forward_values() {
    let arch = PolicyArch {
        hidden: 6,
        ..PolicyArch::default()
    }
    .variational(true);
    let control = PolicyParams::init(&arch, &mut RngStream::new(21));
    let traj = short_episode(&control, 22).unwrap();
    let mut tape = Tape::new();
    let bound = control.bind(&mut tape, ForwardMode::Sample);
    teacher_forced(&mut tape, &bound, &traj, &mut RngStream::new(23)).unwrap();
    let replayed = tape.replay();
    assert_eq!(replayed.len(), tape.len());
    for (a, b) in replayed.iter().zip(tape.values()) {
        assert_eq!(a.data(), b.data());
    }
}
