//! Keep ratio produced by each schedule as training progresses, including
//! the loss-aware schedule reacting to a loss spike.

use teachlab::curriculum::{compute_keep_ratio, ScheduleParams, ScheduleState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let loss_aware = ScheduleParams::loss_aware(2.0, 0.1);
    println!("loss-aware r = clamp(2 (L - 0.1), 0, 1)");
    for loss in [0.05, 0.1, 0.2, 0.35, 0.6, 1.2] {
        println!("  L = {loss:<5} r = {:.3}", compute_keep_ratio(&loss_aware, 1, Some(loss))?);
    }

    let linear = ScheduleParams::linear(1000);
    println!("\nlinear decay over 1000 steps");
    for step in [0, 250, 500, 750, 1000, 1500] {
        println!("  step {step:<5} r = {:.3}", compute_keep_ratio(&linear, step, None)?);
    }

    // A loss curve that falls, spikes at step 6 and recovers.
    let losses = [2.0, 1.1, 0.62, 0.41, 0.3, 0.22, 0.9, 0.5, 0.28, 0.18, 0.12, 0.09];
    let mut state = ScheduleState::default();
    println!("\nloss-aware on a spiking trace (r uses the previous step's loss)");
    for loss in losses {
        let r = state.next_keep_ratio(&loss_aware)?;
        println!("  step {:<3} r = {r:.3}  loss {loss}", state.step);
        state.observe(&loss_aware, loss)?;
    }
    Ok(())
}
