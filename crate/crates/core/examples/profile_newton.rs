use bolab_core::blackoil::StepContext;
use bolab_core::grid::{pv_norm_4n, Grid};
use bolab_core::sim::{gen_dataset, DatasetConfig, Simulator};
use std::time::Instant;

fn main() {
    let grid = Grid::new(16, 16, 4, 50.0, 50.0, 20.0).unwrap();
    let sim = Simulator::new(grid);
    let mut cfg = DatasetConfig::desk_defaults(&grid, 7);
    cfg.n_members = 32;
    cfg.t_steps = 20;
    let t0 = Instant::now();
    let ds = gen_dataset(&sim, &cfg).unwrap();
    println!("gen 32 x 20: {:.1} s ({} failed)", t0.elapsed().as_secs_f64(), ds.failed.len());
    let mut worst = 0.0_f64;
    let mut substepped = 0;
    let mut max_sg = 0.0_f64;
    let mut pr = (f64::INFINITY, 0.0_f64);
    for member in &ds.members {
        for step in 0..20 {
            let inputs = sim.inputs(&member.rock, &member.controls[step], StepContext { dt: ds.dt, t: 0.0 });
            let r = bolab_core::blackoil::residual(&member.states[step + 1], &member.states[step], &inputs).unwrap();
            let rn = pv_norm_4n(&r, &member.rock, &grid).unwrap();
            worst = worst.max(rn);
            if rn > 1e-9 { substepped += 1; }
            let s = &member.states[step + 1];
            max_sg = max_sg.max(s.sg.iter().cloned().fold(0.0_f64, f64::max));
            pr.0 = pr.0.min(s.pressure.iter().cloned().fold(f64::INFINITY, f64::min));
            pr.1 = pr.1.max(s.pressure.iter().cloned().fold(0.0_f64, f64::max));
        }
    }
    println!("worst stored residual {worst:.2e}; substepped {substepped}/640; max sg {max_sg:.3}; p [{:.0},{:.0}]", pr.0, pr.1);
}
