use bolab_core::blackoil::StepContext;
use bolab_core::grid::{pv_norm_4n, Grid};
use bolab_core::sim::{gen_dataset, DatasetConfig, Simulator};

fn main() {
    let grid = Grid::new(6, 6, 2, 50.0, 50.0, 20.0).unwrap();
    let sim = Simulator::new(grid);
    let mut cfg = DatasetConfig::desk_defaults(&grid, 17);
    cfg.n_members = 1;
    cfg.t_steps = 8;
    let ds = gen_dataset(&sim, &cfg).unwrap();
    let m = &ds.members[0];
    let vol = grid.cell_volume();
    let inv_w = |s: &bolab_core::grid::State| -> f64 {
        (0..s.n()).map(|i| m.rock.porosity[i] * vol * s.sw[i]).sum()
    };
    let mut qw = 0.0;
    for w in &m.controls[0].wells { qw += w.q_w * ds.dt; }
    for step in 0..8 {
        let inputs = sim.inputs(&m.rock, &m.controls[step], StepContext { dt: ds.dt, t: 0.0 });
        let r = bolab_core::blackoil::residual(&m.states[step+1], &m.states[step], &inputs).unwrap();
        let rn = pv_norm_4n(&r, &m.rock, &grid).unwrap();
        let d = inv_w(&m.states[step+1]) - inv_w(&m.states[step]);
        let s = &m.states[step+1];
        let minsw = s.sw.iter().cloned().fold(f64::INFINITY, f64::min);
        let minsg = s.sg.iter().cloned().fold(f64::INFINITY, f64::min);
        let maxsw = s.sw.iter().cloned().fold(0.0_f64, f64::max);
        println!("step {step}: resid {rn:.1e} dPVw-q {:+.1} | min sw {minsw:.3} min sg {minsg:.2e} max sw {maxsw:.3}", d - qw);
    }
}
