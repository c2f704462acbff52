//! Dataset persistence: members as tensor files plus an index CSV.

use crate::tensorfile::{read_tensor, write_tensor};
use anyhow::{bail, Context, Result};
use bolab_core::blackoil::{Well, WellControls, WellKind};
use bolab_core::grid::{Grid, RockFields, State};
use bolab_core::sim::{Dataset, Member};
use std::path::Path;

pub fn save_dataset(dir: &Path, dataset: &Dataset, grid: &Grid) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (nx, ny, nz) = (grid.nx as u64, grid.ny as u64, grid.nz as u64);
    for (m, member) in dataset.members.iter().enumerate() {
        // States: (T+1, 4, nx, ny, nz) in [p | Sw | So | Sg] block order.
        let t1 = member.states.len() as u64;
        let mut data = Vec::new();
        for s in &member.states {
            data.extend_from_slice(&s.pressure);
            data.extend_from_slice(&s.sw);
            data.extend_from_slice(&s.so);
            data.extend_from_slice(&s.sg);
        }
        write_tensor(
            &dir.join(format!("member_{m:03}_states.botf")),
            &[t1, 4, nx, ny, nz],
            &data,
        )?;
        // Rock: (3, nx, ny, nz) as [porosity | log_perm | fault_mult].
        let mut rock = Vec::new();
        rock.extend_from_slice(&member.rock.porosity);
        rock.extend_from_slice(&member.rock.log_perm);
        rock.extend_from_slice(&member.rock.fault_mult);
        write_tensor(
            &dir.join(format!("member_{m:03}_rock.botf")),
            &[3, nx, ny, nz],
            &rock,
        )?;
        // Wells: (T, n_wells, 5) rows [cell, kind, q_o, q_w, q_g].
        let n_wells = member.controls.first().map(|c| c.wells.len()).unwrap_or(0);
        let mut wells = Vec::new();
        for ctrl in &member.controls {
            if ctrl.wells.len() != n_wells {
                bail!("variable well counts within a member are not supported");
            }
            for w in &ctrl.wells {
                wells.push(w.cell as f64);
                wells.push(match w.kind {
                    WellKind::Injector => 0.0,
                    WellKind::Producer => 1.0,
                });
                wells.push(w.q_o);
                wells.push(w.q_w);
                wells.push(w.q_g);
            }
        }
        write_tensor(
            &dir.join(format!("member_{m:03}_wells.botf")),
            &[member.controls.len() as u64, n_wells as u64, 5],
            &wells,
        )?;
    }
    let mut index = String::from("member,states_file,rock_file,wells_file\n");
    for m in 0..dataset.members.len() {
        index.push_str(&format!(
            "{m},member_{m:03}_states.botf,member_{m:03}_rock.botf,member_{m:03}_wells.botf\n"
        ));
    }
    std::fs::write(dir.join("index.csv"), index)?;
    std::fs::write(dir.join("dt.txt"), format!("{}\n", dataset.dt))?;
    Ok(())
}

pub fn load_dataset(dir: &Path, grid: &Grid) -> Result<Dataset> {
    let index = std::fs::read_to_string(dir.join("index.csv"))
        .with_context(|| format!("reading {}", dir.join("index.csv").display()))?;
    let dt: f64 = std::fs::read_to_string(dir.join("dt.txt"))?
        .trim()
        .parse()
        .context("parsing dt.txt")?;
    let n = grid.n_cells();
    let mut members = Vec::new();
    for line in index.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("malformed index row: {line}");
        }
        let (ext_s, states_flat) = read_tensor(&dir.join(parts[1]))?;
        if ext_s.len() != 5 || ext_s[1] != 4 {
            bail!("states tensor has unexpected shape {ext_s:?}");
        }
        let t1 = ext_s[0] as usize;
        let mut states = Vec::with_capacity(t1);
        for step in 0..t1 {
            let base = step * 4 * n;
            states.push(State::new(
                states_flat[base..base + n].to_vec(),
                states_flat[base + n..base + 2 * n].to_vec(),
                states_flat[base + 2 * n..base + 3 * n].to_vec(),
                states_flat[base + 3 * n..base + 4 * n].to_vec(),
            )?);
        }
        let (ext_r, rock_flat) = read_tensor(&dir.join(parts[2]))?;
        if ext_r.first() != Some(&3) {
            bail!("rock tensor has unexpected shape {ext_r:?}");
        }
        let rock = RockFields {
            porosity: rock_flat[..n].to_vec(),
            log_perm: rock_flat[n..2 * n].to_vec(),
            fault_mult: rock_flat[2 * n..3 * n].to_vec(),
            kv_kh: 0.1,
        };
        let (ext_w, wells_flat) = read_tensor(&dir.join(parts[3]))?;
        if ext_w.len() != 3 || ext_w[2] != 5 {
            bail!("wells tensor has unexpected shape {ext_w:?}");
        }
        let t = ext_w[0] as usize;
        let n_wells = ext_w[1] as usize;
        let mut controls = Vec::with_capacity(t);
        for step in 0..t {
            let mut wells = Vec::with_capacity(n_wells);
            for k in 0..n_wells {
                let base = (step * n_wells + k) * 5;
                wells.push(Well {
                    cell: wells_flat[base] as usize,
                    kind: if wells_flat[base + 1] == 0.0 {
                        WellKind::Injector
                    } else {
                        WellKind::Producer
                    },
                    q_o: wells_flat[base + 2],
                    q_w: wells_flat[base + 3],
                    q_g: wells_flat[base + 4],
                });
            }
            controls.push(WellControls { wells });
        }
        if states.len() != controls.len() + 1 {
            bail!(
                "member horizon mismatch: {} states vs {} controls",
                states.len(),
                controls.len()
            );
        }
        members.push(Member {
            rock,
            controls,
            states,
        });
    }
    if members.is_empty() {
        bail!("dataset index lists no members");
    }
    Ok(Dataset {
        members,
        dt,
        failed: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bolab_core::sim::{gen_dataset, DatasetConfig, Simulator};

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let sim = Simulator::new(Grid::new(4, 4, 1, 50.0, 50.0, 20.0).unwrap());
        let mut cfg = DatasetConfig::desk_defaults(&sim.grid, 3);
        cfg.n_members = 2;
        cfg.t_steps = 2;
        let ds = gen_dataset(&sim, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &sim.grid).unwrap();
        let back = load_dataset(dir.path(), &sim.grid).unwrap();
        assert_eq!(back.members.len(), ds.members.len());
        assert_eq!(back.dt, ds.dt);
        for (a, b) in back.members.iter().zip(&ds.members) {
            assert_eq!(a.rock.porosity, b.rock.porosity);
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert_eq!(sa.pressure, sb.pressure);
                assert_eq!(sa.sg, sb.sg);
            }
            assert_eq!(a.controls[0].wells, b.controls[0].wells);
        }
    }
}
