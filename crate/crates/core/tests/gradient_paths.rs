//! Gradient-path equivalences on a tiny neural-operator instance: full BPTT,
//! its truncations, and the dense Jacobian-chain oracle must all agree.

use bolab_core::autodiff::fd::rel_err;
use bolab_core::autodiff::Tensor;
use bolab_core::blackoil::WellControls;
use bolab_core::fno::{ChannelStats, FnoConfig, OperatorParams};
use bolab_core::grid::{Grid, RockFields, State};
use bolab_core::sim::Member;
use bolab_core::train::{
    full_bptt_gradient, jacobian_chain_oracle, tbptt_gradient, ChainFilter, FnoSequenceModel,
    SequenceModel, TruncationMode,
};

/// N = 8 cells (2x2x2), d_v = 2, T = 3: the smallest instance with full
/// spatial structure.
fn tiny_instance() -> (Grid, FnoConfig, OperatorParams, ChannelStats, Member) {
    let grid = Grid::new(2, 2, 2, 1.0, 1.0, 1.0).unwrap();
    let cfg = FnoConfig {
        latent_width: 2,
        n_layers: 1,
        k_max: [1, 1, 1],
        mirror_pad: false,
        ..FnoConfig::default()
    };
    let stats = ChannelStats::identity();
    let params = OperatorParams::init(&cfg, &grid, &stats, 404).unwrap();
    let n = grid.n_cells();
    let rock = RockFields::uniform(&grid, 0.25, -1.0);
    // Hand-made admissible target trajectory; the gradient identities hold
    // for any fixed targets.
    let mut states = Vec::new();
    for step in 0..4 {
        let mut s = State::uniform(n, 2.0 + step as f64 * 0.1, 0.3, 0.5, 0.2);
        for i in 0..n {
            s.pressure[i] += 0.05 * ((i + step) as f64 * 0.9).sin();
            s.sw[i] += 0.03 * ((i * 3 + step) as f64 * 0.4).cos();
            s.so[i] -= 0.03 * ((i * 3 + step) as f64 * 0.4).cos();
        }
        states.push(s);
    }
    let member = Member {
        rock,
        controls: vec![WellControls::none(); 3],
        states,
    };
    (grid, cfg, params, stats, member)
}

fn model(
    grid: &Grid,
    cfg: &FnoConfig,
    params: &OperatorParams,
    stats: &ChannelStats,
    members: &[Member],
) -> FnoSequenceModel<'static> {
    // Leak the member slice: test-lifetime convenience.
    let leaked: &'static [Member] = Box::leak(members.to_vec().into_boxed_slice());
    FnoSequenceModel::new(
        cfg.clone(),
        params.clone(),
        stats.clone(),
        *grid,
        leaked,
        1.0,
        3,
        [1.0; 4],
    )
    .unwrap()
}

fn flat(tensors: &[Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().to_vec()).collect()
}

#[test]
fn full_bptt_matches_jacobian_chain_oracle_on_tiny_fno() {
    let (grid, cfg, params, stats, member) = tiny_instance();
    let m = model(&grid, &cfg, &params, &stats, std::slice::from_ref(&member));
    assert_eq!(m.state_dim(), 32);
    let (g, _) = full_bptt_gradient(&m).unwrap();
    let oracle = jacobian_chain_oracle(&m, ChainFilter::All).unwrap();
    let err = rel_err(&flat(&g), &flat(&oracle));
    assert!(err < 1e-6, "full BPTT vs oracle rel err {err}");
}

#[test]
fn tbptt_windows_match_truncated_oracle_on_tiny_fno() {
    let (grid, cfg, params, stats, member) = tiny_instance();
    let m = model(&grid, &cfg, &params, &stats, std::slice::from_ref(&member));
    for k in 1..=3 {
        let (g, _) = tbptt_gradient(&m, k, TruncationMode::BlockWindow).unwrap();
        let oracle = jacobian_chain_oracle(&m, ChainFilter::SameWindow(k)).unwrap();
        let err = rel_err(&flat(&g), &flat(&oracle));
        assert!(err < 1e-6, "block window K = {k}: rel err {err}");

        let (g, _) = tbptt_gradient(&m, k, TruncationMode::ChainLength).unwrap();
        let oracle = jacobian_chain_oracle(&m, ChainFilter::MaxLen(k)).unwrap();
        let err = rel_err(&flat(&g), &flat(&oracle));
        assert!(err < 1e-6, "chain length K = {k}: rel err {err}");
    }
}

#[test]
fn tbptt_at_full_window_equals_exact_gradient_on_tiny_fno() {
    let (grid, cfg, params, stats, member) = tiny_instance();
    let m = model(&grid, &cfg, &params, &stats, std::slice::from_ref(&member));
    let (full, full_loss) = full_bptt_gradient(&m).unwrap();
    for mode in [TruncationMode::BlockWindow, TruncationMode::ChainLength] {
        let (g, loss) = tbptt_gradient(&m, 3, mode).unwrap();
        let err = rel_err(&flat(&g), &flat(&full));
        assert!(err < 1e-10, "{mode:?}: rel err {err}");
        assert!((loss - full_loss).abs() < 1e-12);
    }
}
