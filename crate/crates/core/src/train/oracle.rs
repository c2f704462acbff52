//! The Jacobian-chain oracle: assembles the autoregressive gradient from
//! dense finite-difference Jacobians, term by term. Independent of the tape
//! — it exercises only the models' forward evaluations.

use super::sequence::SequenceModel;
use crate::autodiff::{Tape, Tensor};
use crate::error::{CoreError, Result};

/// Which parameter-to-loss chains the assembled sum keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainFilter {
    /// Every chain: the exact gradient.
    All,
    /// Only chains whose start and end steps share a block window of size K.
    SameWindow(usize),
    /// Only chains spanning fewer than K steps.
    MaxLen(usize),
}

impl ChainFilter {
    fn keeps(&self, m: usize, n: usize) -> bool {
        match self {
            ChainFilter::All => true,
            ChainFilter::SameWindow(k) => m / k == n / k,
            ChainFilter::MaxLen(k) => n - m < *k,
        }
    }
}

struct FlatParams {
    tensors: Vec<Tensor>,
    sizes: Vec<usize>,
}

impl FlatParams {
    fn new(tensors: Vec<Tensor>) -> Self {
        let sizes = tensors.iter().map(|t| t.numel()).collect();
        Self { tensors, sizes }
    }

    fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn with_flat(&self, flat: &[f64]) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (t, &sz) in self.tensors.iter().zip(&self.sizes) {
            let mut copy = t.clone();
            copy.data_mut().copy_from_slice(&flat[offset..offset + sz]);
            out.push(copy);
            offset += sz;
        }
        out
    }

    fn unflatten_grad(&self, flat: &[f64]) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (t, &sz) in self.tensors.iter().zip(&self.sizes) {
            out.push(Tensor::new(t.shape().to_vec(), flat[offset..offset + sz].to_vec()).unwrap());
            offset += sz;
        }
        out
    }
}

/// Evaluates one step of the model numerically (forward only).
fn eval_step(
    model: &dyn SequenceModel,
    params: &[Tensor],
    state: &[f64],
    item: usize,
    step: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let ids: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let sid = tape.leaf(Tensor::from_vec(state.to_vec()));
    let out = model.step_on_tape(&mut tape, &ids, sid, item, step)?;
    Ok(tape.value(out).data().to_vec())
}

fn eval_loss(
    model: &dyn SequenceModel,
    params: &[Tensor],
    pred: &[f64],
    item: usize,
    step: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let _ids: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let pid = tape.leaf(Tensor::from_vec(pred.to_vec()));
    let l = model.loss_on_tape(&mut tape, pid, item, step)?;
    tape.value(l).item()
}

/// Assembles the gradient sum over retained chains: for each loss step n and
/// source step m, (dl/dx_{n+1}) (prod_{j=m+1}^{n} D_x G(x_j)) D_theta G(x_m),
/// with every factor from central finite differences. Guarded to tiny
/// instances.
pub fn jacobian_chain_oracle(
    model: &dyn SequenceModel,
    filter: ChainFilter,
) -> Result<Vec<Tensor>> {
    let d = model.state_dim();
    let t = model.horizon();
    if d > 64 || t > 8 {
        return Err(CoreError::Config(format!(
            "oracle guard: state dim {d} (<= 64) and T = {t} (<= 8) required"
        )));
    }
    let flat = FlatParams::new(model.params());
    let p_total = flat.total();
    let params = flat.tensors.clone();
    let scale = 1.0 / (model.batch_size() as f64 * t as f64);

    let mut grad = vec![0.0; p_total];
    for item in 0..model.batch_size() {
        // Reference rollout.
        let mut states = vec![model.initial_state(item)?];
        for step in 0..t {
            let next = eval_step(model, &params, states.last().unwrap(), item, step)?;
            states.push(next);
        }

        // D_x G at each step: d x d by central differences.
        let mut dx: Vec<Vec<f64>> = Vec::with_capacity(t);
        for step in 0..t {
            let x = &states[step];
            let mut jac = vec![0.0; d * d];
            for col in 0..d {
                let h = 1e-6 * (1.0 + x[col].abs());
                let mut hi = x.clone();
                hi[col] += h;
                let mut lo = x.clone();
                lo[col] -= h;
                let fhi = eval_step(model, &params, &hi, item, step)?;
                let flo = eval_step(model, &params, &lo, item, step)?;
                for row in 0..d {
                    jac[row * d + col] = (fhi[row] - flo[row]) / (2.0 * h);
                }
            }
            dx.push(jac);
        }

        // D_theta G at each step: d x P by central differences.
        let base_flat = flat.to_flat();
        let mut dtheta: Vec<Vec<f64>> = Vec::with_capacity(t);
        for step in 0..t {
            let x = &states[step];
            let mut jac = vec![0.0; d * p_total];
            for pc in 0..p_total {
                let h = 1e-6 * (1.0 + base_flat[pc].abs());
                let mut hi = base_flat.clone();
                hi[pc] += h;
                let mut lo = base_flat.clone();
                lo[pc] -= h;
                let phi = flat.with_flat(&hi);
                let plo = flat.with_flat(&lo);
                let fhi = eval_step(model, &phi, x, item, step)?;
                let flo = eval_step(model, &plo, x, item, step)?;
                for row in 0..d {
                    jac[row * p_total + pc] = (fhi[row] - flo[row]) / (2.0 * h);
                }
            }
            dtheta.push(jac);
        }

        // dl/dx_{n+1} at each step: 1 x d.
        let mut dloss: Vec<Vec<f64>> = Vec::with_capacity(t);
        for step in 0..t {
            let pred = &states[step + 1];
            let mut row = vec![0.0; d];
            for col in 0..d {
                let h = 1e-6 * (1.0 + pred[col].abs());
                let mut hi = pred.clone();
                hi[col] += h;
                let mut lo = pred.clone();
                lo[col] -= h;
                row[col] = (eval_loss(model, &params, &hi, item, step)?
                    - eval_loss(model, &params, &lo, item, step)?)
                    / (2.0 * h);
            }
            dloss.push(row);
        }

        // Assemble the retained chains.
        for n in 0..t {
            // Row vector v = dl/dx_{n+1}, propagated backwards through the
            // state Jacobians; at each m it is contracted with D_theta G.
            let mut v = dloss[n].clone();
            for m in (0..=n).rev() {
                if filter.keeps(m, n) {
                    let jt = &dtheta[m];
                    for pc in 0..p_total {
                        let mut acc = 0.0;
                        for row in 0..d {
                            acc += v[row] * jt[row * p_total + pc];
                        }
                        grad[pc] += scale * acc;
                    }
                }
                if m > 0 {
                    // v <- v * D_x G(x_m).
                    let jx = &dx[m];
                    let mut next = vec![0.0; d];
                    for col in 0..d {
                        let mut acc = 0.0;
                        for row in 0..d {
                            acc += v[row] * jx[row * d + col];
                        }
                        next[col] = acc;
                    }
                    v = next;
                }
            }
        }
    }
    Ok(flat.unflatten_grad(&grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::rel_err;
    use crate::train::sequence::{full_bptt_gradient, tbptt_gradient, TruncationMode};
    use crate::train::ScalarLinearModel;

    fn fixture() -> ScalarLinearModel {
        ScalarLinearModel::new(0.7, 0.25, 1.1, vec![1.0, 0.4, 0.9, 0.3, 0.6])
    }

    #[test]
    fn oracle_matches_closed_form_on_linear_fixture() {
        let m = fixture();
        let g = jacobian_chain_oracle(&m, ChainFilter::All).unwrap();
        let exact = m.exact_gradient();
        assert!(
            (g[0].data()[0] - exact).abs() < 1e-6 * exact.abs().max(1.0),
            "{} vs {exact}",
            g[0].data()[0]
        );
    }

    #[test]
    fn oracle_matches_full_bptt() {
        let m = fixture();
        let g = jacobian_chain_oracle(&m, ChainFilter::All).unwrap();
        let (full, _) = full_bptt_gradient(&m).unwrap();
        let err = rel_err(g[0].data(), full[0].data());
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn truncated_oracle_matches_tbptt_variants() {
        let m = fixture();
        for k in 1..=5 {
            let g = jacobian_chain_oracle(&m, ChainFilter::MaxLen(k)).unwrap();
            let (tb, _) = tbptt_gradient(&m, k, TruncationMode::ChainLength).unwrap();
            let err = rel_err(g[0].data(), tb[0].data());
            assert!(err < 1e-6, "chain-length K = {k}: rel err {err}");

            let g = jacobian_chain_oracle(&m, ChainFilter::SameWindow(k)).unwrap();
            let (tb, _) = tbptt_gradient(&m, k, TruncationMode::BlockWindow).unwrap();
            let err = rel_err(g[0].data(), tb[0].data());
            assert!(err < 1e-6, "block-window K = {k}: rel err {err}");
        }
    }
}
