use super::params::{CgrmParams, FcGruParams, GcGruParams, GraphConvParams};
use super::{FcRecurrence, ModelConfig, ModelGraphs};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// An input together with its neighbor aggregates `W·I` for every active
/// graph. Aggregating once lets all gates reuse the sparse products.
#[derive(Clone, Copy, Debug)]
pub struct Aggregated {
    pub input: Var,
    pub physical: Option<Var>,
    pub similarity: Option<Var>,
    pub correlation: Option<Var>,
}

/// Recurrent cells recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeCells<'a, T> {
    pub graphs: &'a ModelGraphs<T>,
    pub global_branch: bool,
    pub fc_recurrence: FcRecurrence,
}

fn check_finite<T: Scalar>(tape: &Tape<'_, T>, v: Var, what: &str) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::Numerics(format!("non-finite {what}")))
    }
}

impl<'a, T: Scalar> TapeCells<'a, T> {
    pub fn new(graphs: &'a ModelGraphs<T>, config: &ModelConfig) -> Self {
        Self { graphs, global_branch: config.global_branch, fc_recurrence: config.fc_recurrence }
    }

    pub fn aggregate(&self, tape: &mut Tape<'a, T>, input: Var) -> Result<Aggregated> {
        let g = self.graphs;
        if tape.value(input).rows() != g.n {
            return Err(Error::Shape(format!("input has {} rows for {} stations", tape.value(input).rows(), g.n)));
        }
        let mut agg = |w: &'a Option<crate::matrix::CsrMatrix<T>>| w.as_ref().map(|w| tape.spmm(w, input)).transpose();
        Ok(Aggregated {
            input,
            physical: agg(&g.physical)?,
            similarity: agg(&g.similarity)?,
            correlation: agg(&g.correlation)?,
        })
    }

    /// `I·Θ_l + W_p·I·Θ_p + W_s·I·Θ_s + W_c·I·Θ_c`
    pub fn conv(&self, tape: &mut Tape<'a, T>, a: &Aggregated, p: &GraphConvParams<Var>) -> Result<Var> {
        let mut out = tape.matmul(a.input, p.theta_l)?;
        for (agg, theta) in [(a.physical, p.theta_p), (a.similarity, p.theta_s), (a.correlation, p.theta_c)] {
            if let Some(agg) = agg {
                let term = tape.matmul(agg, theta)?;
                out = tape.add(out, term)?;
            }
        }
        Ok(out)
    }

    pub fn gc_gru(
        &self,
        tape: &mut Tape<'a, T>,
        x: &Aggregated,
        h: &Aggregated,
        p: &GcGruParams<Var>,
    ) -> Result<Var> {
        let gate = |tape: &mut Tape<'a, T>, px, ph, b, name| -> Result<Var> {
            let u = self.conv(tape, x, px)?;
            let w = self.conv(tape, h, ph)?;
            let s = tape.add(u, w)?;
            let s = tape.add_row(s, b)?;
            let g = tape.sigmoid(s);
            check_finite(tape, g, name)?;
            Ok(g)
        };
        let r = gate(tape, &p.rx, &p.rh, p.b_r, "reset gate (GC-GRU)")?;
        let z = gate(tape, &p.zx, &p.zh, p.b_z, "update gate (GC-GRU)")?;
        let nh = self.conv(tape, h, &p.nh)?;
        let nh = tape.add_row(nh, p.b_n)?;
        let gated = tape.mul(r, nh)?;
        let nx = self.conv(tape, x, &p.nx)?;
        let pre = tape.add(nx, gated)?;
        let cand = tape.tanh(pre);
        check_finite(tape, cand, "candidate state (GC-GRU)")?;
        let keep = tape.mul(z, h.input)?;
        let omz = tape.one_minus(z);
        let fresh = tape.mul(omz, cand)?;
        let out = tape.add(fresh, keep)?;
        check_finite(tape, out, "hidden state (GC-GRU)")?;
        Ok(out)
    }

    /// Network-wide GRU over flattened embeddings. In `Fused` mode the
    /// recurrent slot receives the embedding of `h_fused`; in `Own` mode it
    /// receives `g_prev` and the hidden embedding is unused.
    pub fn fc_gru(
        &self,
        tape: &mut Tape<'a, T>,
        x: Var,
        h_fused: Var,
        g_prev: Var,
        p: &FcGruParams<Var>,
    ) -> Result<Var> {
        let flat = |tape: &mut Tape<'a, T>, v: Var| {
            let m = tape.value(v);
            let len = m.len();
            tape.reshape(v, 1, len)
        };
        let xf = flat(tape, x)?;
        let ie = tape.matmul(xf, p.embed_input)?;
        let ie = tape.add_row(ie, p.embed_input_bias)?;
        let state = match self.fc_recurrence {
            FcRecurrence::Fused => {
                let hf = flat(tape, h_fused)?;
                let he = tape.matmul(hf, p.embed_hidden)?;
                tape.add_row(he, p.embed_hidden_bias)?
            }
            FcRecurrence::Own => g_prev,
        };
        let gate = |tape: &mut Tape<'a, T>, wx, wh, b, name| -> Result<Var> {
            let u = tape.matmul(ie, wx)?;
            let w = tape.matmul(state, wh)?;
            let s = tape.add(u, w)?;
            let s = tape.add_row(s, b)?;
            let g = tape.sigmoid(s);
            check_finite(tape, g, name)?;
            Ok(g)
        };
        let r = gate(tape, p.w_rx, p.w_rh, p.b_r, "reset gate (FC-GRU)")?;
        let z = gate(tape, p.w_zx, p.w_zh, p.b_z, "update gate (FC-GRU)")?;
        let nh = tape.matmul(state, p.w_nh)?;
        let nh = tape.add_row(nh, p.b_n)?;
        let gated = tape.mul(r, nh)?;
        let nx = tape.matmul(ie, p.w_nx)?;
        let pre = tape.add(nx, gated)?;
        let cand = tape.tanh(pre);
        check_finite(tape, cand, "candidate state (FC-GRU)")?;
        let keep = tape.mul(z, state)?;
        let omz = tape.one_minus(z);
        let fresh = tape.mul(omz, cand)?;
        tape.add(fresh, keep)
    }

    /// One collaborative step. Returns the fused per-station state and the
    /// global state; without the global branch the fused state is the local
    /// one and `g_prev` passes through.
    pub fn cgrm(
        &self,
        tape: &mut Tape<'a, T>,
        x: Var,
        h_prev: Var,
        g_prev: Var,
        p: &CgrmParams<Var>,
    ) -> Result<(Var, Var)> {
        let xa = self.aggregate(tape, x)?;
        let ha = self.aggregate(tape, h_prev)?;
        let local = self.gc_gru(tape, &xa, &ha, &p.gc)?;
        if !self.global_branch {
            return Ok((local, g_prev));
        }
        let global = self.fc_gru(tape, x, h_prev, g_prev, &p.fc)?;
        let wide = tape.broadcast_rows(global, self.graphs.n)?;
        let cat = tape.concat_cols(local, wide)?;
        let fused = tape.matmul(cat, p.fuse)?;
        let fused = tape.add_row(fused, p.fuse_bias)?;
        check_finite(tape, fused, "fused state")?;
        Ok((fused, global))
    }
}

fn check_kernels<T: Scalar>(p: &GraphConvParams<Matrix<T>>) -> Result<()> {
    let s = p.theta_l.shape();
    if [&p.theta_p, &p.theta_s, &p.theta_c].iter().any(|k| k.shape() != s) {
        return Err(Error::Shape("graph convolution kernels differ in shape".into()));
    }
    Ok(())
}

/// Multi-graph convolution of `[N, d_in]` features into `[N, d_out]`.
pub fn graph_conv<T: Scalar>(
    input: &Matrix<T>,
    graphs: &ModelGraphs<T>,
    params: &GraphConvParams<Matrix<T>>,
) -> Result<Matrix<T>> {
    check_kernels(params)?;
    let mut tape = Tape::new();
    let cells = TapeCells { graphs, global_branch: false, fc_recurrence: FcRecurrence::Fused };
    let p = params.map(&mut |m| tape.constant_ref(m));
    let x = tape.constant_ref(input);
    let a = cells.aggregate(&mut tape, x)?;
    let out = cells.conv(&mut tape, &a, &p)?;
    Ok(tape.value(out).clone())
}

pub fn gc_gru_step<T: Scalar>(
    input: &Matrix<T>,
    h_prev: &Matrix<T>,
    graphs: &ModelGraphs<T>,
    params: &GcGruParams<Matrix<T>>,
) -> Result<Matrix<T>> {
    for k in [&params.rx, &params.rh, &params.zx, &params.zh, &params.nx, &params.nh] {
        check_kernels(k)?;
    }
    let mut tape = Tape::new();
    let cells = TapeCells { graphs, global_branch: false, fc_recurrence: FcRecurrence::Fused };
    let p = params.map(&mut |m| tape.constant_ref(m));
    let x = tape.constant_ref(input);
    let h = tape.constant_ref(h_prev);
    let xa = cells.aggregate(&mut tape, x)?;
    let ha = cells.aggregate(&mut tape, h)?;
    let out = cells.gc_gru(&mut tape, &xa, &ha, &p)?;
    Ok(tape.value(out).clone())
}

/// Returns the `[1, d]` global state.
pub fn fc_gru_step<T: Scalar>(
    input: &Matrix<T>,
    h_prev_fused: &Matrix<T>,
    g_prev: &Matrix<T>,
    params: &FcGruParams<Matrix<T>>,
    recurrence: FcRecurrence,
) -> Result<Matrix<T>> {
    let graphs = ModelGraphs::isolated(input.rows());
    let mut tape = Tape::new();
    let cells = TapeCells { graphs: &graphs, global_branch: true, fc_recurrence: recurrence };
    let p = params.map(&mut |m| tape.constant_ref(m));
    let x = tape.constant_ref(input);
    let h = tape.constant_ref(h_prev_fused);
    let g = tape.constant_ref(g_prev);
    let out = cells.fc_gru(&mut tape, x, h, g, &p)?;
    Ok(tape.value(out).clone())
}

/// Returns `(fused [N, d], global [1, d])`.
pub fn cgrm_step<T: Scalar>(
    input: &Matrix<T>,
    h_prev: &Matrix<T>,
    g_prev: &Matrix<T>,
    graphs: &ModelGraphs<T>,
    params: &CgrmParams<Matrix<T>>,
    config: &ModelConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut tape = Tape::new();
    let cells = TapeCells::new(graphs, config);
    let p = params.map(&mut |m| tape.constant_ref(m));
    let x = tape.constant_ref(input);
    let h = tape.constant_ref(h_prev);
    let g = tape.constant_ref(g_prev);
    let (fused, global) = cells.cgrm(&mut tape, x, h, g, &p)?;
    Ok((tape.value(fused).clone(), tape.value(global).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::CsrMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn conv_params(rng: &mut ChaCha8Rng, din: usize, d: usize) -> GraphConvParams<Matrix<f64>> {
        GraphConvParams {
            theta_l: rand_m(rng, din, d),
            theta_p: rand_m(rng, din, d),
            theta_s: rand_m(rng, din, d),
            theta_c: rand_m(rng, din, d),
        }
    }

    fn gru_params(rng: &mut ChaCha8Rng, din: usize, d: usize) -> GcGruParams<Matrix<f64>> {
        GcGruParams {
            rx: conv_params(rng, din, d),
            rh: conv_params(rng, d, d),
            zx: conv_params(rng, din, d),
            zh: conv_params(rng, d, d),
            nx: conv_params(rng, din, d),
            nh: conv_params(rng, d, d),
            b_r: rand_m(rng, 1, d),
            b_z: rand_m(rng, 1, d),
            b_n: rand_m(rng, 1, d),
        }
    }

    fn swap_graph() -> ModelGraphs<f64> {
        let w = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        ModelGraphs::from_matrices(2, Some(w), None, None).unwrap()
    }

    fn ring_graphs(n: usize) -> ModelGraphs<f64> {
        let p = CsrMatrix::from_triplets(n, (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect()).unwrap();
        let s = CsrMatrix::from_triplets(n, (0..n).map(|i| (i, (i + 2) % n, 1.0)).collect()).unwrap();
        let c = CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect()).unwrap();
        ModelGraphs::from_matrices(n, Some(p), Some(s), Some(c)).unwrap()
    }

    #[test]
    fn self_loop_identity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_m(&mut rng, 4, 3);
        let mut p = conv_params(&mut rng, 3, 3);
        p.theta_l = Matrix::identity(3);
        let out = graph_conv(&x, &ModelGraphs::isolated(4), &p).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn pure_neighbor_pass_swaps_rows() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = GraphConvParams {
            theta_l: Matrix::zeros(2, 2),
            theta_p: Matrix::identity(2),
            theta_s: Matrix::zeros(2, 2),
            theta_c: Matrix::zeros(2, 2),
        };
        let out = graph_conv(&x, &swap_graph(), &p).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn mismatched_kernels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_m(&mut rng, 2, 3);
        let mut p = conv_params(&mut rng, 3, 2);
        p.theta_c = Matrix::zeros(3, 3);
        assert!(matches!(graph_conv(&x, &swap_graph(), &p), Err(Error::Shape(_))));
        let p = conv_params(&mut rng, 4, 2);
        assert!(matches!(graph_conv(&x, &swap_graph(), &p), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_params_give_zero_state() {
        let g = ring_graphs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = gru_params(&mut rng, 2, 4).map(&mut |m| Matrix::zeros(m.rows(), m.cols()));
        let h = gc_gru_step(&rand_m(&mut rng, 3, 2), &Matrix::zeros(3, 4), &g, &p).unwrap();
        assert_eq!(h, Matrix::zeros(3, 4));
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let g = ring_graphs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = gru_params(&mut rng, 2, 4).map(&mut |m| m.map(|v| v * 0.1));
        p.b_z = Matrix::filled(1, 4, 60.0);
        let h_prev = rand_m(&mut rng, 3, 4);
        let h = gc_gru_step(&rand_m(&mut rng, 3, 2), &h_prev, &g, &p).unwrap();
        assert!(h.max_abs_diff(&h_prev) < 1e-20);
    }

    /// Per-element recomputation of the GC-GRU step.
    fn gru_oracle(x: &Matrix<f64>, h: &Matrix<f64>, g: &ModelGraphs<f64>, p: &GcGruParams<Matrix<f64>>) -> Matrix<f64> {
        let n = x.rows();
        let d = p.b_r.cols();
        let dense = |w: &Option<CsrMatrix<f64>>| w.as_ref().map(|w| w.to_dense()).unwrap_or_else(|| Matrix::zeros(n, n));
        let (wp, ws, wc) = (dense(&g.physical), dense(&g.similarity), dense(&g.correlation));
        let conv = |inp: &Matrix<f64>, k: &GraphConvParams<Matrix<f64>>, i: usize, o: usize| {
            let mut s = 0.0;
            for a in 0..inp.cols() {
                s += inp[(i, a)] * k.theta_l[(a, o)];
                for j in 0..n {
                    s += wp[(i, j)] * inp[(j, a)] * k.theta_p[(a, o)];
                    s += ws[(i, j)] * inp[(j, a)] * k.theta_s[(a, o)];
                    s += wc[(i, j)] * inp[(j, a)] * k.theta_c[(a, o)];
                }
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        Matrix::from_fn(n, d, |i, o| {
            let r = sig(conv(x, &p.rx, i, o) + conv(h, &p.rh, i, o) + p.b_r[(0, o)]);
            let z = sig(conv(x, &p.zx, i, o) + conv(h, &p.zh, i, o) + p.b_z[(0, o)]);
            let c = (conv(x, &p.nx, i, o) + r * (conv(h, &p.nh, i, o) + p.b_n[(0, o)])).tanh();
            (1.0 - z) * c + z * h[(i, o)]
        })
    }

    #[test]
    fn gc_gru_matches_elementwise_oracle() {
        let g = ring_graphs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = gru_params(&mut rng, 2, 4);
        let (x, h) = (rand_m(&mut rng, 3, 2), rand_m(&mut rng, 3, 4));
        let got = gc_gru_step(&x, &h, &g, &p).unwrap();
        assert!(got.max_abs_diff(&gru_oracle(&x, &h, &g, &p)) < 1e-12);
    }

    #[test]
    fn non_finite_gate_is_named() {
        let g = ring_graphs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = gru_params(&mut rng, 2, 4);
        p.b_r = Matrix::filled(1, 4, f64::NAN);
        match gc_gru_step(&rand_m(&mut rng, 3, 2), &rand_m(&mut rng, 3, 4), &g, &p) {
            Err(Error::Numerics(msg)) => assert!(msg.contains("reset gate"), "{msg}"),
            other => panic!("expected numerics error, got {other:?}"),
        }
    }
}
