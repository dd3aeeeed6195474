use super::cells::TapeCells;
use super::params::{PvcgnParams, PvcgnWeights};
use super::ModelGraphs;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Retained state of one module: fused per-station state `[N, d]` and the
/// global state `[1, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub fused: Matrix<T>,
    pub global: Matrix<T>,
}

/// Puts every tensor of `params` on the tape in slot order. Returns the
/// structured handles and the flat handle list.
pub fn bind_params<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a PvcgnParams<T>,
    track: bool,
) -> (PvcgnWeights<Var>, Vec<Var>) {
    let mut flat = Vec::with_capacity(params.tensors.len());
    let weights = params.layout.map(&mut |s| {
        let m = &params.tensors[s.index];
        let v = if track { tape.param(m) } else { tape.constant_ref(m) };
        flat.push(v);
        v
    });
    (weights, flat)
}

fn check_frames<T: Scalar>(frames: &[Matrix<T>], n: usize, c: usize, what: &str) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Argument(format!("{what} sequence is empty")));
    }
    if let Some(f) = frames.iter().find(|f| f.shape() != (n, c)) {
        return Err(Error::Shape(format!("{what} frame {:?}, expected ({n}, {c})", f.shape())));
    }
    Ok(())
}

fn zero_states<'a, T: Scalar>(tape: &mut Tape<'a, T>, n: usize, d: usize) -> [(Var, Var); 2] {
    let mut z = || (tape.constant(Matrix::zeros(n, d)), tape.constant(Matrix::zeros(1, d)));
    [z(), z()]
}

fn encode_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    cells: &TapeCells<'a, T>,
    w: &PvcgnWeights<Var>,
    d: usize,
    inputs: &[Var],
) -> Result<[(Var, Var); 2]> {
    let mut st = zero_states(tape, cells.graphs.n, d);
    for &x in inputs {
        st[0] = cells.cgrm(tape, x, st[0].0, st[0].1, &w.encoder[0])?;
        st[1] = cells.cgrm(tape, st[0].0, st[1].0, st[1].1, &w.encoder[1])?;
    }
    Ok(st)
}

/// Decoder unroll. `teacher[k]`, when present, replaces the previous
/// prediction as the input of step `k` (`k ≥ 1`).
fn decode_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    cells: &TapeCells<'a, T>,
    w: &PvcgnWeights<Var>,
    channels: usize,
    mut st: [(Var, Var); 2],
    m: usize,
    teacher: &[Option<Var>],
) -> Result<Vec<Var>> {
    let mut x = tape.constant(Matrix::zeros(cells.graphs.n, channels));
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        if k > 0 {
            x = teacher.get(k).copied().flatten().unwrap_or(out[k - 1]);
        }
        st[0] = cells.cgrm(tape, x, st[0].0, st[0].1, &w.decoder[0])?;
        st[1] = cells.cgrm(tape, st[0].0, st[1].0, st[1].1, &w.decoder[1])?;
        let y = tape.matmul(st[1].0, w.head)?;
        out.push(tape.add_row(y, w.head_bias)?);
    }
    Ok(out)
}

/// Encoder then decoder on a tape; returns the `m` predicted frames.
#[allow(clippy::too_many_arguments)]
pub fn forward_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    cells: &TapeCells<'a, T>,
    w: &PvcgnWeights<Var>,
    params: &PvcgnParams<T>,
    inputs: &[Var],
    m: usize,
    teacher: &[Option<Var>],
) -> Result<Vec<Var>> {
    if inputs.is_empty() || m == 0 {
        return Err(Error::Argument("input and output lengths must be at least 1".into()));
    }
    let st = encode_tape(tape, cells, w, params.config.d, inputs)?;
    decode_tape(tape, cells, w, params.config.channels, st, m, teacher)
}

fn check_graphs<T: Scalar>(graphs: &ModelGraphs<T>, params: &PvcgnParams<T>) -> Result<()> {
    if graphs.n != params.config.n_stations {
        return Err(Error::Shape(format!("graphs over {} stations, model has {}", graphs.n, params.config.n_stations)));
    }
    Ok(())
}

/// Runs the encoder from zero states over `n` frames of shape `[N, C]`.
pub fn encode<T: Scalar>(
    inputs: &[Matrix<T>],
    graphs: &ModelGraphs<T>,
    params: &PvcgnParams<T>,
) -> Result<[LayerState<T>; 2]> {
    let cfg = &params.config;
    check_graphs(graphs, params)?;
    check_frames(inputs, cfg.n_stations, cfg.channels, "input")?;
    let mut tape = Tape::new();
    let (w, _) = bind_params(&mut tape, params, false);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant_ref(x)).collect();
    let cells = TapeCells::new(graphs, cfg);
    let st = encode_tape(&mut tape, &cells, &w, cfg.d, &xs)?;
    Ok(st.map(|(f, g)| LayerState { fused: tape.value(f).clone(), global: tape.value(g).clone() }))
}

/// Unrolls the decoder for `m` steps from the given states. Outputs are in
/// normalized space.
pub fn decode<T: Scalar>(
    states: &[LayerState<T>; 2],
    graphs: &ModelGraphs<T>,
    params: &PvcgnParams<T>,
    m: usize,
) -> Result<Vec<Matrix<T>>> {
    let cfg = &params.config;
    check_graphs(graphs, params)?;
    if m == 0 {
        return Err(Error::Argument("output length must be at least 1".into()));
    }
    for s in states {
        if s.fused.shape() != (cfg.n_stations, cfg.d) || s.global.shape() != (1, cfg.d) {
            return Err(Error::Shape("decoder state does not match the model".into()));
        }
    }
    let mut tape = Tape::new();
    let (w, _) = bind_params(&mut tape, params, false);
    let st = [0, 1].map(|l| (tape.constant_ref(&states[l].fused), tape.constant_ref(&states[l].global)));
    let cells = TapeCells::new(graphs, cfg);
    let ys = decode_tape(&mut tape, &cells, &w, cfg.channels, st, m, &[])?;
    Ok(ys.into_iter().map(|y| tape.value(y).clone()).collect())
}

/// `n` input frames to `m` predicted frames, each `[N, C]`.
pub fn forward<T: Scalar>(
    inputs: &[Matrix<T>],
    graphs: &ModelGraphs<T>,
    params: &PvcgnParams<T>,
    m: usize,
) -> Result<Vec<Matrix<T>>> {
    let cfg = &params.config;
    check_graphs(graphs, params)?;
    check_frames(inputs, cfg.n_stations, cfg.channels, "input")?;
    let mut tape = Tape::new();
    let (w, _) = bind_params(&mut tape, params, false);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant_ref(x)).collect();
    let cells = TapeCells::new(graphs, cfg);
    let ys = forward_tape(&mut tape, &cells, &w, params, &xs, m, &[])?;
    Ok(ys.into_iter().map(|y| tape.value(y).clone()).collect())
}
