//! Learnable tensors. Parameter groups are generic over their leaf type so
//! the same structure describes owned matrices, flat storage slots and tape
//! handles; `map` fixes the one canonical field order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Multi-graph convolution kernels, each `[d_in, d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphConvParams<M> {
    pub theta_l: M,
    pub theta_p: M,
    pub theta_s: M,
    pub theta_c: M,
}

impl<M> GraphConvParams<M> {
    pub fn map<'s, N>(&'s self, f: &mut impl FnMut(&'s M) -> N) -> GraphConvParams<N> {
        GraphConvParams { theta_l: f(&self.theta_l), theta_p: f(&self.theta_p), theta_s: f(&self.theta_s), theta_c: f(&self.theta_c) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcGruParams<M> {
    pub rx: GraphConvParams<M>,
    pub rh: GraphConvParams<M>,
    pub zx: GraphConvParams<M>,
    pub zh: GraphConvParams<M>,
    pub nx: GraphConvParams<M>,
    pub nh: GraphConvParams<M>,
    pub b_r: M,
    pub b_z: M,
    pub b_n: M,
}

impl<M> GcGruParams<M> {
    pub fn map<'s, N>(&'s self, f: &mut impl FnMut(&'s M) -> N) -> GcGruParams<N> {
        GcGruParams {
            rx: self.rx.map(f),
            rh: self.rh.map(f),
            zx: self.zx.map(f),
            zh: self.zh.map(f),
            nx: self.nx.map(f),
            nh: self.nh.map(f),
            b_r: f(&self.b_r),
            b_z: f(&self.b_z),
            b_n: f(&self.b_n),
        }
    }
}

/// Network-wide GRU: two embedding layers over flattened station features
/// and a fully-connected GRU of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcGruParams<M> {
    /// `[N·d_in, d]`
    pub embed_input: M,
    pub embed_input_bias: M,
    /// `[N·d, d]`
    pub embed_hidden: M,
    pub embed_hidden_bias: M,
    pub w_rx: M,
    pub w_rh: M,
    pub w_zx: M,
    pub w_zh: M,
    pub w_nx: M,
    pub w_nh: M,
    pub b_r: M,
    pub b_z: M,
    pub b_n: M,
}

impl<M> FcGruParams<M> {
    pub fn map<'s, N>(&'s self, f: &mut impl FnMut(&'s M) -> N) -> FcGruParams<N> {
        FcGruParams {
            embed_input: f(&self.embed_input),
            embed_input_bias: f(&self.embed_input_bias),
            embed_hidden: f(&self.embed_hidden),
            embed_hidden_bias: f(&self.embed_hidden_bias),
            w_rx: f(&self.w_rx),
            w_rh: f(&self.w_rh),
            w_zx: f(&self.w_zx),
            w_zh: f(&self.w_zh),
            w_nx: f(&self.w_nx),
            w_nh: f(&self.w_nh),
            b_r: f(&self.b_r),
            b_z: f(&self.b_z),
            b_n: f(&self.b_n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgrmParams<M> {
    pub gc: GcGruParams<M>,
    pub fc: FcGruParams<M>,
    /// `[2d, d]`
    pub fuse: M,
    pub fuse_bias: M,
}

impl<M> CgrmParams<M> {
    pub fn map<'s, N>(&'s self, f: &mut impl FnMut(&'s M) -> N) -> CgrmParams<N> {
        CgrmParams { gc: self.gc.map(f), fc: self.fc.map(f), fuse: f(&self.fuse), fuse_bias: f(&self.fuse_bias) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PvcgnWeights<M> {
    pub encoder: [CgrmParams<M>; 2],
    pub decoder: [CgrmParams<M>; 2],
    /// `[d, C]`, shared by every station.
    pub head: M,
    pub head_bias: M,
}

impl<M> PvcgnWeights<M> {
    pub fn map<'s, N>(&'s self, f: &mut impl FnMut(&'s M) -> N) -> PvcgnWeights<N> {
        PvcgnWeights {
            encoder: [self.encoder[0].map(f), self.encoder[1].map(f)],
            decoder: [self.decoder[0].map(f), self.decoder[1].map(f)],
            head: f(&self.head),
            head_bias: f(&self.head_bias),
        }
    }
}

/// Storage slot plus the shape and role needed to initialize it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

struct LayoutBuilder {
    slots: Vec<(String, usize, usize, bool)>,
}

impl LayoutBuilder {
    fn alloc(&mut self, name: String, rows: usize, cols: usize, bias: bool) -> Slot {
        self.slots.push((name, rows, cols, bias));
        Slot { index: self.slots.len() - 1, rows, cols, bias }
    }

    fn kernel(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        self.alloc(name, rows, cols, false)
    }

    fn bias(&mut self, name: String, cols: usize) -> Slot {
        self.alloc(name, 1, cols, true)
    }

    fn graph_conv(&mut self, p: &str, d_in: usize, d: usize) -> GraphConvParams<Slot> {
        GraphConvParams {
            theta_l: self.kernel(format!("{p}.theta_l"), d_in, d),
            theta_p: self.kernel(format!("{p}.theta_p"), d_in, d),
            theta_s: self.kernel(format!("{p}.theta_s"), d_in, d),
            theta_c: self.kernel(format!("{p}.theta_c"), d_in, d),
        }
    }

    fn cgrm(&mut self, p: &str, n: usize, d_in: usize, d: usize) -> CgrmParams<Slot> {
        let gc = GcGruParams {
            rx: self.graph_conv(&format!("{p}.gc.rx"), d_in, d),
            rh: self.graph_conv(&format!("{p}.gc.rh"), d, d),
            zx: self.graph_conv(&format!("{p}.gc.zx"), d_in, d),
            zh: self.graph_conv(&format!("{p}.gc.zh"), d, d),
            nx: self.graph_conv(&format!("{p}.gc.nx"), d_in, d),
            nh: self.graph_conv(&format!("{p}.gc.nh"), d, d),
            b_r: self.bias(format!("{p}.gc.b_r"), d),
            b_z: self.bias(format!("{p}.gc.b_z"), d),
            b_n: self.bias(format!("{p}.gc.b_n"), d),
        };
        let fc = FcGruParams {
            embed_input: self.kernel(format!("{p}.fc.embed_input"), n * d_in, d),
            embed_input_bias: self.bias(format!("{p}.fc.embed_input_bias"), d),
            embed_hidden: self.kernel(format!("{p}.fc.embed_hidden"), n * d, d),
            embed_hidden_bias: self.bias(format!("{p}.fc.embed_hidden_bias"), d),
            w_rx: self.kernel(format!("{p}.fc.w_rx"), d, d),
            w_rh: self.kernel(format!("{p}.fc.w_rh"), d, d),
            w_zx: self.kernel(format!("{p}.fc.w_zx"), d, d),
            w_zh: self.kernel(format!("{p}.fc.w_zh"), d, d),
            w_nx: self.kernel(format!("{p}.fc.w_nx"), d, d),
            w_nh: self.kernel(format!("{p}.fc.w_nh"), d, d),
            b_r: self.bias(format!("{p}.fc.b_r"), d),
            b_z: self.bias(format!("{p}.fc.b_z"), d),
            b_n: self.bias(format!("{p}.fc.b_n"), d),
        };
        CgrmParams { gc, fc, fuse: self.kernel(format!("{p}.fuse"), 2 * d, d), fuse_bias: self.bias(format!("{p}.fuse_bias"), d) }
    }
}

/// Slot layout and names for a configuration. Names are unique and stable.
pub fn layout(config: &ModelConfig) -> (PvcgnWeights<Slot>, Vec<String>, Vec<(usize, usize, bool)>) {
    let (n, c, d) = (config.n_stations, config.channels, config.d);
    let mut b = LayoutBuilder { slots: Vec::new() };
    let encoder = [b.cgrm("encoder.0", n, c, d), b.cgrm("encoder.1", n, d, d)];
    let decoder = [b.cgrm("decoder.0", n, c, d), b.cgrm("decoder.1", n, d, d)];
    let head = b.kernel("head".into(), d, c);
    let head_bias = b.bias("head_bias".into(), c);
    let weights = PvcgnWeights { encoder, decoder, head, head_bias };
    let names = b.slots.iter().map(|s| s.0.clone()).collect();
    let shapes = b.slots.iter().map(|s| (s.1, s.2, s.3)).collect();
    (weights, names, shapes)
}

/// All parameters of a model in flat storage, addressed through `layout`.
#[derive(Clone, Debug, PartialEq)]
pub struct PvcgnParams<T> {
    pub config: ModelConfig,
    pub layout: PvcgnWeights<Slot>,
    pub names: Vec<String>,
    pub tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> PvcgnParams<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, names, shapes) = layout(&config);
        let tensors = shapes.iter().map(|&(r, c, _)| Matrix::zeros(r, c)).collect();
        Ok(Self { config, layout, names, tensors })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Owned copy of one encoder (`decoder = false`) or decoder layer.
    pub fn cgrm(&self, decoder: bool, layer: usize) -> CgrmParams<Matrix<T>> {
        let l = if decoder { &self.layout.decoder[layer] } else { &self.layout.encoder[layer] };
        l.map(&mut |s| self.tensors[s.index].clone())
    }

    pub fn cast<U: Scalar>(&self) -> PvcgnParams<U> {
        PvcgnParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::all_finite)
    }
}

/// Xavier-uniform kernels (`U(−a, a)`, `a = sqrt(6 / (fan_in + fan_out))`)
/// and zero biases, drawn in slot order from a seeded stream.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<PvcgnParams<T>> {
    config.validate()?;
    let (layout, names, shapes) = layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = shapes
        .iter()
        .map(|&(r, c, bias)| {
            if bias {
                Matrix::zeros(r, c)
            } else {
                let a = (6.0 / (r + c) as f64).sqrt();
                Matrix::from_fn(r, c, |_, _| T::lit(rng.random_range(-a..a)))
            }
        })
        .collect();
    Ok(PvcgnParams { config: config.clone(), layout, names, tensors })
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_stations == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive (N={}, C={}, d={})",
                self.n_stations, self.channels, self.d
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize) -> ModelConfig {
        ModelConfig { n_stations: 3, d, ..ModelConfig::default() }
    }

    #[test]
    fn layout_names_are_unique_and_slots_follow_map_order() {
        let (w, names, shapes) = layout(&cfg(4));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut order = Vec::new();
        w.map(&mut |s| order.push(s.index));
        assert_eq!(order, (0..names.len()).collect::<Vec<_>>());
        assert_eq!(shapes.len(), names.len());
        let fc = &w.encoder[0].fc;
        assert_eq!((fc.embed_input.rows, fc.embed_input.cols), (3 * 2, 4));
        assert_eq!((w.encoder[1].gc.rx.theta_l.rows, w.head.cols), (4, 2));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params::<f64>(&cfg(4), 3).unwrap();
        let b = init_params::<f64>(&cfg(4), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tensors, init_params::<f64>(&cfg(4), 4).unwrap().tensors);
        let (_, _, shapes) = layout(&cfg(4));
        for (t, (_, _, bias)) in a.tensors.iter().zip(shapes) {
            if bias {
                assert!(t.as_slice().iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn xavier_spread_matches_uniform_law() {
        let config = ModelConfig { n_stations: 1, channels: 2, d: 256, ..ModelConfig::default() };
        let p = init_params::<f64>(&config, 1).unwrap();
        let k = p.tensor("encoder.1.gc.rh.theta_l").unwrap();
        assert_eq!(k.shape(), (256, 256));
        let n = k.len() as f64;
        let mean = k.as_slice().iter().sum::<f64>() / n;
        let sd = (k.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        // U(−a, a) has sd a/√3 = sqrt(2 / (fan_in + fan_out))
        let want = (2.0f64 / 512.0).sqrt();
        assert!((sd - want).abs() / want < 0.1, "sd {sd} vs {want}");
        let a = (6.0f64 / 512.0).sqrt();
        assert!(k.as_slice().iter().all(|x| x.abs() <= a));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(init_params::<f64>(&cfg(0), 0).is_err());
    }
}
