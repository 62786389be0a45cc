//! Geometric transformation Mamba block and the cascaded Mamba module.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::transform::{apply_on_tape, inverse_on_tape, ScanOrder};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, LayerNorm, Linear};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Tensor, Unary, Var};

/// Default SSM state size.
pub const DEFAULT_STATE_DIM: usize = 16;

/// Parameters of one S6 selective scan over `dim` channels.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub state_dim: usize,
    /// `log(-A)`, shape `(dim, state_dim)`.
    pub a_log: ParamId,
    pub delta_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    /// Skip gain `D`, shape `(dim)`.
    pub d: ParamId,
}

impl SsmParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, state_dim: usize) -> Result<Self> {
        // A = -[1, 2, .., N] per channel
        let a = Tensor::from_fn(&[dim, state_dim], |i| ((i % state_dim) + 1) as f64).into_data();
        let a_log = store.insert(
            &format!("{name}.a_log"),
            Tensor::new(vec![dim, state_dim], a.iter().map(|v| v.ln()).collect())?,
            true,
        )?;
        let delta_proj = Linear::new(store, rng, &format!("{name}.delta_proj"), dim, dim, true)?;
        // softplus(bias) spread log-uniformly over [1e-3, 0.1]
        let bias: Vec<f64> = (0..dim)
            .map(|_| {
                let dt = (rng.gen_range(1e-3f64.ln()..0.1f64.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        if let Some(b) = delta_proj.b {
            store.get_mut(b).tensor = Tensor::new(vec![dim], bias)?;
        }
        let scale_down = |store: &mut ParamStore, id: ParamId, s: f64| {
            for v in store.get_mut(id).tensor.data_mut() {
                *v *= s;
            }
        };
        scale_down(store, delta_proj.w, 0.1);
        let b_proj = Linear::new(store, rng, &format!("{name}.b_proj"), dim, state_dim, false)?;
        let c_proj = Linear::new(store, rng, &format!("{name}.c_proj"), dim, state_dim, false)?;
        let d = store.create(&format!("{name}.d"), &[dim], Init::Constant(1.0), rng)?;
        Ok(Self {
            state_dim,
            a_log,
            delta_proj,
            b_proj,
            c_proj,
            d,
        })
    }

    /// Run the scan over a `(L, dim)` sequence.
    pub fn forward(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let delta = self.delta_proj.forward(tape, u)?;
        let delta = tape.softplus(delta)?;
        let b = self.b_proj.forward(tape, u)?;
        let c = self.c_proj.forward(tape, u)?;
        let a_log = tape.param(self.a_log);
        let a = tape.unary(a_log, Unary::Exp)?;
        let a = tape.scale(a, -1.0)?;
        let d = tape.param(self.d);
        tape.selective_scan(u, delta, a, b, c, d)
    }
}

/// One GTMB: transform, single-direction selective scan, inverse transform.
#[derive(Clone, Debug)]
pub struct Gtmb {
    pub order: ScanOrder,
    pub channels: usize,
    pub in_proj: Linear,
    pub dconv: Conv2d,
    pub ssm: SsmParams,
    pub norm: LayerNorm,
    pub out_proj: Linear,
}

impl Gtmb {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        state_dim: usize,
        order: ScanOrder,
    ) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(shape_err("gtmb", format!("channel count {channels} must be even")));
        }
        let half = channels / 2;
        Ok(Self {
            order,
            channels,
            in_proj: Linear::new(store, rng, &format!("{name}.in_proj"), channels, channels, true)?,
            dconv: Conv2d::depthwise(store, rng, &format!("{name}.dconv"), half, true)?,
            ssm: SsmParams::new(store, rng, &format!("{name}.ssm"), half, state_dim)?,
            norm: LayerNorm::new(store, rng, &format!("{name}.norm"), half)?,
            out_proj: Linear::new(store, rng, &format!("{name}.out_proj"), half, channels, true)?,
        })
    }

    /// Full block on a `(T, H, W, C)` feature.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let t = apply_on_tape(tape, x, self.order)?;
        let y = self.forward_core(tape, t)?;
        inverse_on_tape(tape, y, self.order)
    }

    /// The block body on an already-transformed feature: a forward scan over
    /// the row-major flattening of its three leading axes.
    pub fn forward_core(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(shape_err(
                "gtmb",
                format!("expected (T,H,W,{}), got {shape:?}", self.channels),
            ));
        }
        let half = self.channels / 2;
        let len = shape[0] * shape[1] * shape[2];
        let h = self.in_proj.forward(tape, x)?;
        let parts = tape.split_channels(h, 2)?;
        let (x1, x2) = (parts[0], parts[1]);
        let x1 = self.dconv.forward(tape, x1)?;
        let x1 = tape.silu(x1)?;
        let seq = tape.reshape(x1, &[len, half])?;
        let seq = self.ssm.forward(tape, seq)?;
        let x1 = tape.reshape(seq, &[shape[0], shape[1], shape[2], half])?;
        let x1 = self.norm.forward(tape, x1)?;
        let gate = tape.silu(x2)?;
        let y = tape.mul(x1, gate)?;
        self.out_proj.forward(tape, y)
    }
}

/// Four GTMBs cascaded as FST -> BST -> FTS -> BTS, each with its own weights.
#[derive(Clone, Debug)]
pub struct Cmm {
    pub blocks: Vec<Gtmb>,
}

impl Cmm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, state_dim: usize) -> Result<Self> {
        let blocks = ScanOrder::ALL
            .iter()
            .map(|&o| Gtmb::new(store, rng, &format!("{name}.{}", o.tag()), channels, state_dim, o))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |h, b| b.forward(tape, h))
    }
}
