//! Multi-head force estimator: encoder, bottleneck regressor and depth decoder.

mod config;

use std::path::{Path, PathBuf};

use faf_tensor::{checkpoint, trunc_normal, name_seed, Graph, ParamId, ParamStore, Tensor, Var};

pub use config::{EncoderKind, ModelConfig, BOTTLENECKS, DECODER_STAGES, MIN_BOTTLENECK_WIDTH};

use crate::error::{FafError, Result};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Channels of the convolutional encoder's three stride-2 stages.
const CONV_CHANNELS: [usize; 3] = [16, 32, 32];

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
enum Encoder {
    Vit {
        patch: Linear,
        cls: ParamId,
        pos: ParamId,
        blocks: Vec<Block>,
        ln: Norm,
    },
    Conv {
        convs: Vec<Linear>,
        proj: Linear,
        ln: Norm,
    },
}

#[derive(Clone, Debug)]
struct Bottleneck {
    fc: Linear,
    ln: Norm,
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[B, K]` feature vectors.
    pub features: Var,
    /// `[B, 3]` forces in N.
    pub force: Var,
    /// `[B, 1, S, S]` normalized depth, when the decoder ran.
    pub depth: Option<Var>,
}

/// Named parameter subsets used for learning-rate groups and fine-tuning scopes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSet {
    Backbone,
    Regressor,
    FinalLayer,
    Decoder,
    /// Regressor and decoder.
    Heads,
    All,
}

#[derive(Clone, Debug)]
pub struct ForceModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Encoder,
    bottlenecks: Vec<Bottleneck>,
    out: Linear,
    dec_proj: Linear,
    dec_up: Vec<Linear>,
    dec_head: Linear,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.normal_std(name, shape, INIT_STD)
    }

    fn normal_std(&mut self, name: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = trunc_normal(shape, std, name_seed(self.seed, &name));
        Ok(self.store.insert(name, t)?)
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> Result<ParamId> {
        Ok(self.store.insert(name, Tensor::full(shape, v))?)
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.normal(format!("{prefix}.w"), &[fan_in, fan_out])?,
            b: self.constant(format!("{prefix}.b"), &[fan_out], 0.0)?,
        })
    }

    /// He-initialized kernel `shape` with a per-output-channel bias of `bias` entries.
    ///
    /// `fan_in` counts the inputs summed into one output pixel.
    fn kernel(&mut self, prefix: &str, shape: &[usize], fan_in: usize, bias: usize) -> Result<Linear> {
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Linear {
            w: self.normal_std(format!("{prefix}.w"), shape, std)?,
            b: self.constant(format!("{prefix}.b"), &[bias], 0.0)?,
        })
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            g: self.constant(format!("{prefix}.g"), &[dim], 1.0)?,
            b: self.constant(format!("{prefix}.b"), &[dim], 0.0)?,
        })
    }
}

/// Split `[B, 3, S, S]` images into `[B, N, 3·P·P]` patch rows (channel-major within a patch).
pub fn patchify(images: &Tensor, patch: usize) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != s[3] || s[2] % patch != 0 {
        return Err(FafError::Shape {
            op: "patchify",
            detail: format!("expected [B, 3, S, S] with S divisible by {patch}, got {s:?}"),
        });
    }
    let (b, size) = (s[0], s[2]);
    let side = size / patch;
    let row = 3 * patch * patch;
    let src = images.data();
    let mut out = Vec::with_capacity(b * side * side * row);
    for bi in 0..b {
        for py in 0..side {
            for px in 0..side {
                for c in 0..3 {
                    for y in 0..patch {
                        let base = ((bi * 3 + c) * size + py * patch + y) * size + px * patch;
                        out.extend_from_slice(&src[base..base + patch]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![b, side * side, row], out)?)
}

impl ForceModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            seed: config.seed,
        };
        let k = config.embed_dim;
        let encoder = match config.encoder {
            EncoderKind::Vit => {
                let patch = init.linear("vit.patch", 3 * config.patch_size * config.patch_size, k)?;
                let cls = init.normal("vit.cls".into(), &[1, 1, k])?;
                let pos = init.normal("vit.pos".into(), &[config.tokens(), k])?;
                let hidden = k * config.mlp_ratio;
                let blocks = (0..config.depth)
                    .map(|i| {
                        let p = format!("vit.blocks.{i}");
                        Ok(Block {
                            ln1: init.norm(&format!("{p}.ln1"), k)?,
                            q: init.linear(&format!("{p}.attn.q"), k, k)?,
                            k: init.linear(&format!("{p}.attn.k"), k, k)?,
                            v: init.linear(&format!("{p}.attn.v"), k, k)?,
                            o: init.linear(&format!("{p}.attn.o"), k, k)?,
                            ln2: init.norm(&format!("{p}.ln2"), k)?,
                            fc1: init.linear(&format!("{p}.mlp.fc1"), k, hidden)?,
                            fc2: init.linear(&format!("{p}.mlp.fc2"), hidden, k)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let ln = init.norm("vit.ln", k)?;
                Encoder::Vit {
                    patch,
                    cls,
                    pos,
                    blocks,
                    ln,
                }
            }
            EncoderKind::Conv => {
                let mut c_in = 3;
                let mut convs = Vec::new();
                for (i, &c_out) in CONV_CHANNELS.iter().enumerate() {
                    convs.push(init.kernel(&format!("conv.c{i}"), &[c_out, c_in, 2, 2], 4 * c_in, c_out)?);
                    c_in = c_out;
                }
                let side = config.input_size >> CONV_CHANNELS.len();
                let proj = init.linear("conv.proj", c_in * side * side, k)?;
                let ln = init.norm("conv.ln", k)?;
                Encoder::Conv { convs, proj, ln }
            }
        };
        let mut width = k;
        let mut bottlenecks = Vec::new();
        for (i, w) in config.regressor_widths().into_iter().enumerate() {
            bottlenecks.push(Bottleneck {
                fc: init.linear(&format!("reg.b{i}.fc"), width, w)?,
                ln: init.norm(&format!("reg.b{i}.ln"), w)?,
            });
            width = w;
        }
        let out = init.linear("reg.out", width, 3)?;

        let plan = config.decoder_channel_plan();
        let grid = config.decoder_grid();
        let dec_proj = init.linear("dec.proj", k, plan[0] * grid * grid)?;
        let dec_up = plan
            .windows(2)
            .enumerate()
            .map(|(i, c)| init.kernel(&format!("dec.up{i}"), &[c[0], c[1], 2, 2], c[0], c[1]))
            .collect::<Result<Vec<_>>>()?;
        let dec_head = init.kernel("dec.head", &[plan[DECODER_STAGES], 1, 1, 1], plan[DECODER_STAGES], 1)?;

        Ok(Self {
            config,
            store,
            encoder,
            bottlenecks,
            out,
            dec_proj,
            dec_up,
            dec_head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    fn linear(&self, g: &mut Graph, l: Linear, x: Var) -> Result<Var> {
        let w = g.param(&self.store, l.w);
        let b = g.param(&self.store, l.b);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    fn norm(&self, g: &mut Graph, n: Norm, x: Var) -> Result<Var> {
        let y = g.layer_norm_last(x, LN_EPS);
        let gamma = g.param(&self.store, n.g);
        let beta = g.param(&self.store, n.b);
        let y = g.mul(y, gamma)?;
        Ok(g.add(y, beta)?)
    }

    /// Add a `[C]` bias to a `[B, C, H, W]` map.
    fn channel_bias(&self, g: &mut Graph, x: Var, b: ParamId) -> Result<Var> {
        let c = self.store.value(b).numel();
        let bv = g.param(&self.store, b);
        let bv = g.reshape(bv, &[c, 1, 1])?;
        Ok(g.add(x, bv)?)
    }

    fn attention(&self, g: &mut Graph, blk: &Block, x: Var) -> Result<Var> {
        let (b, t, k) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let h = self.config.heads;
        let dh = k / h;
        let heads = |g: &mut Graph, l: Linear| -> Result<Var> {
            let y = self.linear(g, l, x)?;
            let y = g.reshape(y, &[b, t, h, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            Ok(g.reshape(y, &[b * h, t, dh])?)
        };
        let q = heads(g, blk.q)?;
        let kk = heads(g, blk.k)?;
        let v = heads(g, blk.v)?;
        let kt = g.transpose_last(kk)?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let att = g.softmax_last(scores);
        let ctx = g.bmm(att, v)?;
        let ctx = g.reshape(ctx, &[b, h, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, k])?;
        self.linear(g, blk.o, ctx)
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [3, s, s] {
            return Err(FafError::Shape {
                op: "encode",
                detail: format!("expected [B, 3, {s}, {s}], got {shape:?}"),
            });
        }
        Ok(())
    }

    /// `φ`: images `[B, 3, S, S]` to features `[B, K]`.
    pub fn encode(&self, g: &mut Graph, images: &Tensor) -> Result<Var> {
        self.check_images(images)?;
        let b = images.shape()[0];
        let k = self.config.embed_dim;
        match &self.encoder {
            Encoder::Vit {
                patch,
                cls,
                pos,
                blocks,
                ln,
            } => {
                let patches = g.constant(patchify(images, self.config.patch_size)?);
                let tokens = self.linear(g, *patch, patches)?;
                let c = g.param(&self.store, *cls);
                let c = g.broadcast_to(c, &[b, 1, k])?;
                let mut x = g.concat(&[c, tokens], 1)?;
                let p = g.param(&self.store, *pos);
                x = g.add(x, p)?;
                for blk in blocks {
                    let h = self.norm(g, blk.ln1, x)?;
                    let a = self.attention(g, blk, h)?;
                    x = g.add(x, a)?;
                    let h = self.norm(g, blk.ln2, x)?;
                    let h = self.linear(g, blk.fc1, h)?;
                    let h = g.gelu(h);
                    let h = self.linear(g, blk.fc2, h)?;
                    x = g.add(x, h)?;
                }
                let cls_out = g.index(x, 1, 0)?;
                self.norm(g, *ln, cls_out)
            }
            Encoder::Conv { convs, proj, ln } => {
                let mut x = g.constant(images.clone());
                for c in convs {
                    let w = g.param(&self.store, c.w);
                    x = g.conv2d(x, w, 2)?;
                    x = self.channel_bias(g, x, c.b)?;
                    x = g.leaky_relu(x, LEAKY_SLOPE);
                }
                let flat = g.value(x).numel() / b;
                let x = g.reshape(x, &[b, flat])?;
                let x = self.linear(g, *proj, x)?;
                self.norm(g, *ln, x)
            }
        }
    }

    /// `ρ(β(x))`: features to forces `[B, 3]` in N.
    pub fn regress(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for bn in &self.bottlenecks {
            h = self.linear(g, bn.fc, h)?;
            h = self.norm(g, bn.ln, h)?;
            h = g.gelu(h);
        }
        let y = self.linear(g, self.out, h)?;
        let scale = g.constant(Tensor::from_vec(self.config.force_scale.to_vec()));
        Ok(g.mul(y, scale)?)
    }

    /// `ψ(x)`: features to normalized depth `[B, 1, S, S]`.
    pub fn decode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let grid = self.config.decoder_grid();
        let c0 = self.config.decoder_channels;
        let y = self.linear(g, self.dec_proj, x)?;
        let mut y = g.reshape(y, &[b, c0, grid, grid])?;
        for up in &self.dec_up {
            let w = g.param(&self.store, up.w);
            y = g.conv_transpose2d(y, w, 2)?;
            y = self.channel_bias(g, y, up.b)?;
            y = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let w = g.param(&self.store, self.dec_head.w);
        let y = g.conv_transpose2d(y, w, 1)?;
        self.channel_bias(g, y, self.dec_head.b)
    }

    pub fn forward(&self, g: &mut Graph, images: &Tensor, with_decoder: bool) -> Result<Outputs> {
        let features = self.encode(g, images)?;
        let force = self.regress(g, features)?;
        let depth = if with_decoder { Some(self.decode(g, features)?) } else { None };
        Ok(Outputs { features, force, depth })
    }

    /// Forces `[B, 3]` without recording gradients.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, images, false)?;
        Ok(g.value(out.force).clone())
    }

    pub fn params(&self, set: ParamSet) -> Vec<ParamId> {
        let lin = |l: &Linear| [l.w, l.b];
        let nrm = |n: &Norm| [n.g, n.b];
        let backbone = || -> Vec<ParamId> {
            match &self.encoder {
                Encoder::Vit {
                    patch,
                    cls,
                    pos,
                    blocks,
                    ln,
                } => {
                    let mut v = lin(patch).to_vec();
                    v.extend([*cls, *pos]);
                    for b in blocks {
                        v.extend(nrm(&b.ln1));
                        for l in [&b.q, &b.k, &b.v, &b.o] {
                            v.extend(lin(l));
                        }
                        v.extend(nrm(&b.ln2));
                        v.extend(lin(&b.fc1));
                        v.extend(lin(&b.fc2));
                    }
                    v.extend(nrm(ln));
                    v
                }
                Encoder::Conv { convs, proj, ln } => {
                    let mut v: Vec<ParamId> = convs.iter().flat_map(lin).collect();
                    v.extend(lin(proj));
                    v.extend(nrm(ln));
                    v
                }
            }
        };
        let regressor = || -> Vec<ParamId> {
            let mut v: Vec<ParamId> = self.bottlenecks.iter().flat_map(|b| [lin(&b.fc), nrm(&b.ln)].concat()).collect();
            v.extend(lin(&self.out));
            v
        };
        let decoder = || -> Vec<ParamId> {
            let mut v = lin(&self.dec_proj).to_vec();
            v.extend(self.dec_up.iter().flat_map(lin));
            v.extend(lin(&self.dec_head));
            v
        };
        match set {
            ParamSet::Backbone => backbone(),
            ParamSet::Regressor => regressor(),
            ParamSet::FinalLayer => lin(&self.out).to_vec(),
            ParamSet::Decoder => decoder(),
            ParamSet::Heads => [regressor(), decoder()].concat(),
            ParamSet::All => self.store.ids().collect(),
        }
    }

    /// Set the final linear layer's bias so the untrained model predicts `mean` (N).
    pub fn set_output_bias(&mut self, mean: [f64; 3]) {
        let s = self.config.force_scale;
        let b = &mut self.store.get_mut(self.out.b).value;
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = mean[i] / s[i];
        }
    }

    pub fn config_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_os_string();
        s.push(".config.json");
        PathBuf::from(s)
    }

    /// Write weights (`FAFW`) and the config sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_store(&self.store, path)?;
        std::fs::write(Self::config_path(path), self.config.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = Self::config_path(path);
        let text = std::fs::read_to_string(&cfg_path)
            .map_err(|e| FafError::Config(format!("{}: {e}", cfg_path.display())))?;
        let mut model = Self::new(ModelConfig::from_json(&text)?)?;
        checkpoint::load_into(&mut model.store, checkpoint::read_file(path)?)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            depth: 2,
            ..ModelConfig::default()
        }
    }

    fn images(b: usize, seed: u64) -> Tensor {
        trunc_normal(&[b, 3, 32, 32], 0.3, seed)
    }

    fn stack(a: &Tensor, b: &Tensor) -> Tensor {
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let mut shape = a.shape().to_vec();
        shape[0] += b.shape()[0];
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn shapes() {
        for encoder in [EncoderKind::Vit, EncoderKind::Conv] {
            let m = ForceModel::new(ModelConfig { encoder, ..small() }).unwrap();
            let mut g = Graph::new();
            let out = m.forward(&mut g, &images(1, 1), true).unwrap();
            assert_eq!(g.shape(out.features), &[1, 64]);
            assert_eq!(g.shape(out.force), &[1, 3]);
            assert_eq!(g.shape(out.depth.unwrap()), &[1, 1, 32, 32]);
        }
        let m = ForceModel::new(small()).unwrap();
        let mut g = Graph::new();
        assert!(matches!(
            m.encode(&mut g, &Tensor::zeros(&[1, 3, 16, 16])),
            Err(FafError::Shape { .. })
        ));
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = ForceModel::new(small()).unwrap();
        let (a, b) = (images(1, 2), images(1, 3));
        let ab = m.predict(&stack(&a, &b)).unwrap();
        let ba = m.predict(&stack(&b, &a)).unwrap();
        let aa = m.predict(&stack(&a, &a)).unwrap();
        assert_eq!(&ab.data()[..3], &ba.data()[3..]);
        assert_eq!(&ab.data()[3..], &ba.data()[..3]);
        assert_eq!(&aa.data()[..3], &aa.data()[3..]);
    }

    #[test]
    fn deterministic_init_and_distinct_seeds() {
        let a = ForceModel::new(small()).unwrap();
        let b = ForceModel::new(small()).unwrap();
        let c = ForceModel::new(ModelConfig { seed: 1, ..small() }).unwrap();
        assert_eq!(a.store.checksum(None), b.store.checksum(None));
        assert_ne!(a.store.checksum(None), c.store.checksum(None));
    }

    #[test]
    fn zero_final_layers_give_zero_outputs() {
        let mut m = ForceModel::new(small()).unwrap();
        for id in m.params(ParamSet::FinalLayer) {
            m.store.get_mut(id).value = Tensor::zeros(m.store.value(id).shape());
        }
        let (hw, hb) = (m.dec_head.w, m.dec_head.b);
        for id in [hw, hb] {
            m.store.get_mut(id).value = Tensor::zeros(m.store.value(id).shape());
        }
        let mut g = Graph::new();
        let out = m.forward(&mut g, &images(2, 4), true).unwrap();
        assert!(g.value(out.force).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.depth.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regressor_is_nonlinear() {
        let m = ForceModel::new(small()).unwrap();
        let x = trunc_normal(&[1, 64], 1.0, 9);
        let run = |t: Tensor| {
            let mut g = Graph::new();
            let v = g.constant(t);
            let f = m.regress(&mut g, v).unwrap();
            g.value(f).clone()
        };
        let (a, b) = (run(x.clone()), run(x.map(|v| 2.0 * v)));
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn param_sets_partition_the_store() {
        for encoder in [EncoderKind::Vit, EncoderKind::Conv] {
            let m = ForceModel::new(ModelConfig { encoder, ..small() }).unwrap();
            let mut all: Vec<_> = [ParamSet::Backbone, ParamSet::Regressor, ParamSet::Decoder]
                .iter()
                .flat_map(|&s| m.params(s))
                .collect();
            all.sort();
            let mut expect = m.params(ParamSet::All);
            expect.sort();
            assert_eq!(all, expect);
            let reg = m.params(ParamSet::Regressor);
            assert!(m.params(ParamSet::FinalLayer).iter().all(|id| reg.contains(id)));
        }
    }

    #[test]
    fn output_bias_sets_mean_prediction() {
        let mut m = ForceModel::new(small()).unwrap();
        for id in m.params(ParamSet::FinalLayer) {
            m.store.get_mut(id).value = Tensor::zeros(m.store.value(id).shape());
        }
        m.set_output_bias([0.5, -1.0, 7.0]);
        let f = m.predict(&images(1, 5)).unwrap();
        for (a, b) in f.data().iter().zip([0.5, -1.0, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_ignores_patch_order_without_positions() {
        let mut m = ForceModel::new(small()).unwrap();
        let pos = m.store.id("vit.pos").unwrap();
        m.store.get_mut(pos).value = Tensor::zeros(m.store.value(pos).shape());
        let img = images(1, 6);
        let mut swapped = img.clone();
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    swapped.data_mut().swap((c * 32 + y) * 32 + x, (c * 32 + y + 24) * 32 + x + 24);
                }
            }
        }
        let enc = |t: &Tensor| {
            let mut g = Graph::new();
            let v = m.encode(&mut g, t).unwrap();
            g.value(v).clone()
        };
        let (a, b) = (enc(&img), enc(&swapped));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_gradient_reaches_features() {
        let m = ForceModel::new(small()).unwrap();
        let mut g = Graph::new();
        let x = g.input(trunc_normal(&[1, 64], 1.0, 8), true);
        let d = m.decode(&mut g, x).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum_all(sq);
        let mut store = m.store.clone();
        let grads = g.backward(loss, &mut store).unwrap();
        let gx = grads.get(x).unwrap();
        assert!(gx.data().iter().any(|&v| v != 0.0));
    }
}
