//! Binary checkpoints of trained models.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "MTCK" | version u8 | model tag u8 (0 classifier, 1 vae)
//! lif: tau v_th a (f32) spike (u8) | t_steps u32 | kl_weight f32
//! train_seed u64 | eval_seed u64
//! config echo: u32 length + UTF-8
//! metrics: u32 count, then (u32 length + UTF-8 name, f64 value)
//! layers: u32 count, then per layer
//!   name | kind tag u8 + geometry u32s | k_percent f32 | mode u8 | topology u8
//!   source tag u8
//!     0 memristor: rows u32 cols u32 | device config | rng word u128
//!                  g_pos f32[n] g_neg f32[n] | state bits
//!     1 software:  f32[n]
//!   scores f32[n] | mask bits
//! ```
//!
//! Bit arrays are packed LSB-first into `ceil(n/8)` bytes.

use std::path::Path;

use crate::baselines::TrainedModel;
use crate::data::write_atomic;
use crate::device::{DeviceConfig, DifferentialCrossbar, PairState};
use crate::error::{Error, Result};
use crate::models::{ScnnModel, SpikingVae};
use crate::pruning::{LayerKind, MaskMode, ScoredLayer, WeightSource};
use crate::snn::kernels::ConvGeometry;
use crate::snn::lif::{LifParams, SpikeFn};

pub const MAGIC: &[u8; 4] = b"MTCK";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TrainedModel,
    /// The run configuration that produced the model, as text.
    pub config_echo: String,
    pub train_seed: u64,
    pub eval_seed: u64,
    /// Named metrics recorded at the end of training.
    pub metrics: Vec<(String, f64)>,
}

impl Checkpoint {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(FORMAT_VERSION);
        let (tag, lif, t_steps, kl) = match &self.model {
            TrainedModel::Scnn(m) => (0u8, *m.lif(), m.t_steps(), 0.0),
            TrainedModel::Vae(m) => (1u8, *m.lif(), m.t_steps(), m.kl_weight()),
        };
        w.u8(tag);
        w.f32(lif.tau_decay);
        w.f32(lif.v_th);
        w.f32(lif.a);
        w.u8(match lif.spike {
            SpikeFn::Heaviside => 0,
            SpikeFn::SmoothRamp => 1,
        });
        w.u32(t_steps)?;
        w.f32(kl);
        w.u64(self.train_seed);
        w.u64(self.eval_seed);
        w.str(&self.config_echo)?;
        w.u32(self.metrics.len())?;
        for (name, v) in &self.metrics {
            w.str(name)?;
            w.bytes(&v.to_le_bytes());
        }
        let layers = self.model.layers();
        w.u32(layers.len())?;
        for l in layers {
            write_layer(&mut w, l)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(r.err(4, &format!("unsupported version {version}")));
        }
        let tag = r.u8()?;
        let lif = LifParams {
            tau_decay: r.f32()?,
            v_th: r.f32()?,
            a: r.f32()?,
            spike: match r.u8()? {
                0 => SpikeFn::Heaviside,
                1 => SpikeFn::SmoothRamp,
                s => return Err(r.err(r.pos - 1, &format!("unknown spike function {s}"))),
            },
        };
        let t_steps = r.u32()? as usize;
        let kl = r.f32()?;
        let train_seed = r.u64()?;
        let eval_seed = r.u64()?;
        let config_echo = r.str()?;
        let n_metrics = r.u32()? as usize;
        let mut metrics = Vec::with_capacity(n_metrics.min(1024));
        for _ in 0..n_metrics {
            let name = r.str()?;
            let v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            metrics.push((name, v));
        }
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            layers.push(read_layer(&mut r)?);
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        let model = match tag {
            0 => TrainedModel::Scnn(ScnnModel::from_layers(layers, lif, t_steps)?),
            1 => TrainedModel::Vae(SpikingVae::from_layers(layers, lif, t_steps, kl)?),
            t => return Err(r.err(5, &format!("unknown model tag {t}"))),
        };
        Ok(Self {
            model,
            config_echo,
            train_seed,
            eval_seed,
            metrics,
        })
    }

    /// Atomic save (temp file + rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { format, offset, reason } => Error::Format {
                format,
                offset,
                reason: format!("{reason} in {}", path.display()),
            },
            e => e,
        })
    }
}

fn write_layer(w: &mut Writer, l: &ScoredLayer) -> Result<()> {
    w.str(l.name())?;
    match l.kind() {
        LayerKind::Conv(g) => {
            w.u8(0);
            for v in [
                g.in_channels,
                g.out_channels,
                g.kernel,
                g.stride,
                g.padding,
                g.in_h,
                g.in_w,
            ] {
                w.u32(v)?;
            }
        }
        LayerKind::Linear { fan_in, fan_out } => {
            w.u8(1);
            w.u32(*fan_in)?;
            w.u32(*fan_out)?;
        }
    }
    w.f32(l.k_percent());
    w.u8(match l.mode() {
        MaskMode::Simulated => 0,
        MaskMode::Physical => 1,
    });
    w.u8(l.topology_applied() as u8);
    match l.source() {
        WeightSource::Memristor(x) => {
            w.u8(0);
            w.u32(x.rows())?;
            w.u32(x.cols())?;
            let c = x.config();
            for v in [
                c.mu_on,
                c.sigma_on,
                c.mu_off,
                c.sigma_off,
                c.weight_scale,
                c.read_noise_scale,
            ] {
                w.f32(v);
            }
            w.u64(c.seed);
            w.bytes(&x.rng_word_pos().to_le_bytes());
            w.f32s(x.g_pos());
            w.f32s(x.g_neg());
            w.bits(x.state().iter().map(|s| *s == PairState::Formed));
        }
        WeightSource::Software(v) => {
            w.u8(1);
            w.f32s(v);
        }
    }
    w.f32s(l.scores());
    w.bits(l.mask().iter().copied());
    Ok(())
}

fn read_layer(r: &mut Reader) -> Result<ScoredLayer> {
    let name = r.str()?;
    let kind = match r.u8()? {
        0 => {
            let mut v = [0usize; 7];
            for x in &mut v {
                *x = r.u32()? as usize;
            }
            LayerKind::Conv(ConvGeometry::new(v[0], v[1], v[2], (v[5], v[6])).with_stride(v[3]).with_padding(v[4]))
        }
        1 => LayerKind::Linear {
            fan_in: r.u32()? as usize,
            fan_out: r.u32()? as usize,
        },
        t => return Err(r.err(r.pos - 1, &format!("unknown layer kind {t}"))),
    };
    let n = kind.len();
    let k_percent = r.f32()?;
    let mode = match r.u8()? {
        0 => MaskMode::Simulated,
        1 => MaskMode::Physical,
        t => return Err(r.err(r.pos - 1, &format!("unknown mask mode {t}"))),
    };
    let topology = r.u8()? != 0;
    let source = match r.u8()? {
        0 => {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if rows * cols != n {
                return Err(r.err(r.pos, "crossbar shape disagrees with the layer"));
            }
            let config = DeviceConfig {
                mu_on: r.f32()?,
                sigma_on: r.f32()?,
                mu_off: r.f32()?,
                sigma_off: r.f32()?,
                weight_scale: r.f32()?,
                read_noise_scale: r.f32()?,
                seed: r.u64()?,
            };
            let word = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            let g_pos = r.f32s(n)?;
            let g_neg = r.f32s(n)?;
            let state = r
                .bits(n)?
                .into_iter()
                .map(|f| if f { PairState::Formed } else { PairState::Reset })
                .collect();
            let mut x = DifferentialCrossbar::from_parts(rows, cols, g_pos, g_neg, state, config)?;
            x.set_rng_word_pos(word);
            WeightSource::Memristor(x)
        }
        1 => WeightSource::Software(r.f32s(n)?),
        t => return Err(r.err(r.pos - 1, &format!("unknown weight source {t}"))),
    };
    let scores = r.f32s(n)?;
    let mask_at = r.pos;
    let mask = r.bits(n)?;
    let layer = ScoredLayer::from_parts(name, kind, source, scores, k_percent, mode, topology)?;
    if layer.mask() != mask.as_slice() {
        return Err(r.err(mask_at, "stored mask disagrees with the scores"));
    }
    Ok(layer)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Argument(format!("{v} does not fit a checkpoint field")))?;
        self.bytes(&v.to_le_bytes());
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.f32(*x);
        }
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }

    fn bits(&mut self, it: impl Iterator<Item = bool>) {
        let mut byte = 0u8;
        let mut n = 0;
        for b in it {
            byte |= (b as u8) << (n % 8);
            n += 1;
            if n % 8 == 0 {
                self.buf.push(byte);
                byte = 0;
            }
        }
        if n % 8 != 0 {
            self.buf.push(byte);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: &str) -> Error {
        Error::Format {
            format: "checkpoint",
            offset: offset as u64,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.pos, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| self.err(self.pos, "length overflow"))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err(at, "string is not UTF-8"))
    }

    fn bits(&mut self, n: usize) -> Result<Vec<bool>> {
        let b = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| b[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}
