//! Dataset ingestion.
//!
//! * N-MNIST-style AER event files (40-bit big-endian records) and their
//!   binning into binary time frames.
//! * MNIST IDX files, optionally gzip-compressed.
//! * The central 8x8 inpainting mask, stratified splits and subsets.
//! * A saccade event synthesizer that turns static digits into event
//!   streams in the same format, for when only still images are at hand.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NMNIST_SIZE: usize = 34;
pub const MNIST_SIZE: usize = 28;
const MAX_TIMESTAMP: u32 = (1 << 23) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    /// Frame channel the polarity is binned into.
    pub fn channel(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u8,
    pub y: u8,
    pub polarity: Polarity,
    /// Microseconds since the start of the recording.
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Stable sort by timestamp.
    pub fn sort(&mut self) {
        self.events.sort_by_key(|e| e.t);
    }
}

/// Decode AER records. Each record is five bytes: x, y, then one
/// polarity bit followed by a 23-bit timestamp, all big-endian.
pub fn parse_aer(bytes: &[u8], width: usize, height: usize) -> Result<EventStream> {
    let whole = bytes.len() - bytes.len() % 5;
    if whole != bytes.len() {
        return Err(Error::Format {
            format: "AER",
            offset: whole as u64,
            reason: format!("truncated record: {} trailing bytes", bytes.len() - whole),
        });
    }
    let mut stream = EventStream::new(width, height);
    stream.events.reserve(bytes.len() / 5);
    for (i, r) in bytes.chunks_exact(5).enumerate() {
        let (x, y) = (r[0], r[1]);
        if x as usize >= width || y as usize >= height {
            return Err(Error::Format {
                format: "AER",
                offset: (i * 5) as u64,
                reason: format!("coordinate ({x}, {y}) outside {width}x{height} sensor"),
            });
        }
        let polarity = if r[2] & 0x80 != 0 { Polarity::On } else { Polarity::Off };
        let t = ((r[2] as u32 & 0x7f) << 16) | ((r[3] as u32) << 8) | r[4] as u32;
        stream.events.push(Event { x, y, polarity, t });
    }
    Ok(stream)
}

/// Inverse of [`parse_aer`].
pub fn encode_aer(stream: &EventStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(stream.events.len() * 5);
    for e in &stream.events {
        if e.t > MAX_TIMESTAMP {
            return Err(Error::Argument(format!("timestamp {} does not fit in 23 bits", e.t)));
        }
        if e.x as usize >= stream.width || e.y as usize >= stream.height {
            return Err(Error::Argument(format!("event ({}, {}) outside sensor", e.x, e.y)));
        }
        let p = if e.polarity == Polarity::On { 0x80 } else { 0 };
        out.extend_from_slice(&[e.x, e.y, p | (e.t >> 16) as u8, (e.t >> 8) as u8, e.t as u8]);
    }
    Ok(out)
}

/// Read one 34x34 N-MNIST event file.
pub fn load_nmnist(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_aer(&bytes, NMNIST_SIZE, NMNIST_SIZE)
}

/// Bin events into `t_bins` equal windows over `[first, last]` timestamp.
/// A cell is 1 iff at least one event of that polarity fell into it.
/// Output layout is `[t, polarity, y, x]`.
pub fn bin_events(stream: &EventStream, t_bins: usize) -> Result<Vec<u8>> {
    if t_bins == 0 {
        return Err(Error::Argument("t_bins must be >= 1".into()));
    }
    let (w, h) = (stream.width, stream.height);
    let mut frames = vec![0u8; t_bins * 2 * h * w];
    let Some(first) = stream.events.iter().map(|e| e.t).min() else {
        return Ok(frames);
    };
    let last = stream.events.iter().map(|e| e.t).max().unwrap_or(first);
    let span = (last - first) as u64 + 1;
    for e in &stream.events {
        if e.x as usize >= w || e.y as usize >= h {
            return Err(Error::Argument(format!("event ({}, {}) outside sensor", e.x, e.y)));
        }
        let bin = ((e.t - first) as u64 * t_bins as u64 / span) as usize;
        frames[((bin * 2 + e.polarity.channel()) * h + e.y as usize) * w + e.x as usize] = 1;
    }
    Ok(frames)
}

/// Binary frame sequences with labels, stored `[n, t, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeDataset {
    pub t_steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<u8>,
    pub labels: Vec<u8>,
}

impl SpikeDataset {
    pub fn new(t_steps: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            t_steps,
            channels,
            height,
            width,
            frames: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sample_len(&self) -> usize {
        self.t_steps * self.frame_len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, frames: &[u8], label: u8) -> Result<()> {
        if frames.len() != self.sample_len() {
            return Err(Error::shape(
                "spike sample",
                &[self.t_steps, self.channels, self.height, self.width],
                &[frames.len()],
            ));
        }
        self.frames.extend_from_slice(frames);
        self.labels.push(label);
        Ok(())
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn frame(&self, i: usize, t: usize) -> &[u8] {
        let f = self.frame_len();
        &self.sample(i)[t * f..(t + 1) * f]
    }

    /// Frame `t` of several samples as a dense `[batch, c, h, w]` block.
    pub fn batch_frame(&self, indices: &[usize], t: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            out.extend(self.frame(i, t).iter().map(|&v| v as f32));
        }
        out
    }

    /// Keep only the listed samples, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.t_steps, self.channels, self.height, self.width);
        for &i in indices {
            out.frames.extend_from_slice(self.sample(i));
            out.labels.push(self.labels[i]);
        }
        out
    }
}

/// Bin the event files under `root/<digit>/` into a dataset. Files are
/// visited in sorted order so the result is deterministic.
pub fn load_nmnist_dir(root: impl AsRef<Path>, t_bins: usize) -> Result<SpikeDataset> {
    let root = root.as_ref();
    let mut ds = SpikeDataset::new(t_bins, 2, NMNIST_SIZE, NMNIST_SIZE);
    for digit in 0..10u8 {
        let dir = root.join(digit.to_string());
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        for f in files {
            let frames = bin_events(&load_nmnist(&f)?, t_bins)?;
            ds.push(&frames, digit)?;
        }
    }
    Ok(ds)
}

/// A raw IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_U8: u8 = 0x08;

/// Read an unsigned-byte IDX file; gzip input is detected by its magic.
pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |offset: usize, reason: String| Error::Format {
        format: "IDX",
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 {
        return Err(bad(0, "file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != IDX_U8 {
        return Err(bad(0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(bad(4, format!("header needs {ndim} dimensions")));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() - header != n {
        return Err(bad(header, format!("dims {dims:?} need {n} data bytes, found {}", bytes.len() - header)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Write an unsigned-byte IDX file, gzip-compressed when `path` ends in
/// `.gz`.
pub fn write_idx(path: impl AsRef<Path>, dims: &[usize], data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::shape("IDX data", dims, &[data.len()]));
    }
    let mut bytes = vec![0, 0, IDX_U8, dims.len() as u8];
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend_from_slice(data);
    let bytes = if path.extension().is_some_and(|x| x == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::best());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    write_atomic(path, &bytes)
}

/// Write via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Grey-scale images in `[0, 1]` with labels, stored `[n, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The image scaled back to bytes.
    pub fn image_bytes(&self, i: usize) -> Vec<u8> {
        self.image(i).iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            height: self.height,
            width: self.width,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Load an MNIST image/label IDX pair.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ImageDataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(Error::Format {
            format: "IDX",
            offset: 3,
            reason: format!("image file has {} dimensions, expected 3", img.dims.len()),
        });
    }
    if lab.dims.len() != 1 {
        return Err(Error::Format {
            format: "IDX",
            offset: 3,
            reason: format!("label file has {} dimensions, expected 1", lab.dims.len()),
        });
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format {
            format: "IDX",
            offset: 4,
            reason: format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        });
    }
    if let Some(pos) = lab.data.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            format: "IDX",
            offset: 8 + pos as u64,
            reason: format!("label {} outside 0..=9", lab.data[pos]),
        });
    }
    Ok(ImageDataset {
        height: img.dims[1],
        width: img.dims[2],
        pixels: img.data.iter().map(|&v| v as f32 / 255.0).collect(),
        labels: lab.data,
    })
}

/// The occluded square of an inpainting input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
}

impl MaskRegion {
    pub const CENTER_8: MaskRegion = MaskRegion {
        row0: 10,
        col0: 10,
        size: 8,
    };

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.size).contains(&row) && (self.col0..self.col0 + self.size).contains(&col)
    }
}

/// Zero the central 8x8 square (rows and columns 10..=17) of a 28x28 image.
pub fn apply_inpaint_mask(image: &[f32], height: usize, width: usize) -> Result<(Vec<f32>, MaskRegion)> {
    if height != MNIST_SIZE || width != MNIST_SIZE || image.len() != height * width {
        return Err(Error::shape("inpaint image", &[MNIST_SIZE, MNIST_SIZE], &[height, width, image.len()]));
    }
    let region = MaskRegion::CENTER_8;
    let mut out = image.to_vec();
    for r in region.row0..region.row0 + region.size {
        out[r * width + region.col0..r * width + region.col0 + region.size].fill(0.0);
    }
    Ok((out, region))
}

/// Per-class counts summing exactly to `n` (largest remainder).
fn allocate(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * n as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n.min(total) - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

fn by_class(labels: &[u8], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l as usize].push(i);
    }
    for g in &mut groups {
        g.shuffle(rng);
    }
    groups
}

/// Seeded stratified split into `(train, test)` with exactly `n_test`
/// test samples; both halves are shuffled.
pub fn stratified_split(labels: &[u8], n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_test > labels.len() {
        return Err(Error::Argument(format!("cannot hold out {n_test} of {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = by_class(labels, &mut rng);
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = allocate(&counts, n_test);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (g, &k) in groups.iter().zip(&alloc) {
        test.extend_from_slice(&g[..k]);
        train.extend_from_slice(&g[k..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// Seeded stratified subset of `n` indices drawn from `pool`.
pub fn stratified_subset(labels: &[u8], pool: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::Argument(format!("cannot draw {n} of {} samples", pool.len())));
    }
    let sub: Vec<u8> = pool.iter().map(|&i| labels[i]).collect();
    let (_, picked) = stratified_split(&sub, n, seed)?;
    Ok(picked.into_iter().map(|j| pool[j]).collect())
}

/// Parameters of the saccade event synthesizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaccadeConfig {
    /// Log-intensity change that triggers one event.
    pub contrast: f64,
    /// Relative per-pixel spread of the contrast threshold.
    pub mismatch: f64,
    /// Offset inside the logarithm, `L = ln(I + eps)`.
    pub eps: f64,
    pub dt_us: u32,
    pub duration_us: u32,
    /// Mean number of uniformly scattered noise events per recording.
    pub noise_events: f64,
}

impl Default for SaccadeConfig {
    fn default() -> Self {
        Self {
            contrast: 0.3,
            mismatch: 0.05,
            eps: 0.1,
            dt_us: 1000,
            duration_us: 300_000,
            noise_events: 20.0,
        }
    }
}

const SACCADE_VERTICES: [(f64, f64); 3] = [(0.5, 0.5), (5.5, 3.0), (0.5, 5.5)];

/// Sensor offset of the digit at time `t`: three eased saccades around a
/// triangle, one per third of the recording.
fn saccade_offset(t: f64, leg: f64) -> (f64, f64) {
    let k = ((t / leg) as usize).min(2);
    let s = (t - k as f64 * leg) / leg;
    let e = 0.5 - 0.5 * (std::f64::consts::PI * s).cos();
    let (a, b) = (SACCADE_VERTICES[k], SACCADE_VERTICES[(k + 1) % 3]);
    (a.0 + (b.0 - a.0) * e, a.1 + (b.1 - a.1) * e)
}

/// Bilinearly place a 28x28 image on the 34x34 sensor at a sub-pixel offset.
fn shifted_canvas(img: &[f64], ox: f64, oy: f64, canvas: &mut [f64]) {
    canvas.fill(0.0);
    let (ix, iy) = (ox.floor() as usize, oy.floor() as usize);
    let (fx, fy) = (ox - ox.floor(), oy - oy.floor());
    for (dx, dy, w) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if w == 0.0 {
            continue;
        }
        for r in 0..MNIST_SIZE {
            let dst = &mut canvas[(iy + dy + r) * NMNIST_SIZE + ix + dx..][..MNIST_SIZE];
            for (d, &s) in dst.iter_mut().zip(&img[r * MNIST_SIZE..(r + 1) * MNIST_SIZE]) {
                *d += w * s;
            }
        }
    }
}

/// Simulate an event camera watching a 28x28 digit make three saccades.
/// Each pixel fires one event per `contrast` step of log-intensity change
/// since its last event, ON for increases and OFF for decreases.
pub fn synthesize_events<R: Rng + ?Sized>(image: &[u8], cfg: &SaccadeConfig, rng: &mut R) -> Result<EventStream> {
    if image.len() != MNIST_SIZE * MNIST_SIZE {
        return Err(Error::shape("saccade image", &[MNIST_SIZE, MNIST_SIZE], &[image.len()]));
    }
    if !(cfg.contrast > 0.0) || cfg.dt_us == 0 || cfg.duration_us < cfg.dt_us || cfg.duration_us > MAX_TIMESTAMP {
        return Err(Error::Config("invalid saccade configuration".into()));
    }
    let n = NMNIST_SIZE * NMNIST_SIZE;
    let img: Vec<f64> = image.iter().map(|&v| v as f64 / 255.0).collect();
    let thr: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            cfg.contrast * (1.0 + cfg.mismatch * a)
        })
        .collect();
    let leg = cfg.duration_us as f64 / 3.0;
    let mut canvas = vec![0.0; n];
    let (ox, oy) = saccade_offset(0.0, leg);
    shifted_canvas(&img, ox, oy, &mut canvas);
    let mut reference: Vec<f64> = canvas.iter().map(|&v| (v + cfg.eps).ln()).collect();
    let mut stream = EventStream::new(NMNIST_SIZE, NMNIST_SIZE);
    for step in 1..=cfg.duration_us / cfg.dt_us {
        let t = step * cfg.dt_us;
        let (ox, oy) = saccade_offset(t as f64, leg);
        shifted_canvas(&img, ox, oy, &mut canvas);
        for (polarity, sign) in [(Polarity::On, 1.0), (Polarity::Off, -1.0)] {
            for p in 0..n {
                let d = (canvas[p] + cfg.eps).ln() - reference[p];
                let k = (sign * d / thr[p]).floor();
                if k < 1.0 {
                    continue;
                }
                for _ in 0..k as usize {
                    let jitter = rng.random_range(0..cfg.dt_us);
                    stream.events.push(Event {
                        x: (p % NMNIST_SIZE) as u8,
                        y: (p / NMNIST_SIZE) as u8,
                        polarity,
                        t: t - cfg.dt_us + jitter,
                    });
                }
                reference[p] += sign * k * thr[p];
            }
        }
    }
    if cfg.noise_events > 0.0 {
        let m: f64 = Poisson::new(cfg.noise_events)
            .map_err(|e| Error::Config(format!("noise rate: {e}")))?
            .sample(rng);
        for _ in 0..m as usize {
            stream.events.push(Event {
                t: rng.random_range(0..cfg.duration_us),
                x: rng.random_range(0..NMNIST_SIZE as u8),
                y: rng.random_range(0..NMNIST_SIZE as u8),
                polarity: if rng.random_bool(0.5) {
                    Polarity::On
                } else {
                    Polarity::Off
                },
            });
        }
    }
    stream.sort();
    Ok(stream)
}

/// RNG for sample `index` of a synthesized dataset; independent of the
/// order samples are generated in.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Event-camera version of an image dataset, binned into `t_bins` frames.
pub fn synthesize_spike_dataset(
    images: &ImageDataset,
    cfg: &SaccadeConfig,
    t_bins: usize,
    seed: u64,
) -> Result<SpikeDataset> {
    if images.height != MNIST_SIZE || images.width != MNIST_SIZE {
        return Err(Error::shape("saccade images", &[MNIST_SIZE, MNIST_SIZE], &[images.height, images.width]));
    }
    let mut ds = SpikeDataset::new(t_bins, 2, NMNIST_SIZE, NMNIST_SIZE);
    ds.frames.reserve(images.len() * ds.sample_len());
    for i in 0..images.len() {
        let stream = synthesize_events(&images.image_bytes(i), cfg, &mut sample_rng(seed, i))?;
        ds.push(&bin_events(&stream, t_bins)?, images.labels[i])?;
    }
    Ok(ds)
}
