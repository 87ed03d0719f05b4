//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SWAT" | u32 version
//! str config snapshot (key=value text)
//! u32 layers, per layer: u8 kind, u8 has_running, u32 params, per param 4 x u32 shape
//! per layer: params as f32, momentum as f32, running mean/var as f32
//! u64 iter | u64 epoch | u64 iters_per_epoch
//! u32 plan entries, per entry: f64 weight sparsity, f64 activation sparsity, u8 exempt
//! u64 period | u32 cache entries, per entry: u32 layer, u32 n, n x f64, f64 activation, u64 last sample
//! masks | u8 frozen flag [frozen masks]
//! 32-byte rng seed | u64 stream | u128 word position
//! ```
//!
//! `str` is a u32 byte length and UTF-8 bytes; masks are a u32 count, then per
//! layer a u8 presence flag, u32 length and packed bits.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use swat_core::layer::LayerKind;
use swat_core::sparsify::CacheEntry;
use swat_core::{Architecture, Network, Shape4, Tensor4, ThresholdCache, Trainer};

use crate::config_file::parse_config;
use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 4] = b"SWAT";
pub const VERSION: u32 = 1;

const KINDS: [LayerKind; 7] = [
    LayerKind::Conv,
    LayerKind::Linear,
    LayerKind::BatchNorm,
    LayerKind::Relu,
    LayerKind::MaxPool,
    LayerKind::AvgPool,
    LayerKind::Flatten,
];

type Masks = Vec<Option<Vec<bool>>>;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn masks(&mut self, masks: &Masks) {
        self.u32(masks.len());
        for m in masks {
            match m {
                None => self.u8(0),
                Some(bits) => {
                    self.u8(1);
                    self.u32(bits.len());
                    for chunk in bits.chunks(8) {
                        self.u8(chunk.iter().enumerate().fold(0, |b, (i, &on)| b | (on as u8) << i));
                    }
                }
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let b = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
    fn masks(&mut self) -> std::result::Result<Masks, String> {
        let n = self.u32()?;
        (0..n)
            .map(|_| {
                if self.u8()? == 0 {
                    return Ok(None);
                }
                let len = self.u32()?;
                let packed = self.take(len.div_ceil(8))?;
                Ok(Some((0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect()))
            })
            .collect()
    }
}

fn kind_code(kind: LayerKind) -> u8 {
    KINDS.iter().position(|k| *k == kind).unwrap() as u8
}

/// Serializes everything needed to continue training bit for bit.
pub fn encode(t: &Trainer<f32>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.str(&crate::config_file::to_config_text(&t.config));
    let layers = t.network.layers();
    w.u32(layers.len());
    for l in layers {
        w.u8(kind_code(l.spec().kind()));
        w.u8(l.running.is_some() as u8);
        w.u32(l.params.len());
        for p in &l.params {
            let s = p.shape();
            for d in [s.n, s.c, s.h, s.w] {
                w.u32(d);
            }
        }
    }
    for l in layers {
        for p in l.params.iter().chain(&l.momentum) {
            w.f32s(p.data());
        }
        if let Some(r) = &l.running {
            w.f32s(&r.mean);
            w.f32s(&r.var);
        }
    }
    w.u64(t.iter);
    w.u64(t.epoch as u64);
    w.u64(t.iters_per_epoch);
    w.u32(t.plan.entries.len());
    for e in &t.plan.entries {
        w.f64(e.weight_sparsity);
        w.f64(e.activation_sparsity);
        w.u8(e.exempt as u8);
    }
    w.u64(t.cache.period());
    let entries: Vec<_> = t.cache.entries().collect();
    w.u32(entries.len());
    for (layer, e) in entries {
        w.u32(layer);
        w.u32(e.weight.len());
        for &v in &e.weight {
            w.f64(v);
        }
        w.f64(e.activation);
        w.u64(e.last_sample_iter);
    }
    w.masks(&t.masks);
    match &t.frozen_masks {
        None => w.u8(0),
        Some(m) => {
            w.u8(1);
            w.masks(m);
        }
    }
    w.0.extend_from_slice(&t.rng.get_seed());
    w.u64(t.rng.get_stream());
    w.0.extend_from_slice(&t.rng.get_word_pos().to_le_bytes());
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Trainer<f32>> {
    decode_inner(bytes).map_err(|msg| CliError::Format {
        path: path.to_path_buf(),
        msg,
    })
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Trainer<f32>, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a SWAT checkpoint (bad magic)".into());
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version} (this build reads {VERSION})"));
    }
    let config = parse_config(&r.str()?).map_err(|e| format!("config snapshot: {e}"))?;
    let arch = Architecture::by_name(&config.arch).map_err(|e| e.to_string())?;
    let mut network = Network::<f32>::from_arch(arch, config.seed).map_err(|e| e.to_string())?;
    let n = r.u32()?;
    if n != network.len() {
        return Err(format!("layer table has {n} layers, architecture `{}` has {}", config.arch, network.len()));
    }
    for (id, l) in network.layers().iter().enumerate() {
        let kind = KINDS.get(r.u8()? as usize).copied().ok_or("unknown layer kind")?;
        let has_running = r.u8()? == 1;
        let np = r.u32()?;
        if kind != l.spec().kind() || has_running != l.running.is_some() || np != l.params.len() {
            return Err(format!("layer {id}: table entry does not match the architecture"));
        }
        for p in &l.params {
            let s = Shape4::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            if s != p.shape() {
                return Err(format!("layer {id}: parameter shape {s} differs from {}", p.shape()));
            }
        }
    }
    for l in network.layers_mut() {
        for p in l.params.iter_mut().chain(l.momentum.iter_mut()) {
            *p = Tensor4::from_vec(p.shape(), r.f32s(p.len())?).map_err(|e| e.to_string())?;
        }
        if let Some(rs) = &mut l.running {
            rs.mean = r.f32s(rs.mean.len())?;
            rs.var = r.f32s(rs.var.len())?;
        }
    }
    let mut t = Trainer::with_network(config, network).map_err(|e| e.to_string())?;
    t.iter = r.u64()?;
    t.epoch = r.u64()? as usize;
    t.iters_per_epoch = r.u64()?;
    let ne = r.u32()?;
    if ne != t.plan.entries.len() {
        return Err(format!("{ne} plan entries for {} layers", t.plan.entries.len()));
    }
    for e in &mut t.plan.entries {
        e.weight_sparsity = r.f64()?;
        e.activation_sparsity = r.f64()?;
        e.exempt = r.u8()? == 1;
    }
    let mut cache = ThresholdCache::new(r.u64()?).map_err(|e| e.to_string())?;
    for _ in 0..r.u32()? {
        let layer = r.u32()?;
        let nw = r.u32()?;
        let weight = (0..nw).map(|_| r.f64()).collect::<std::result::Result<_, _>>()?;
        let activation = r.f64()?;
        let last_sample_iter = r.u64()?;
        cache.insert(
            layer,
            CacheEntry {
                weight,
                activation,
                last_sample_iter,
            },
        );
    }
    t.cache = cache;
    t.masks = r.masks()?;
    t.frozen_masks = if r.u8()? == 1 { Some(r.masks()?) } else { None };
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    t.rng = rng;
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(t)
}

pub fn save(path: &Path, t: &Trainer<f32>) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Trainer<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}
