//! Reproducible Brownian increments.
//!
//! Every particle owns an independent ChaCha8 stream (key = master seed, stream id =
//! particle). Standard normals are produced in Box-Muller pairs at fixed word offsets,
//! so normal number `n` of a stream can be reached by seeking, independent of how
//! the other streams were consumed. Normal `step * m + c` drives component `c` of the
//! fine increment at fine step `step`.
//!
//! A coarse increment over `2^j` fine steps is the pairwise (dyadic tree) sum of the
//! fine increments it covers, so a level-`j` increment is bit-exactly the sum of the
//! two level-`j-1` increments below it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TemError};

/// u32 words consumed per Box-Muller pair (two u64 draws).
const WORDS_PER_PAIR: u128 = 4;

/// SplitMix64 finalizer used to derive independent sub-run seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential standard-normal stream with random access by index.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    cached: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalStream { rng, cached: None }
    }

    /// Positions the stream so the next draw is normal number `index`.
    pub fn seek(&mut self, index: u64) {
        let pair = index / 2;
        self.rng.set_word_pos(pair as u128 * WORDS_PER_PAIR);
        self.cached = None;
        if index % 2 == 1 {
            self.next_normal();
        }
    }

    fn uniform_open(&mut self) -> f64 {
        // (0, 1]: avoids ln(0).
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.cached = Some(radius * s);
        radius * c
    }
}

/// Pairwise sum over a power-of-two slice, matching the coarse-increment tree.
pub fn dyadic_sum(values: &[f64]) -> f64 {
    assert!(
        values.len().is_power_of_two(),
        "dyadic_sum needs a power-of-two length"
    );
    let mut buf = values.to_vec();
    let mut width = buf.len();
    while width > 1 {
        width /= 2;
        for i in 0..width {
            buf[i] = buf[2 * i] + buf[2 * i + 1];
        }
    }
    buf[0]
}

/// Deterministic map (particle, fine step, component) -> Brownian increment.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub master_seed: u64,
    pub fine_dt: f64,
    /// Brownian dimension m.
    pub dim_noise: usize,
    /// Optional stream id per particle; identity when absent.
    pub streams: Option<Vec<u64>>,
}

impl NoisePlan {
    pub fn new(master_seed: u64, fine_dt: f64, dim_noise: usize) -> Result<Self> {
        if !(fine_dt > 0.0) || !fine_dt.is_finite() {
            return Err(TemError::config("dt", "fine step must be positive"));
        }
        Ok(NoisePlan {
            master_seed,
            fine_dt,
            dim_noise,
            streams: None,
        })
    }

    /// Replaces the identity particle -> stream map.
    pub fn with_streams(mut self, streams: Vec<u64>) -> Self {
        self.streams = Some(streams);
        self
    }

    pub fn stream_of(&self, particle: usize) -> u64 {
        self.streams
            .as_ref()
            .map_or(particle as u64, |s| s[particle])
    }

    /// `log2(dt / fine_dt)`, or a configuration error when the ratio is not a power of two.
    pub fn level_for(&self, dt: f64) -> Result<u32> {
        dyadic_level(dt, self.fine_dt)
    }

    /// Fine increment for one (particle, fine step, component), by random access.
    pub fn fine_increment(&self, particle: usize, step: u64, component: usize) -> f64 {
        let mut s = NormalStream::new(self.master_seed, self.stream_of(particle));
        s.seek(step * self.dim_noise as u64 + component as u64);
        self.fine_dt.sqrt() * s.next_normal()
    }

    /// Sequential increment source for `particles` particles stepping at `dt`.
    pub fn source(&self, particles: usize, dt: f64) -> Result<NoiseSource> {
        if let Some(s) = &self.streams {
            if s.len() < particles {
                return Err(TemError::config("noise", "fewer stream ids than particles"));
            }
        }
        let level = self.level_for(dt)?;
        let streams = (0..particles)
            .map(|i| NormalStream::new(self.master_seed, self.stream_of(i)))
            .collect();
        Ok(NoiseSource {
            streams,
            level,
            dim_noise: self.dim_noise,
            sqrt_fine_dt: self.fine_dt.sqrt(),
        })
    }
}

/// `log2(coarse / fine)` when the ratio is an exact power of two.
pub fn dyadic_level(coarse: f64, fine: f64) -> Result<u32> {
    let ratio = coarse / fine;
    let level = ratio.log2().round();
    if !(level >= 0.0)
        || level > 62.0
        || (2f64.powi(level as i32) * fine - coarse).abs() > 1e-12 * coarse
    {
        return Err(TemError::NonDyadic {
            field: "dt".into(),
            coarse,
            fine,
        });
    }
    Ok(level as u32)
}

/// Per-particle streams advanced one coarse step at a time.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    streams: Vec<NormalStream>,
    level: u32,
    dim_noise: usize,
    sqrt_fine_dt: f64,
}

/// Particles per rayon task.
pub(crate) const PAR_CHUNK: usize = 64;

impl NoiseSource {
    pub fn particles(&self) -> usize {
        self.streams.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Fills `out` (particles x m, row-major) with the next coarse increments.
    pub fn fill_next(&mut self, out: &mut [f64]) {
        let m = self.dim_noise;
        assert_eq!(out.len(), self.streams.len() * m);
        let fine_per_coarse = 1usize << self.level;
        let sqrt_fine_dt = self.sqrt_fine_dt;
        self.streams
            .par_iter_mut()
            .zip(out.par_chunks_mut(m))
            .with_min_len(PAR_CHUNK)
            .for_each_init(
                || vec![0.0; fine_per_coarse * m],
                |buf, (stream, dst)| {
                    // buf[c * width + n] holds component c of fine step n.
                    for n in 0..fine_per_coarse {
                        for c in 0..m {
                            buf[c * fine_per_coarse + n] = sqrt_fine_dt * stream.next_normal();
                        }
                    }
                    for (c, slot) in dst.iter_mut().enumerate() {
                        let row = &mut buf[c * fine_per_coarse..(c + 1) * fine_per_coarse];
                        let mut width = fine_per_coarse;
                        while width > 1 {
                            width /= 2;
                            for i in 0..width {
                                row[i] = row[2 * i] + row[2 * i + 1];
                            }
                        }
                        *slot = row[0];
                    }
                },
            );
    }
}
