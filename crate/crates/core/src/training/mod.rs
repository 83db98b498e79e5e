//! Alternating least-squares GAN training with an auxiliary-only warmup.
//!
//! Steps whose index is below `warmup_steps` update the generator on
//! `λ·L_aux` alone. Later steps first update the discriminators on the
//! detached generator output and then the generator on the full objective,
//! reusing one forward pass of `G` for both.

mod adam;
mod checkpoint;
mod data;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMetadata, TensorRecord, CHECKPOINT_VERSION};
pub use data::{list_wavs, Clip, Dataset, Segment};

use crate::discriminators::{DiscriminatorConfig, Discriminators};
use crate::dsp::{stft_magnitude_tensor, NormStats, StftParams};
use crate::error::{Error, Result};
use crate::generator::{sample_noise_with, Generator, GeneratorConfig, NOISE_DIM};
use crate::losses::{
    aux_loss_from_spectrograms, discriminator_loss, generator_adversarial_loss, LossBreakdown,
};
use crate::nn::{Module, NamedParam};
use crate::tensor::Tensor;

const G_PREFIX: &str = "generator.";
const D_PREFIX: &str = "discriminators.";

/// Training hyperparameters, read from a JSON file with exactly these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub seed: u64,
    pub lambda_aux: f64,
    /// Generator channel size `c_G`.
    pub channels: usize,
    pub mrsd_channels: usize,
    pub mpwd_channels: Vec<usize>,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub no_lvc: bool,
    pub no_gau: bool,
    pub no_mrsd: bool,
    pub no_mpwd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = DiscriminatorConfig::default();
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            batch_size: 4,
            segment_frames: 32,
            warmup_steps: 100,
            total_steps: 1000,
            seed: 0,
            lambda_aux: crate::losses::LAMBDA_AUX,
            channels: 16,
            mrsd_channels: d.mrsd_channels,
            mpwd_channels: d.mpwd_channels,
            checkpoint_interval: 500,
            log_interval: 1,
            no_lvc: false,
            no_gau: false,
            no_mrsd: false,
            no_mpwd: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps must not exceed total_steps");
        }
        if self.segment_frames < 8 {
            return bad("segment_frames must be at least 8");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("need lr > 0 and betas in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.lambda_aux >= 0.0) {
            return bad("need eps > 0 and lambda_aux ≥ 0");
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return bad("checkpoint_interval and log_interval must be at least 1");
        }
        self.generator_config().validate()?;
        self.discriminator_config().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: self.channels,
            no_lvc: self.no_lvc,
            no_gau: self.no_gau,
            ..GeneratorConfig::default()
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            mrsd_channels: self.mrsd_channels,
            mpwd_channels: self.mpwd_channels.clone(),
            use_mrsd: !self.no_mrsd,
            use_mpwd: !self.no_mpwd,
            ..DiscriminatorConfig::default()
        }
    }
}

fn prefixed(prefix: &str, params: Vec<NamedParam<f32>>) -> Vec<NamedParam<f32>> {
    params
        .into_iter()
        .map(|p| NamedParam {
            name: format!("{prefix}{}", p.name),
            tensor: p.tensor,
        })
        .collect()
}

fn value(t: &Tensor<f32>) -> f64 {
    t.item() as f64
}

/// Generator, discriminators, optimizers and sampling state.
pub struct Trainer {
    config: TrainConfig,
    generator: Generator<f32>,
    discriminators: Discriminators<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    stats: NormStats,
    aux_sets: Vec<StftParams>,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let (g_seed, d_seed, r_seed): (u64, u64, u64) = (seeds.random(), seeds.random(), seeds.random());
        let generator = Generator::new(config.generator_config(), g_seed)?;
        let discriminators = Discriminators::new(config.discriminator_config(), d_seed)?;
        let opt_g = Adam::new(prefixed(G_PREFIX, generator.parameters()), config.adam());
        let opt_d = Adam::new(prefixed(D_PREFIX, discriminators.parameters()), config.adam());
        Ok(Self {
            aux_sets: StftParams::MULTI_RESOLUTION.to_vec(),
            config,
            generator,
            discriminators,
            opt_g,
            opt_d,
            stats,
            rng: ChaCha8Rng::seed_from_u64(r_seed),
            step: 0,
        })
    }

    /// Rebuilds the full training state saved by [`Self::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.metadata;
        let mut t = Self::new(meta.train_config.clone(), meta.norm_stats.clone())?;
        if t.generator.config() != &meta.generator
            || t.discriminators.config() != &meta.discriminator
        {
            return Err(Error::format(
                "checkpoint",
                "model configuration disagrees with the stored training config",
            ));
        }
        ckpt.assign(G_PREFIX, &t.generator.parameters())?;
        ckpt.assign(D_PREFIX, &t.discriminators.parameters())?;
        t.opt_g.restore(meta.adam_steps[0], |n| ckpt.moments(n))?;
        t.opt_d.restore(meta.adam_steps[1], |n| ckpt.moments(n))?;
        let pos: u128 = meta
            .rng_word_pos
            .parse()
            .map_err(|_| Error::format("checkpoint", "bad RNG position"))?;
        t.rng.set_word_pos(pos);
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminators(&self) -> &Discriminators<f32> {
        &self.discriminators
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.config.warmup_steps
    }

    /// Samples a batch from `data` and runs one step.
    pub fn train_step(&mut self, data: &Dataset) -> Result<LossBreakdown> {
        let frames = self.config.segment_frames;
        let batch = (0..self.config.batch_size)
            .map(|_| data.sample(&mut self.rng, frames))
            .collect::<Result<Vec<_>>>()?;
        self.step_on(&batch)
    }

    /// One optimization step on the given segments; losses are averaged
    /// over the batch.
    pub fn step_on(&mut self, batch: &[Segment]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f32;
        let lambda = self.config.lambda_aux;
        let warmup = self.in_warmup();
        let mut out = LossBreakdown {
            l_sc: vec![0.0; self.aux_sets.len()],
            l_mag: vec![0.0; self.aux_sets.len()],
            lambda,
            ..LossBreakdown::default()
        };

        struct Item {
            wave: Tensor<f32>,
            fake: Tensor<f32>,
            s_real: Vec<Tensor<f32>>,
            s_fake: Vec<Tensor<f32>>,
        }
        let mut items = Vec::with_capacity(batch.len());
        for seg in batch {
            let frames = seg.cond.shape()[1];
            let z = sample_noise_with(&mut self.rng, NOISE_DIM, frames);
            let fake = self.generator.forward(&z, &seg.cond)?;
            let spec = |w: &Tensor<f32>| -> Result<Vec<Tensor<f32>>> {
                self.aux_sets.iter().map(|&p| stft_magnitude_tensor(w, p)).collect()
            };
            items.push(Item {
                s_real: spec(&seg.wave)?,
                s_fake: spec(&fake)?,
                wave: seg.wave.clone(),
                fake,
            });
        }

        let d_specs = |s: &[Tensor<f32>]| -> Vec<Tensor<f32>> {
            if self.config.no_mrsd {
                Vec::new()
            } else {
                s.to_vec()
            }
        };

        if !warmup {
            self.opt_d.zero_grad();
            for it in &items {
                let real = self
                    .discriminators
                    .forward_with_spectrograms(&it.wave, &d_specs(&it.s_real))?;
                let s_fake: Vec<_> = it.s_fake.iter().map(Tensor::detach).collect();
                let fake = self
                    .discriminators
                    .forward_with_spectrograms(&it.fake.detach(), &d_specs(&s_fake))?;
                let l_d = discriminator_loss(&real, &fake)?;
                out.l_d += value(&l_d) * scale as f64;
                l_d.scale(scale).backward()?;
            }
            self.opt_d.step()?;
        }

        self.opt_g.zero_grad();
        // the adversarial term needs gradients through D, not for D's weights
        self.discriminators.set_frozen(true);
        let discriminators = &self.discriminators;
        let g_pass = items.iter().try_for_each(|it| -> Result<()> {
            let aux = aux_loss_from_spectrograms(&it.s_real, &it.s_fake)?;
            for (i, (sc, mag)) in aux.sc.iter().zip(&aux.mag).enumerate() {
                out.l_sc[i] += sc * scale as f64;
                out.l_mag[i] += mag * scale as f64;
            }
            let l_aux = value(&aux.total);
            out.l_aux += l_aux * scale as f64;
            let mut l_g = aux.total.scale(lambda as f32);
            if !warmup {
                let scores = discriminators
                    .forward_with_spectrograms(&it.fake, &d_specs(&it.s_fake))?;
                let adv = generator_adversarial_loss(&scores)?;
                out.l_adv_g += value(&adv) * scale as f64;
                l_g = l_g.add(&adv)?;
            }
            l_g.scale(scale).backward()?;
            Ok(())
        });
        self.discriminators.set_frozen(false);
        g_pass?;
        out.l_g = lambda * out.l_aux + out.l_adv_g;
        self.opt_g.step()?;

        if !out.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: {out:?}",
                self.step + 1
            )));
        }
        self.step += 1;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let records = |prefix: &str, ps: Vec<NamedParam<f32>>| -> Vec<TensorRecord> {
            ps.iter().map(|p| TensorRecord::from_param(prefix, p)).collect()
        };
        let mut tensors = records(G_PREFIX, self.generator.parameters());
        tensors.extend(records(D_PREFIX, self.discriminators.parameters()));
        let mut optimizer = Vec::new();
        for opt in [&self.opt_g, &self.opt_d] {
            for (name, m, v) in opt.moments() {
                for (tag, data) in [("m", m), ("v", v)] {
                    optimizer.push(TensorRecord {
                        name: format!("{tag}.{name}"),
                        shape: vec![data.len()],
                        data: data.to_vec(),
                    });
                }
            }
        }
        Checkpoint {
            step: self.step,
            tensors,
            optimizer,
            metadata: CheckpointMetadata {
                train_config: self.config.clone(),
                generator: self.generator.config().clone(),
                discriminator: self.discriminators.config().clone(),
                norm_stats: self.stats.clone(),
                generator_params: self.generator.num_params(),
                discriminator_params: self.discriminators.num_params(),
                adam_steps: [self.opt_g.steps(), self.opt_d.steps()],
                rng_word_pos: self.rng.get_word_pos().to_string(),
            },
        }
    }
}

/// Rebuilds the generator stored in a checkpoint for inference.
pub fn load_generator(ckpt: &Checkpoint) -> Result<Generator<f32>> {
    let g = Generator::new(ckpt.metadata.generator.clone(), 0)?;
    ckpt.assign(G_PREFIX, &g.parameters())?;
    Ok(g)
}

/// CSV header for a loss log with `m` resolutions.
pub fn loss_csv_header(m: usize) -> String {
    let mut cols = vec!["step".to_string(), "l_aux".into()];
    cols.extend((0..m).map(|i| format!("l_sc_{i}")));
    cols.extend((0..m).map(|i| format!("l_mag_{i}")));
    cols.extend(["l_adv_g".into(), "l_g".into(), "l_d".into()]);
    cols.join(",")
}

pub fn loss_csv_row(step: u64, l: &LossBreakdown) -> String {
    let mut cols = vec![step.to_string(), format!("{:.9e}", l.l_aux)];
    cols.extend(l.l_sc.iter().chain(&l.l_mag).map(|v| format!("{v:.9e}")));
    cols.extend([l.l_adv_g, l.l_g, l.l_d].iter().map(|v| format!("{v:.9e}")));
    cols.join(",")
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub last: Option<LossBreakdown>,
    pub loss_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:07}.uvc"))
}

/// Runs `trainer` until `total_steps`, appending to `out_dir/loss.csv` and
/// writing a checkpoint every `checkpoint_interval` steps and at the end.
/// `on_step` sees the trainer after every completed step.
pub fn train(
    trainer: &mut Trainer,
    data: &Dataset,
    out_dir: &Path,
    mut on_step: impl FnMut(&Trainer, &LossBreakdown) -> Result<()>,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    data.check_segment_frames(trainer.config.segment_frames)?;
    let log_path = out_dir.join("loss.csv");
    let fresh = trainer.step == 0 || !log_path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| Error::io(&log_path, e);
    if fresh {
        writeln!(log, "{}", loss_csv_header(trainer.aux_sets.len())).map_err(io)?;
    }
    let total = trainer.config.total_steps;
    let mut summary = TrainSummary {
        steps: 0,
        last: None,
        loss_log: log_path.clone(),
        checkpoints: Vec::new(),
    };
    while trainer.step < total {
        let l = trainer.train_step(data)?;
        let step = trainer.step;
        if step % trainer.config.log_interval == 0 || step == total {
            writeln!(log, "{}", loss_csv_row(step, &l)).map_err(io)?;
        }
        if step % trainer.config.checkpoint_interval == 0 || step == total {
            log.flush().map_err(io)?;
            let path = checkpoint_path(out_dir, step);
            trainer.checkpoint().save(&path)?;
            summary.checkpoints.push(path);
        }
        on_step(trainer, &l)?;
        summary.steps += 1;
        summary.last = Some(l);
    }
    log.flush().map_err(io)?;
    Ok(summary)
}
