//! Conditional GAN over mode-normalized rows. The condition is the tercile
//! of the target column.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::{self, Linear, LinearGrad};
use super::normalizer::ModeNormalizer;
use super::{AugmentError, Condition, Provenance, SyntheticBatch, TERCILES};
use crate::metrics;
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub embedding_dim: usize,
    pub generator_dims: (usize, usize),
    pub discriminator_dims: (usize, usize),
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pac: usize,
    pub momentum: f64,
    /// Upper bound on mixture components per column.
    pub components: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            embedding_dim: 32,
            generator_dims: (64, 64),
            discriminator_dims: (64, 64),
            generator_lr: 0.01,
            discriminator_lr: 0.01,
            batch_size: 25,
            epochs: 500,
            pac: 10,
            momentum: 0.5,
            components: 3,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("generator_dims.0", self.generator_dims.0),
            ("generator_dims.1", self.generator_dims.1),
            ("discriminator_dims.0", self.discriminator_dims.0),
            ("discriminator_dims.1", self.discriminator_dims.1),
            ("batch_size", self.batch_size),
            ("pac", self.pac),
            ("components", self.components),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AugmentError::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size < self.pac {
            return Err(AugmentError::Config(format!(
                "batch_size {} is smaller than pac {}",
                self.batch_size, self.pac
            )));
        }
        for (name, v) in [("generator_lr", self.generator_lr), ("discriminator_lr", self.discriminator_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AugmentError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AugmentError::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Batch actually used for `n` training rows: the configured size capped
    /// at `n`, rounded down to a multiple of `pac`. The configured size need
    /// not itself be a multiple of `pac`.
    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n) / self.pac * self.pac
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Softmax temperature of the mode blocks.
pub const TEMPERATURE: f64 = 0.2;

/// Column layout of the generator output: a tanh scalar followed by a
/// softmax block per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLayout {
    pub blocks: Vec<(usize, usize)>,
}

impl OutputLayout {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(|(_, k)| 1 + k).sum()
    }

    /// Applies tanh to each scalar and a tempered softmax to each mode
    /// block. With `gumbel`, Gumbel noise is added to the mode logits so the
    /// block approximates a one-hot draw.
    fn activate(&self, raw: &DMatrix<f64>, mut gumbel: Option<&mut SeededRng>) -> DMatrix<f64> {
        let mut out = raw.clone();
        for mut row in out.row_iter_mut() {
            for &(off, k) in &self.blocks {
                row[off] = row[off].tanh();
                for c in 0..k {
                    let g = match gumbel.as_deref_mut() {
                        Some(r) => -(-(r.random::<f64>().max(f64::MIN_POSITIVE)).ln()).ln(),
                        None => 0.0,
                    };
                    row[off + 1 + c] = (row[off + 1 + c] + g) / TEMPERATURE;
                }
                let m = (0..k).map(|c| row[off + 1 + c]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for c in 0..k {
                    let e = (row[off + 1 + c] - m).exp();
                    row[off + 1 + c] = e;
                    s += e;
                }
                for c in 0..k {
                    row[off + 1 + c] /= s;
                }
            }
        }
        out
    }

    /// Gradient wrt the raw output given the activated output `act`.
    fn activate_backward(&self, act: &DMatrix<f64>, d_act: &DMatrix<f64>) -> DMatrix<f64> {
        let mut d = d_act.clone();
        for i in 0..act.nrows() {
            for &(off, k) in &self.blocks {
                d[(i, off)] = d_act[(i, off)] * (1.0 - act[(i, off)] * act[(i, off)]);
                let dot: f64 = (0..k).map(|c| d_act[(i, off + 1 + c)] * act[(i, off + 1 + c)]).sum();
                for c in 0..k {
                    let j = off + 1 + c;
                    d[(i, j)] = act[(i, j)] * (d_act[(i, j)] - dot) / TEMPERATURE;
                }
            }
        }
        d
    }
}

/// Generator with residual blocks `h -> [relu(W h + b) | h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub embedding_dim: usize,
    pub layout: OutputLayout,
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
}

pub struct GenPass {
    input: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    z2: DMatrix<f64>,
    h2: DMatrix<f64>,
    pub out: DMatrix<f64>,
}

pub struct GenGrads {
    pub hidden1: LinearGrad,
    pub hidden2: LinearGrad,
    pub output: LinearGrad,
}

impl Generator {
    pub fn new(embedding_dim: usize, dims: (usize, usize), layout: OutputLayout, rng: &mut SeededRng) -> Self {
        let d0 = embedding_dim + TERCILES;
        let hidden1 = Linear::new(d0, dims.0, rng);
        let hidden2 = Linear::new(d0 + dims.0, dims.1, rng);
        let output = Linear::new(d0 + dims.0 + dims.1, layout.width(), rng);
        Generator {
            embedding_dim,
            layout,
            hidden1,
            hidden2,
            output,
        }
    }

    pub fn layers(&self) -> [&Linear; 3] {
        [&self.hidden1, &self.hidden2, &self.output]
    }

    /// `input` rows are `[noise | condition one-hot]`; `gumbel` perturbs the
    /// mode blocks.
    pub fn forward(&self, input: &DMatrix<f64>, gumbel: Option<&mut SeededRng>) -> GenPass {
        let z1 = self.hidden1.forward(input);
        let h1 = nn::hcat(&nn::relu(&z1), input);
        let z2 = self.hidden2.forward(&h1);
        let h2 = nn::hcat(&nn::relu(&z2), &h1);
        let out = self.layout.activate(&self.output.forward(&h2), gumbel);
        GenPass {
            input: input.clone(),
            z1,
            h1,
            z2,
            h2,
            out,
        }
    }

    pub fn backward(&self, pass: &GenPass, d_out: &DMatrix<f64>) -> GenGrads {
        let d_raw = self.layout.activate_backward(&pass.out, d_out);
        let (dh2, output) = self.output.backward(&pass.h2, &d_raw);
        let w2 = self.hidden2.output_dim();
        let dz2 = nn::relu_backward(&pass.z2, &dh2.columns(0, w2).into_owned());
        let (dh1_inner, hidden2) = self.hidden2.backward(&pass.h1, &dz2);
        let dh1 = dh1_inner + dh2.columns(w2, pass.h1.ncols());
        let w1 = self.hidden1.output_dim();
        let dz1 = nn::relu_backward(&pass.z1, &dh1.columns(0, w1).into_owned());
        let (_, hidden1) = self.hidden1.backward(&pass.input, &dz1);
        GenGrads { hidden1, hidden2, output }
    }

    fn step(&mut self, g: &GenGrads, lr: f64, momentum: f64) {
        self.hidden1.step(&g.hidden1, lr, momentum);
        self.hidden2.step(&g.hidden2, lr, momentum);
        self.output.step(&g.output, lr, momentum);
    }
}

/// Discriminator over `pac` rows at a time, each row `[encoded | condition]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub pac: usize,
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
}

pub struct DiscPass {
    input: DMatrix<f64>,
    z1: DMatrix<f64>,
    a1: DMatrix<f64>,
    z2: DMatrix<f64>,
    a2: DMatrix<f64>,
    pub logits: DMatrix<f64>,
}

pub struct DiscGrads {
    pub hidden1: LinearGrad,
    pub hidden2: LinearGrad,
    pub output: LinearGrad,
}

impl Discriminator {
    pub fn new(row_width: usize, pac: usize, dims: (usize, usize), rng: &mut SeededRng) -> Self {
        Discriminator {
            pac,
            hidden1: Linear::new(row_width * pac, dims.0, rng),
            hidden2: Linear::new(dims.0, dims.1, rng),
            output: Linear::new(dims.1, 1, rng),
        }
    }

    pub fn layers(&self) -> [&Linear; 3] {
        [&self.hidden1, &self.hidden2, &self.output]
    }

    /// `rows` are unpacked; their count must be a multiple of `pac`.
    pub fn forward(&self, rows: &DMatrix<f64>) -> DiscPass {
        let input = nn::pack(rows, self.pac);
        let z1 = self.hidden1.forward(&input);
        let a1 = nn::leaky_relu(&z1);
        let z2 = self.hidden2.forward(&a1);
        let a2 = nn::leaky_relu(&z2);
        let logits = self.output.forward(&a2);
        DiscPass {
            input,
            z1,
            a1,
            z2,
            a2,
            logits,
        }
    }

    /// Probability that each pack is real, strictly inside (0, 1) for
    /// finite logits of moderate size.
    pub fn probabilities(&self, rows: &DMatrix<f64>) -> Vec<f64> {
        self.forward(rows).logits.iter().map(|&l| nn::sigmoid(l)).collect()
    }

    /// Returns parameter gradients and the gradient wrt the unpacked rows.
    pub fn backward(&self, pass: &DiscPass, d_logits: &DMatrix<f64>) -> (DiscGrads, DMatrix<f64>) {
        let (da2, output) = self.output.backward(&pass.a2, d_logits);
        let dz2 = nn::leaky_relu_backward(&pass.z2, &da2);
        let (da1, hidden2) = self.hidden2.backward(&pass.a1, &dz2);
        let dz1 = nn::leaky_relu_backward(&pass.z1, &da1);
        let (d_in, hidden1) = self.hidden1.backward(&pass.input, &dz1);
        (DiscGrads { hidden1, hidden2, output }, nn::unpack(&d_in, self.pac))
    }

    fn step(&mut self, g: &DiscGrads, lr: f64, momentum: f64) {
        self.hidden1.step(&g.hidden1, lr, momentum);
        self.hidden2.step(&g.hidden2, lr, momentum);
        self.output.step(&g.output, lr, momentum);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub discriminator: f64,
    pub generator: f64,
}

/// A trained generator with everything needed to sample raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedGan {
    pub config: GanConfig,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub normalizer: ModeNormalizer,
    /// Target values splitting low/mid and mid/high.
    pub tercile_bounds: [f64; 2],
    pub effective_batch: usize,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<EpochLoss>,
}

/// Tercile of `y` given the two cut points.
pub fn tercile_of(y: f64, bounds: [f64; 2]) -> usize {
    if y <= bounds[0] {
        0
    } else if y <= bounds[1] {
        1
    } else {
        2
    }
}

fn noise_input(conds: &[usize], dim: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(conds.len(), dim + TERCILES);
    for (i, &k) in conds.iter().enumerate() {
        for j in 0..dim {
            x[(i, j)] = rng.sample(StandardNormal);
        }
        x[(i, dim + k)] = 1.0;
    }
    x
}

fn with_condition(rows: &DMatrix<f64>, conds: &[usize]) -> DMatrix<f64> {
    let c = DMatrix::from_fn(conds.len(), TERCILES, |i, j| if conds[i] == j { 1.0 } else { 0.0 });
    nn::hcat(rows, &c)
}

fn mean_softplus(logits: &DMatrix<f64>, sign: f64) -> f64 {
    logits.iter().map(|&l| nn::softplus(sign * l)).sum::<f64>() / logits.len() as f64
}

/// Trains on raw rows whose last column is the conditioning target.
pub fn train_gan_matrix(data: &DMatrix<f64>, columns: Vec<String>, cfg: &GanConfig) -> Result<TrainedGan, AugmentError> {
    cfg.validate()?;
    if columns.len() != data.ncols() || columns.is_empty() {
        return Err(AugmentError::Config(format!(
            "{} column names for {} columns",
            columns.len(),
            data.ncols()
        )));
    }
    let n = data.nrows();
    let batch = cfg.effective_batch(n);
    if batch == 0 {
        return Err(AugmentError::TooFewRows { rows: n, needed: cfg.pac });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(AugmentError::Config("training rows contain non-finite values".into()));
    }

    let normalizer = ModeNormalizer::fit(data, cfg.components, rng::derive_seed(cfg.seed, 0))?;
    let layout = OutputLayout {
        blocks: normalizer.layout(),
    };
    let width = layout.width();

    let target = data.ncols() - 1;
    let mut ys: Vec<f64> = data.column(target).iter().copied().collect();
    ys.sort_by(f64::total_cmp);
    let bounds = [
        metrics::quantile_sorted(&ys, 1.0 / 3.0),
        metrics::quantile_sorted(&ys, 2.0 / 3.0),
    ];
    let mut by_tercile: [Vec<usize>; TERCILES] = Default::default();
    for i in 0..n {
        by_tercile[tercile_of(data[(i, target)], bounds)].push(i);
    }

    let mut init_rng = rng::derived(cfg.seed, 1);
    let mut generator = Generator::new(cfg.embedding_dim, cfg.generator_dims, layout, &mut init_rng);
    let mut discriminator = Discriminator::new(width + TERCILES, cfg.pac, cfg.discriminator_dims, &mut init_rng);

    let mut rng = rng::derived(cfg.seed, 2);
    let encoded = normalizer.transform(data, &mut rng);
    let steps = (n / batch).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for _ in 0..steps {
            // Training-by-sampling: a uniform tercile, then a real row from it.
            let conds: Vec<usize> = (0..batch).map(|_| rng.random_range(0..TERCILES)).collect();
            let real_rows: Vec<usize> = conds
                .iter()
                .map(|&k| {
                    let bucket = if by_tercile[k].is_empty() { None } else { Some(&by_tercile[k]) };
                    match bucket {
                        Some(b) => b[rng.random_range(0..b.len())],
                        None => rng.random_range(0..n),
                    }
                })
                .collect();
            let real = with_condition(&encoded.select_rows(&real_rows), &conds);

            let noise = noise_input(&conds, cfg.embedding_dim, &mut rng);
            let fake_pass = generator.forward(&noise, Some(&mut rng));
            let fake = with_condition(&fake_pass.out, &conds);
            let packs = (batch / cfg.pac) as f64;

            let real_d = discriminator.forward(&real);
            let fake_d = discriminator.forward(&fake);
            let d_loss = mean_softplus(&real_d.logits, -1.0) + mean_softplus(&fake_d.logits, 1.0);
            let (g_real, _) = discriminator.backward(&real_d, &real_d.logits.map(|l| -(1.0 - nn::sigmoid(l)) / packs));
            let (g_fake, _) = discriminator.backward(&fake_d, &fake_d.logits.map(|l| nn::sigmoid(l) / packs));
            let g_disc = DiscGrads {
                hidden1: sum_grad(g_real.hidden1, &g_fake.hidden1),
                hidden2: sum_grad(g_real.hidden2, &g_fake.hidden2),
                output: sum_grad(g_real.output, &g_fake.output),
            };
            discriminator.step(&g_disc, cfg.discriminator_lr, cfg.momentum);

            // Non-saturating generator step against the updated discriminator.
            let conds: Vec<usize> = (0..batch).map(|_| rng.random_range(0..TERCILES)).collect();
            let noise = noise_input(&conds, cfg.embedding_dim, &mut rng);
            let gen_pass = generator.forward(&noise, Some(&mut rng));
            let fake = with_condition(&gen_pass.out, &conds);
            let fake_d = discriminator.forward(&fake);
            let g_loss = mean_softplus(&fake_d.logits, -1.0);
            let (_, d_rows) =
                discriminator.backward(&fake_d, &fake_d.logits.map(|l| -(1.0 - nn::sigmoid(l)) / packs));
            let grads = generator.backward(&gen_pass, &d_rows.columns(0, width).into_owned());
            generator.step(&grads, cfg.generator_lr, cfg.momentum);

            if !d_loss.is_finite() || !g_loss.is_finite() {
                return Err(AugmentError::Diverged { epoch });
            }
            d_sum += d_loss;
            g_sum += g_loss;
        }
        history.push(EpochLoss {
            discriminator: d_sum / steps as f64,
            generator: g_sum / steps as f64,
        });
    }

    Ok(TrainedGan {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        columns,
        normalizer,
        tercile_bounds: bounds,
        effective_batch: batch,
        generator,
        discriminator,
        history,
    })
}

fn sum_grad(mut a: LinearGrad, b: &LinearGrad) -> LinearGrad {
    a.w += &b.w;
    a.b += &b.b;
    a
}

/// Serialized generator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSnapshot {
    pub config_hash: String,
    pub columns: Vec<String>,
    /// `(inputs, outputs)` per layer.
    pub layer_shapes: Vec<(usize, usize)>,
    pub params: Vec<Vec<f64>>,
}

impl TrainedGan {
    pub fn snapshot(&self) -> GeneratorSnapshot {
        let layers = self.generator.layers();
        GeneratorSnapshot {
            config_hash: self.config_hash.clone(),
            columns: self.columns.clone(),
            layer_shapes: layers.iter().map(|l| (l.input_dim(), l.output_dim())).collect(),
            params: layers.iter().map(|l| l.flat_params()).collect(),
        }
    }

    /// Draws `n` rows in raw units. Rows that decode to non-finite values are
    /// redrawn, up to `10 * n` attempts in total.
    pub fn sample(&self, n: usize, condition: Condition, seed: u64) -> Result<SyntheticBatch, AugmentError> {
        if let Condition::Tercile(k) = condition {
            if k >= TERCILES {
                return Err(AugmentError::Config(format!("tercile {k} out of range")));
            }
        }
        let mut rng = rng::seeded(seed);
        let cols = self.columns.len();
        let mut rows: Vec<f64> = Vec::with_capacity(n * cols);
        let mut conditions = Vec::with_capacity(n);
        let mut attempts = 0;
        let mut resampled = 0;
        while conditions.len() < n {
            let want = n - conditions.len();
            if attempts + want > 10 * n {
                return Err(AugmentError::Sampling {
                    produced: conditions.len(),
                    requested: n,
                });
            }
            attempts += want;
            let conds: Vec<usize> = (0..want)
                .map(|_| match condition {
                    Condition::Tercile(k) => k,
                    Condition::Uniform => rng.random_range(0..TERCILES),
                })
                .collect();
            let noise = noise_input(&conds, self.generator.embedding_dim, &mut rng);
            let pass = self.generator.forward(&noise, Some(&mut rng));
            let raw = self.normalizer.inverse(&pass.out)?;
            for (i, &k) in conds.iter().enumerate() {
                let row = raw.row(i);
                if row.iter().all(|v| v.is_finite()) {
                    rows.extend(row.iter());
                    conditions.push(k);
                } else {
                    resampled += 1;
                }
            }
        }
        Ok(SyntheticBatch {
            columns: self.columns.clone(),
            rows: DMatrix::from_row_slice(n, cols, &rows),
            conditions,
            plausible: vec![true; n],
            provenance: Provenance {
                seed,
                epochs: self.history.len(),
                config_hash: self.config_hash.clone(),
                resampled,
                excluded: 0,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> OutputLayout {
        OutputLayout {
            blocks: vec![(0, 2), (3, 1)],
        }
    }

    #[test]
    fn activation_backward_matches_finite_differences() {
        let layout = small_layout();
        let mut r = rng::seeded(4);
        let raw = DMatrix::from_fn(2, 5, |_, _| r.random_range(-1.5..1.5));
        let weights = DMatrix::from_fn(2, 5, |_, _| r.random_range(-1.0..1.0));
        let loss = |m: &DMatrix<f64>| layout.activate(m, None).component_mul(&weights).sum();
        let analytic = layout.activate_backward(&layout.activate(&raw, None), &weights);
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..5 {
                let (mut up, mut down) = (raw.clone(), raw.clone());
                up[(i, j)] += eps;
                down[(i, j)] -= eps;
                let fd = (loss(&up) - loss(&down)) / (2.0 * eps);
                assert!((fd - analytic[(i, j)]).abs() < 1e-7, "({i},{j}) fd {fd} vs {}", analytic[(i, j)]);
            }
        }
    }

    /// Generator loss through a fixed discriminator, against finite
    /// differences on a sample of parameters from every layer.
    #[test]
    fn generator_and_discriminator_gradients_match_finite_differences() {
        let mut r = rng::seeded(8);
        let layout = small_layout();
        let g = Generator::new(3, (4, 5), layout.clone(), &mut r);
        let d = Discriminator::new(layout.width() + TERCILES, 2, (6, 4), &mut r);
        let conds = [0, 2, 1, 1];
        let input = noise_input(&conds, 3, &mut r);

        let loss = |g: &Generator, d: &Discriminator| {
            let fake = with_condition(&g.forward(&input, None).out, &conds);
            mean_softplus(&d.forward(&fake).logits, -1.0)
        };
        let pass = g.forward(&input, None);
        let fake = with_condition(&pass.out, &conds);
        let dp = d.forward(&fake);
        let packs = dp.logits.nrows() as f64;
        let (dg, d_rows) = d.backward(&dp, &dp.logits.map(|l| -(1.0 - nn::sigmoid(l)) / packs));
        let gg = g.backward(&pass, &d_rows.columns(0, layout.width()).into_owned());

        let eps = 1e-6;
        let check = |analytic: f64, up: f64, down: f64, what: &str| {
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - analytic).abs() / fd.abs().max(1e-6);
            assert!(err < 1e-4, "{what}: fd {fd} analytic {analytic}");
        };
        for layer in 0..3 {
            let count = g.layers()[layer].param_count();
            for k in (0..count).step_by(count / 7 + 1) {
                let shifted = |delta: f64| {
                    let mut g2 = g.clone();
                    let l = match layer {
                        0 => &mut g2.hidden1,
                        1 => &mut g2.hidden2,
                        _ => &mut g2.output,
                    };
                    *l.param_mut(k) += delta;
                    loss(&g2, &d)
                };
                let grads = [&gg.hidden1, &gg.hidden2, &gg.output];
                check(grads[layer].get(k), shifted(eps), shifted(-eps), &format!("G layer {layer} k {k}"));
            }
            let count = d.layers()[layer].param_count();
            for k in (0..count).step_by(count / 7 + 1) {
                let shifted = |delta: f64| {
                    let mut d2 = d.clone();
                    let l = match layer {
                        0 => &mut d2.hidden1,
                        1 => &mut d2.hidden2,
                        _ => &mut d2.output,
                    };
                    *l.param_mut(k) += delta;
                    loss(&g, &d2)
                };
                let grads = [&dg.hidden1, &dg.hidden2, &dg.output];
                check(grads[layer].get(k), shifted(eps), shifted(-eps), &format!("D layer {layer} k {k}"));
            }
        }
    }

    #[test]
    fn discriminator_output_is_a_probability() {
        let mut r = rng::seeded(2);
        let d = Discriminator::new(4, 2, (8, 8), &mut r);
        for scale in [1e-3, 1.0, 10.0] {
            let rows = DMatrix::from_fn(6, 4, |_, _| r.random_range(-scale..scale));
            for p in d.probabilities(&rows) {
                assert!(p > 0.0 && p < 1.0, "{p}");
            }
        }
    }

    #[test]
    fn effective_batch_rule() {
        let cfg = GanConfig {
            batch_size: 20,
            ..GanConfig::default()
        };
        assert_eq!(cfg.effective_batch(50), 20);
        assert_eq!(cfg.effective_batch(15), 10);
        assert_eq!(cfg.effective_batch(9), 0);
        assert!(GanConfig::default().validate().is_ok());
        assert_eq!(GanConfig::default().effective_batch(50), 20);
        let bad = GanConfig {
            batch_size: 5,
            ..GanConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn terciles() {
        assert_eq!(tercile_of(1.0, [1.0, 2.0]), 0);
        assert_eq!(tercile_of(1.5, [1.0, 2.0]), 1);
        assert_eq!(tercile_of(2.5, [1.0, 2.0]), 2);
    }
}
