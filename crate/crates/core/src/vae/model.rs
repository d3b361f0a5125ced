use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::VaeConfig;
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm, conv2d, conv_output_len, leaky_relu, sigmoid, transpose_conv2d, BatchNorm2d, Conv2d,
    ConvGeometry, ConvTranspose2d, Dense, Differentiable, Layer, LeakyRelu, Mode, Param,
    Sequential, Sigmoid, Tensor,
};
use crate::scalar::Scalar;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;
/// Log-variance is clamped here before exponentiation.
const LOGVAR_LIMIT: f64 = 15.0;

/// Diagonal Gaussian posterior for one image, optionally with a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub z: Option<Vec<T>>,
}

/// Negative-ELBO decomposition, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `z = mu + sigma * eps` with `eps ~ N(0, I)` from `rng`.
pub fn sample_latent<T: Scalar, R: Rng + ?Sized>(code: &LatentCode<T>, rng: &mut R) -> Vec<T> {
    code.mu
        .iter()
        .zip(&code.sigma)
        .map(|(&m, &s)| {
            let eps: f64 = StandardNormal.sample(rng);
            T::of(m.f64() + s.f64() * eps)
        })
        .collect()
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I)) = -1/2 sum(log sigma^2 - sigma^2 - mu^2 + 1)`.
pub fn kl_closed_form<T: Scalar>(mu: &[T], sigma: &[T]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("kl_closed_form", mu.len(), sigma.len()));
    }
    let mut kl = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        let (m, s) = (m.f64(), s.f64());
        if !(s > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {s}")));
        }
        let s2 = s * s;
        kl += -0.5 * (s2.ln() - s2 - m * m + 1.0);
    }
    Ok(kl)
}

/// Convolutional VAE: five strided conv + batchnorm + leaky-ReLU stages, two
/// dense heads for mean and log-variance, and a mirrored transpose-conv
/// decoder ending in a sigmoid.
#[derive(Debug, Clone)]
pub struct Vae<T> {
    config: VaeConfig,
    feature_shape: [usize; 3],
    encoder: Sequential<T>,
    mu_head: Dense<T>,
    logvar_head: Dense<T>,
    decoder: Sequential<T>,
    cache: Option<ForwardCache<T>>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    input: Tensor<T>,
    mu: Tensor<T>,
    logvar: Tensor<T>,
    eps: Vec<f64>,
    recon: Tensor<T>,
}

impl<T: Scalar> Vae<T> {
    /// Builds the network with fan-in scaled weights drawn from `config.seed`.
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ae);
        let slope = T::of(config.leaky_slope);
        let [in_c, h, w] = config.input_shape;

        // Spatial sizes after each encoder stage; the decoder mirrors them.
        let mut sizes = vec![(h, w)];
        for _ in 0..5 {
            let (ph, pw) = *sizes.last().expect("non-empty");
            sizes.push((
                conv_output_len(ph, KERNEL, STRIDE, PADDING).expect("H, W >= 32"),
                conv_output_len(pw, KERNEL, STRIDE, PADDING).expect("H, W >= 32"),
            ));
        }
        let geom = ConvGeometry::new(KERNEL, STRIDE, PADDING);

        let mut enc = Vec::new();
        let mut prev = in_c;
        for (i, &c) in config.channels.iter().enumerate() {
            enc.push(Layer::Conv(
                Conv2d::new(&format!("encoder.{i}.conv"), prev, c, geom).init(&mut rng),
            ));
            enc.push(Layer::BatchNorm(BatchNorm2d::new(
                &format!("encoder.{i}.bn"),
                c,
            )));
            enc.push(Layer::LeakyRelu(LeakyRelu::new(slope)?));
            prev = c;
        }
        let (fh, fw) = sizes[5];
        let feature_shape = [prev, fh, fw];
        let features = prev * fh * fw;
        let d = config.latent_dim;

        let mut dec = vec![
            Layer::Dense(Dense::new("decoder.fc", d, features).init(&mut rng, 1.0)),
            Layer::reshape(feature_shape),
            Layer::LeakyRelu(LeakyRelu::new(slope)?),
        ];
        for stage in (0..5).rev() {
            let cin = config.channels[stage];
            let cout = if stage == 0 {
                in_c
            } else {
                config.channels[stage - 1]
            };
            let (th, tw) = sizes[stage];
            let (sh, sw) = sizes[stage + 1];
            let g = geom.with_output_padding(
                th + 2 * PADDING - KERNEL - (sh - 1) * STRIDE,
                tw + 2 * PADDING - KERNEL - (sw - 1) * STRIDE,
            );
            let name = format!("decoder.{}", 4 - stage);
            dec.push(Layer::ConvTranspose(
                ConvTranspose2d::new(&format!("{name}.tconv"), cin, cout, g).init(&mut rng),
            ));
            if stage > 0 {
                dec.push(Layer::BatchNorm(BatchNorm2d::new(
                    &format!("{name}.bn"),
                    cout,
                )));
                dec.push(Layer::LeakyRelu(LeakyRelu::new(slope)?));
            }
        }
        dec.push(Layer::Sigmoid(Sigmoid::new()));

        Ok(Self {
            feature_shape,
            encoder: Sequential::new(enc),
            mu_head: Dense::new("encoder.mu", features, d).init(&mut rng, 1.0),
            logvar_head: Dense::new("encoder.logvar", features, d).init(&mut rng, 0.1),
            decoder: Sequential::new(dec),
            config,
            cache: None,
        })
    }

    pub fn encoder(&self) -> &Sequential<T> {
        &self.encoder
    }

    pub fn decoder(&self) -> &Sequential<T> {
        &self.decoder
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Encoder output shape before flattening, `(channels, height, width)`.
    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature_shape
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.mu_head.params());
        v.extend(self.logvar_head.params());
        v.extend(self.decoder.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.mu_head.params_mut());
        v.extend(self.logvar_head.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    /// Batchnorm running statistics in declaration order.
    pub fn buffers(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.buffers();
        v.extend(self.decoder.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.buffers_mut();
        v.extend(self.decoder.buffers_mut());
        v
    }

    /// Parameters followed by buffers: everything a checkpoint stores.
    pub fn tensors(&self) -> Vec<&Param<T>> {
        let mut v = self.params();
        v.extend(self.buffers());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Param<T>> {
        let (mut v, enc_buffers) = self.encoder.split_mut();
        let (dec_params, dec_buffers) = self.decoder.split_mut();
        v.extend(self.mu_head.params_mut());
        v.extend(self.logvar_head.params_mut());
        v.extend(dec_params);
        v.extend(enc_buffers);
        v.extend(dec_buffers);
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = images.shape();
        if [c, h, w] != self.config.input_shape || images.batch() == 0 {
            return Err(Error::shape(
                "vae input",
                format!("(N >= 1, {:?})", self.config.input_shape),
                format!("{:?}", images.shape()),
            ));
        }
        Ok(())
    }

    /// Eval-mode encoder means and log-variances, each `(N, d, 1, 1)`.
    fn infer_moments(&self, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_images(images)?;
        let feats = infer(&self.encoder, images)?;
        let mu = self.mu_head.apply(&feats)?;
        let logvar = self.logvar_head.apply(&feats)?.map(clamp_logvar);
        Ok((mu, logvar))
    }

    /// Eval-mode posterior moments, one [`LatentCode`] per image (no sample).
    pub fn encode(&self, images: &Tensor<T>) -> Result<Vec<LatentCode<T>>> {
        let (mu, logvar) = self.infer_moments(images)?;
        Ok((0..images.batch())
            .map(|i| LatentCode {
                mu: mu.item(i).to_vec(),
                sigma: logvar
                    .item(i)
                    .iter()
                    .map(|&lv| (lv * T::of(0.5)).exp())
                    .collect(),
                z: None,
            })
            .collect())
    }

    /// Eval-mode decode of a batch of latent vectors `(N, d, 1, 1)`.
    pub fn decode_batch(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.item_len() != self.config.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("{} latent values per item", self.config.latent_dim),
                format!("{:?}", z.shape()),
            ));
        }
        infer(&self.decoder, z)
    }

    /// Eval-mode decode of one latent vector into a `(1, C, H, W)` image.
    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::shape("decode", self.config.latent_dim, z.len()));
        }
        self.decode_batch(&Tensor::from_vec([1, z.len(), 1, 1], z.to_vec())?)
    }

    /// Deterministic reconstruction: decode the encoder mean.
    pub fn reconstruct(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let (mu, _) = self.infer_moments(images)?;
        self.decode_batch(&mu)
    }

    /// Negative ELBO with one reparameterized sample per image, without
    /// gradients. `mode` selects batch or running batchnorm statistics.
    pub fn elbo_loss<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor<T>,
        rng: &mut R,
        mode: Mode,
    ) -> Result<ElboTerms> {
        self.forward(images, rng, mode)
    }

    /// Runs the reparameterized forward pass, caching for [`Vae::backward`].
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor<T>,
        rng: &mut R,
        mode: Mode,
    ) -> Result<ElboTerms> {
        self.check_images(images)?;
        let n = images.batch();
        let d = self.config.latent_dim;
        let feats = self.encoder.forward(images, mode)?;
        let mu = self.mu_head.forward(&feats)?;
        let logvar = self.logvar_head.forward(&feats)?.map(clamp_logvar);
        let eps: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let mut z = Tensor::zeros([n, d, 1, 1]);
        for (i, zi) in z.data_mut().iter_mut().enumerate() {
            let sigma = (0.5 * logvar.data()[i].f64()).exp();
            *zi = T::of(mu.data()[i].f64() + sigma * eps[i]);
        }
        let recon = self.decoder.forward(&z, mode)?;

        let sq: f64 = images
            .data()
            .iter()
            .zip(recon.data())
            .map(|(&x, &y)| (x.f64() - y.f64()).powi(2))
            .sum();
        let kl: f64 = mu
            .data()
            .iter()
            .zip(logvar.data())
            .map(|(&m, &lv)| {
                let (m, lv) = (m.f64(), lv.f64());
                -0.5 * (lv - lv.exp() - m * m + 1.0)
            })
            .sum();
        let nf = n as f64;
        let terms = ElboTerms {
            total: 0.5 * sq / nf + kl / nf,
            recon: 0.5 * sq / nf,
            kl: kl / nf,
        };
        if !terms.total.is_finite() {
            return Err(Error::invalid("negative ELBO is not finite"));
        }
        self.cache = Some(ForwardCache {
            input: images.clone(),
            mu,
            logvar,
            eps,
            recon,
        });
        Ok(terms)
    }

    /// Backpropagates the negative ELBO of the last [`Vae::forward`],
    /// accumulating parameter gradients. Returns the gradient with respect to
    /// the input images (through the encoder and the reconstruction target).
    pub fn backward(&mut self) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("vae backward before forward"))?;
        let n = cache.input.batch() as f64;
        let inv_n = 1.0 / n;
        let mut d_recon = cache.recon.clone();
        for (g, &x) in d_recon.data_mut().iter_mut().zip(cache.input.data()) {
            *g = T::of((g.f64() - x.f64()) * inv_n);
        }
        let dz = self.decoder.backward(&d_recon)?;
        let mut d_mu = Tensor::zeros(cache.mu.shape());
        let mut d_logvar = Tensor::zeros(cache.logvar.shape());
        for i in 0..dz.len() {
            let m = cache.mu.data()[i].f64();
            let lv = cache.logvar.data()[i].f64();
            let g = dz.data()[i].f64();
            let sigma = (0.5 * lv).exp();
            d_mu.data_mut()[i] = T::of(g + m * inv_n);
            let clamped = lv.abs() >= LOGVAR_LIMIT;
            let dlv = g * cache.eps[i] * 0.5 * sigma + 0.5 * (lv.exp() - 1.0) * inv_n;
            d_logvar.data_mut()[i] = T::of(if clamped { 0.0 } else { dlv });
        }
        let mut d_feats = self.mu_head.backward(&d_mu)?;
        let d_lv_feats = self.logvar_head.backward(&d_logvar)?;
        for (a, &b) in d_feats.data_mut().iter_mut().zip(d_lv_feats.data()) {
            *a = *a + b;
        }
        let [c, h, w] = self.feature_shape;
        let d_feats = d_feats.reshape([cache.input.batch(), c, h, w])?;
        let mut dx = self.encoder.backward(&d_feats)?;
        for ((g, &x), &y) in dx
            .data_mut()
            .iter_mut()
            .zip(cache.input.data())
            .zip(cache.recon.data())
        {
            *g = T::of(g.f64() + (x.f64() - y.f64()) * inv_n);
        }
        Ok(dx)
    }
}

fn clamp_logvar<T: Scalar>(v: T) -> T {
    let lim = T::of(LOGVAR_LIMIT);
    v.max(-lim).min(lim)
}

/// Cache-free eval-mode pass through a stack.
fn infer<T: Scalar>(net: &Sequential<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut h = x.clone();
    for layer in &net.layers {
        h = match layer {
            Layer::Conv(l) => conv2d(&h, l)?,
            Layer::ConvTranspose(l) => transpose_conv2d(&h, l)?,
            Layer::BatchNorm(l) => batchnorm(&h, l, Mode::Eval)?,
            Layer::Dense(l) => l.apply(&h)?,
            Layer::LeakyRelu(l) => leaky_relu(&h, l.slope),
            Layer::Sigmoid(_) => sigmoid(&h),
            Layer::Reshape { item, .. } => {
                h.clone().reshape([h.batch(), item[0], item[1], item[2]])?
            }
        };
    }
    Ok(h)
}

/// The negative ELBO as a [`Differentiable`] function of images and all
/// trainable parameters, with the sampling noise reseeded on every call so
/// that finite differences see the same `eps`.
pub struct ElboObjective<'a, T> {
    pub model: &'a mut Vae<T>,
    pub noise_seed: u64,
    pub mode: Mode,
}

impl<T: Scalar> Differentiable<T> for ElboObjective<'_, T> {
    fn loss(&mut self, input: &Tensor<T>) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        Ok(self.model.forward(input, &mut rng, self.mode)?.total)
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        self.model.zero_grad();
        let loss = self.loss(input)?;
        Ok((loss, self.model.backward()?))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.model.params_mut()
    }
}
