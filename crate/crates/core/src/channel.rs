//! Multiplicative channel `v_n = xi_n u_n`, additive noise `gamma_n`, and
//! replayable random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, State};

/// Distribution family used for a [`ChannelModel::two_moment`] channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoMomentFamily {
    /// `xi ~ N(mu, sigma^2)`.
    Gaussian,
    /// `xi = mu +/- sigma` with probability one half each.
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Bernoulli {
        p: f64,
    },
    TwoMoment {
        mu: f64,
        sigma2: f64,
        family: TwoMomentFamily,
    },
}

/// Distribution of the multiplicative channel scalar `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    kind: Kind,
}

impl ChannelModel {
    /// Erasure channel: `xi = 1` with probability `p`, else `0`.
    ///
    /// `p = 1` is accepted as the ideal (noise-free) baseline; see
    /// [`ChannelModel::is_ideal`].
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "non-erasure probability must lie in (0, 1], got {p}"
            )));
        }
        Ok(Self {
            kind: Kind::Bernoulli { p },
        })
    }

    /// General channel described by its mean and (nonzero) variance.
    pub fn two_moment(mu: f64, sigma2: f64, family: TwoMomentFamily) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu must be finite, got {mu}"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        Ok(Self {
            kind: Kind::TwoMoment { mu, sigma2, family },
        })
    }

    pub fn mu(&self) -> f64 {
        match self.kind {
            Kind::Bernoulli { p } => p,
            Kind::TwoMoment { mu, .. } => mu,
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self.kind {
            Kind::Bernoulli { p } => p * (1.0 - p),
            Kind::TwoMoment { sigma2, .. } => sigma2,
        }
    }

    /// The degenerate Bernoulli(1) channel, which never erases.
    pub fn is_ideal(&self) -> bool {
        matches!(self.kind, Kind::Bernoulli { p } if p == 1.0)
    }

    pub fn bernoulli_p(&self) -> Option<f64> {
        match self.kind {
            Kind::Bernoulli { p } => Some(p),
            Kind::TwoMoment { .. } => None,
        }
    }

    /// Effective non-erasure probability `mu^2 / (mu^2 + sigma^2)`.
    ///
    /// Exactly `p` for a Bernoulli channel. Constructors guarantee
    /// `mu^2 + sigma^2 > 0`.
    pub fn rho(&self) -> f64 {
        match self.kind {
            Kind::Bernoulli { p } => p,
            Kind::TwoMoment { mu, sigma2, .. } => mu * mu / (mu * mu + sigma2),
        }
    }

    /// `mu / (mu^2 + sigma^2)`, the scale of the optimal tangent gain.
    pub fn gain_scale(&self) -> f64 {
        match self.kind {
            Kind::Bernoulli { .. } => 1.0,
            Kind::TwoMoment { mu, sigma2, .. } => mu / (mu * mu + sigma2),
        }
    }
}

/// Zero-mean Gaussian additive noise with the same standard deviation in
/// every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    stddev: f64,
}

impl NoiseModel {
    pub fn new(stddev: f64) -> Result<Self> {
        if !(stddev >= 0.0 && stddev.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise stddev must be >= 0, got {stddev}"
            )));
        }
        Ok(Self { stddev })
    }

    pub fn none() -> Self {
        Self { stddev: 0.0 }
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    /// `E ||gamma||^2 = N stddev^2`.
    pub fn second_moment(&self, dim: usize) -> f64 {
        dim as f64 * self.stddev * self.stddev
    }
}

/// What a stream is used for. Each tag gets an independent stream per replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Channel = 0,
    Noise = 1,
    Init = 2,
}

/// A deterministic random stream keyed by `(master_seed, replica, tag)`.
///
/// ChaCha8 keyed by the master seed, with the replica index and tag folded
/// into the 64-bit stream id, so streams never overlap and do not depend on
/// which thread draws them.
#[derive(Debug, Clone)]
pub struct SeededStream {
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(master_seed: u64, replica: u64, tag: StreamTag) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream((replica << 2) | tag as u64);
        Self { rng }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform point in the Euclidean disc/ball of the given radius.
    pub fn uniform_in_ball(&mut self, dim: usize, radius: f64) -> State {
        // direction from a normalized Gaussian, radius via the inverse CDF r^(1/N)
        loop {
            let g = State::from_fn(dim, |_, _| self.standard_normal());
            let n = g.norm();
            if n > 0.0 {
                let r = radius * self.uniform().powf(1.0 / dim as f64);
                return g * (r / n);
            }
        }
    }
}

/// One draw of `xi`.
pub fn sample_xi(model: &ChannelModel, stream: &mut SeededStream) -> f64 {
    match model.kind {
        Kind::Bernoulli { p } => {
            if stream.uniform() < p {
                1.0
            } else {
                0.0
            }
        }
        Kind::TwoMoment { mu, sigma2, family } => {
            let sd = sigma2.sqrt();
            match family {
                TwoMomentFamily::Gaussian => mu + sd * stream.standard_normal(),
                TwoMomentFamily::TwoPoint => {
                    if stream.uniform() < 0.5 {
                        mu - sd
                    } else {
                        mu + sd
                    }
                }
            }
        }
    }
}

/// One draw of `gamma`.
pub fn sample_noise(model: &NoiseModel, dim: usize, stream: &mut SeededStream) -> State {
    if model.stddev == 0.0 {
        return State::zeros(dim);
    }
    State::from_fn(dim, |_, _| model.stddev * stream.standard_normal())
}
