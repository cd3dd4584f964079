//! Surrogate capsule encoder.
//!
//! A two-layer fully-connected network maps an `H x W` image to `K` prior
//! object-capsule presences (sigmoid head) and a `K x M` posterior presence
//! matrix (softplus head). It is differentiable end to end through the
//! [`crate::tensor`] graph, which is all the attacks need from an encoder.

mod train;

pub use train::{train, RmsPropState, TrainConfig};

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Bindings, Graph, NodeId, Tensor};

/// Width of the hidden relu layer.
pub const HIDDEN: usize = 64;

/// Default number of part capsules.
pub const DEFAULT_PARTS: usize = 24;

const MAGIC: &[u8; 4] = b"CENC";
const VERSION: u32 = 1;

/// Which presence vector feeds the classifier and the attack objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceMode {
    /// The `K`-vector emitted by the prior head.
    Prior,
    /// Row sums of the `K x M` posterior matrix.
    Posterior,
}

impl PresenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PresenceMode::Prior => "prior",
            PresenceMode::Posterior => "posterior",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            PresenceMode::Prior => 0,
            PresenceMode::Posterior => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PresenceMode::Prior),
            1 => Some(PresenceMode::Posterior),
            _ => None,
        }
    }
}

impl std::str::FromStr for PresenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(PresenceMode::Prior),
            "posterior" => Ok(PresenceMode::Posterior),
            other => Err(Error::Config(format!(
                "unknown presence mode `{other}` (expected prior or posterior)"
            ))),
        }
    }
}

impl std::fmt::Display for PresenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weights of the surrogate encoder. Tensors are reference counted so graphs
/// can embed them without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    capsules: usize,
    parts: usize,
    height: usize,
    width: usize,
    tensors: [Arc<Tensor>; 6],
}

/// Graph nodes produced by [`EncoderParams::build`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub prior_logits: NodeId,
    pub prior: NodeId,
    /// `K x M` posterior presence.
    pub posterior: NodeId,
    /// Row sums of the posterior, length `K`.
    pub posterior_reduced: NodeId,
}

impl EncoderNodes {
    pub fn presence(&self, mode: PresenceMode) -> NodeId {
        match mode {
            PresenceMode::Prior => self.prior,
            PresenceMode::Posterior => self.posterior_reduced,
        }
    }
}

/// Whether the encoder weights enter a graph as embedded constants or as
/// trainable leaves named after [`EncoderParams::PARAM_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Embedded,
    Leaves,
}

/// Presences of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleOutput {
    pub prior: Vec<f64>,
    /// Row-major `K x M`.
    pub posterior: Vec<f64>,
    pub parts: usize,
}

impl CapsuleOutput {
    pub fn capsules(&self) -> usize {
        self.prior.len()
    }

    pub fn posterior_row(&self, capsule: usize) -> &[f64] {
        &self.posterior[capsule * self.parts..(capsule + 1) * self.parts]
    }

    pub fn posterior_reduced(&self) -> Vec<f64> {
        reduce_posterior(&self.posterior, self.parts)
    }

    pub fn presence(&self, mode: PresenceMode) -> Vec<f64> {
        match mode {
            PresenceMode::Prior => self.prior.clone(),
            PresenceMode::Posterior => self.posterior_reduced(),
        }
    }
}

/// Sums each row of length `parts` of a row-major posterior matrix.
pub fn reduce_posterior(posterior: &[f64], parts: usize) -> Vec<f64> {
    if parts == 0 {
        return Vec::new();
    }
    posterior
        .chunks(parts)
        .map(|row| row.iter().sum())
        .collect()
}

impl EncoderParams {
    /// Leaf names used with [`WeightSource::Leaves`], in file order.
    pub const PARAM_NAMES: [&'static str; 6] =
        ["w1", "b1", "w_prior", "b_prior", "w_post", "b_post"];

    fn shapes(capsules: usize, parts: usize, pixels: usize) -> [Vec<usize>; 6] {
        [
            vec![HIDDEN, pixels],
            vec![HIDDEN],
            vec![capsules, HIDDEN],
            vec![capsules],
            vec![capsules * parts, HIDDEN],
            vec![capsules * parts],
        ]
    }

    pub fn zeros(capsules: usize, parts: usize, height: usize, width: usize) -> Self {
        let shapes = Self::shapes(capsules, parts, height * width);
        Self {
            capsules,
            parts,
            height,
            width,
            tensors: shapes.map(|s| Arc::new(Tensor::zeros(&s))),
        }
    }

    /// Uniform Glorot initialisation for weights, zero biases.
    pub fn random(
        capsules: usize,
        parts: usize,
        height: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shapes = Self::shapes(capsules, parts, height * width);
        let tensors = shapes.map(|shape| {
            let t = if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Tensor::new(shape, data).expect("init shape")
            } else {
                Tensor::zeros(&shape)
            };
            Arc::new(t)
        });
        Self {
            capsules,
            parts,
            height,
            width,
            tensors,
        }
    }

    /// Builds from tensors in [`Self::PARAM_NAMES`] order, checking shapes.
    pub fn from_tensors(
        capsules: usize,
        parts: usize,
        height: usize,
        width: usize,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let shapes = Self::shapes(capsules, parts, height * width);
        if tensors.len() != shapes.len() {
            return Err(Error::format(
                "encoder",
                format!("expected {} tensors, found {}", shapes.len(), tensors.len()),
            ));
        }
        for ((t, shape), name) in tensors.iter().zip(&shapes).zip(Self::PARAM_NAMES) {
            if t.shape() != shape.as_slice() {
                return Err(Error::format(
                    "encoder",
                    format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    ),
                ));
            }
            if !t.all_finite() {
                return Err(Error::format(
                    "encoder",
                    format!("tensor {name} is not finite"),
                ));
            }
        }
        let mut it = tensors.into_iter().map(Arc::new);
        let tensors = std::array::from_fn(|_| it.next().expect("length checked"));
        Ok(Self {
            capsules,
            parts,
            height,
            width,
            tensors,
        })
    }

    pub fn capsules(&self) -> usize {
        self.capsules
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn tensors(&self) -> &[Arc<Tensor>; 6] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(Arc::make_mut)
    }

    /// Binds every weight under its leaf name.
    pub fn bind<'a>(&'a self, bindings: &mut Bindings<'a>) {
        for (name, t) in Self::PARAM_NAMES.iter().zip(&self.tensors) {
            bindings.bind(name, t);
        }
    }

    /// Appends the encoder to `graph`, reading the flat image from `input`.
    pub fn build(&self, graph: &mut Graph, input: NodeId, source: WeightSource) -> EncoderNodes {
        let [w1, b1, wp, bp, wq, bq] = match source {
            WeightSource::Embedded => self.tensors.clone().map(|t| graph.shared_constant(t)),
            WeightSource::Leaves => Self::PARAM_NAMES.map(|n| graph.param(n)),
        };
        let z1 = graph.matmul(w1, input);
        let z1 = graph.add(z1, b1);
        let hidden = graph.relu(z1);
        let zp = graph.matmul(wp, hidden);
        let prior_logits = graph.add(zp, bp);
        let prior = graph.sigmoid(prior_logits);
        let zq = graph.matmul(wq, hidden);
        let zq = graph.add(zq, bq);
        let flat = graph.softplus(zq);
        let posterior = graph.reshape(flat, &[self.capsules, self.parts]);
        let posterior_reduced = graph.sum_last_axis(posterior);
        EncoderNodes {
            prior_logits,
            prior,
            posterior,
            posterior_reduced,
        }
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        if x.len() != self.pixels() {
            return Err(Error::PixelCount {
                expected: self.pixels(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, x: &Image) -> Result<CapsuleOutput> {
        self.check_image(x)?;
        let mut graph = Graph::new();
        let input = graph.input("x");
        let nodes = self.build(&mut graph, input, WeightSource::Embedded);
        let xt = x.to_tensor();
        let eval = graph.forward(&Bindings::new().with("x", &xt))?;
        Ok(CapsuleOutput {
            prior: eval.value(nodes.prior).data().to_vec(),
            posterior: eval.value(nodes.posterior).data().to_vec(),
            parts: self.parts,
        })
    }

    pub fn presence_for(&self, x: &Image, mode: PresenceMode) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.presence(mode))
    }

    /// Serialises to the `CENC` little-endian format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for d in [self.capsules, self.parts, self.height, self.width] {
            w.usize(d);
        }
        for t in &self.tensors {
            w.usize(t.rank());
            for &d in t.shape() {
                w.usize(d);
            }
            w.f64s(t.data());
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("encoder", data);
        if r.take(4)? != MAGIC {
            return Err(Error::format("encoder", "missing CENC magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "encoder",
                format!("unsupported version {version}"),
            ));
        }
        let (capsules, parts, height, width) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        let mut tensors = Vec::with_capacity(6);
        for _ in 0..6 {
            let rank = r.usize()?;
            if rank > 4 {
                return Err(Error::format("encoder", format!("implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("encoder", "tensor size overflows"))?;
            let payload = r.f64s(len)?;
            tensors.push(Tensor::new(shape, payload)?);
        }
        r.expect_end()?;
        Self::from_tensors(capsules, parts, height, width, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small_random(seed: u64) -> EncoderParams {
        EncoderParams::random(4, 3, 5, 5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn test_image(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(5, 5, (0..25).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_half_prior() {
        let params = EncoderParams::zeros(10, 24, 5, 5);
        let out = params.encode(&test_image(1)).unwrap();
        assert_eq!(out.prior, vec![0.5; 10]);
    }

    #[test]
    fn output_shapes_follow_k_and_m() {
        let params = EncoderParams::random(10, 24, 5, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let out = params.encode(&test_image(2)).unwrap();
        assert_eq!(out.prior.len(), 10);
        assert_eq!(out.posterior.len(), 10 * 24);
        assert_eq!(out.posterior_reduced().len(), 10);
    }

    #[test]
    fn encode_is_pure() {
        let params = small_random(5);
        let x = test_image(6);
        assert_eq!(params.encode(&x).unwrap(), params.encode(&x).unwrap());
    }

    #[test]
    fn wrong_pixel_count_is_rejected() {
        let params = small_random(5);
        let x = Image::zeros(4, 4);
        assert!(matches!(
            params.encode(&x),
            Err(Error::PixelCount {
                expected: 25,
                got: 16
            })
        ));
    }

    #[test]
    fn posterior_reduction_is_row_sums() {
        let out = CapsuleOutput {
            prior: vec![0.1, 0.2],
            posterior: vec![1.0, 2.0, 3.0, 4.0],
            parts: 2,
        };
        assert_eq!(out.presence(PresenceMode::Posterior), vec![3.0, 7.0]);
        assert_eq!(out.presence(PresenceMode::Prior), vec![0.1, 0.2]);
        assert_eq!(reduce_posterior(&[0.0; 6], 3), vec![0.0, 0.0]);
    }

    #[test]
    fn presence_for_matches_encode() {
        let params = small_random(8);
        let x = test_image(9);
        let out = params.encode(&x).unwrap();
        assert_eq!(
            params.presence_for(&x, PresenceMode::Prior).unwrap(),
            out.prior
        );
        assert_eq!(
            params.presence_for(&x, PresenceMode::Posterior).unwrap(),
            out.posterior_reduced()
        );
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let params = small_random(11);
        let mut graph = Graph::new();
        let input = graph.input("x");
        let nodes = params.build(&mut graph, input, WeightSource::Embedded);
        let weights = graph.constant(Tensor::vector(vec![1.0, -0.5, 0.25, 2.0]));
        let weighted = graph.mul(nodes.prior, weights);
        graph.sum(weighted);
        for seed in 0..5 {
            let xt = test_image(100 + seed).to_tensor();
            let err = graph
                .check_gradient("x", &Bindings::new().with("x", &xt), 1e-5)
                .unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn bytes_roundtrip_is_bit_exact() {
        let params = small_random(12);
        let bytes = params.to_bytes();
        assert_eq!(&bytes[..4], b"CENC");
        let back = EncoderParams::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in params.tensors().iter().zip(back.tensors()) {
            let a_bits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let b_bits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a_bits, b_bits);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = small_random(13).to_bytes();
        assert!(EncoderParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EncoderParams::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(EncoderParams::from_bytes(&extra).is_err());
    }
}
