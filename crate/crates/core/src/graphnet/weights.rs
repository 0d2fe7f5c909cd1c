use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptors::DESCRIPTOR_DIM;
use crate::error::{Error, Result};

/// Node feature width after message passing.
pub const ENRICHED_DIM: usize = 512;
/// Width of the pooled global embedding.
pub const EMBEDDING_DIM: usize = 256;
/// Number of bilinear slices in the similarity head.
pub const TNN_SLICES: usize = 16;

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_GEM_LAMBDA: f64 = 3.0;

/// Affine map stored as `in × out` so a row batch `X` maps to `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: DMatrix::zeros(input, output), bias: DVector::zeros(output) }
    }

    fn xavier<R: Rng>(rng: &mut R, input: usize, output: usize, gain: f64) -> Self {
        let bound = gain * (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(input, output, |_, _| rng.random_range(-bound..bound)),
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Row-batched forward pass.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }

    fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), self.bias.as_slice()]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), self.bias.as_mut_slice()]
    }
}

/// One equivariant message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EgnnLayer {
    /// Message MLP; input rows are `[h_i, h_j, ‖x_i − x_j‖², e_ij]`.
    pub edge1: Linear,
    pub edge2: Linear,
    /// Per-edge scalar weight for the coordinate update.
    pub coord1: Linear,
    pub coord2: Linear,
    /// Node update MLP on `[h_i, m_i]`.
    pub node1: Linear,
    pub node2: Linear,
}

impl EgnnLayer {
    fn zeros(hidden: usize) -> Self {
        Self {
            edge1: Linear::zeros(2 * hidden + 2, hidden),
            edge2: Linear::zeros(hidden, hidden),
            coord1: Linear::zeros(hidden, hidden),
            coord2: Linear::zeros(hidden, 1),
            node1: Linear::zeros(2 * hidden, hidden),
            node2: Linear::zeros(hidden, hidden),
        }
    }

    fn random<R: Rng>(rng: &mut R, hidden: usize) -> Self {
        Self {
            edge1: Linear::xavier(rng, 2 * hidden + 2, hidden, 1.0),
            edge2: Linear::xavier(rng, hidden, hidden, 1.0),
            coord1: Linear::xavier(rng, hidden, hidden, 1.0),
            coord2: Linear::xavier(rng, hidden, 1, 0.001),
            node1: Linear::xavier(rng, 2 * hidden, hidden, 1.0),
            node2: Linear::xavier(rng, hidden, hidden, 1.0),
        }
    }

    fn linears(&self) -> [&Linear; 6] {
        [&self.edge1, &self.edge2, &self.coord1, &self.coord2, &self.node1, &self.node2]
    }

    fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [&mut self.edge1, &mut self.edge2, &mut self.coord1, &mut self.coord2, &mut self.node1, &mut self.node2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TnnWeights {
    /// `s` bilinear slices, each `emb × emb`.
    pub slices: Vec<DMatrix<f64>>,
    /// `s × 2·emb` map on the stacked pair `[g_i; g_j]`.
    pub pair: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Reduction of the `s` activations to one logit.
    pub output: DVector<f64>,
    pub output_bias: f64,
}

/// Shape of a network; persisted in the weight file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
    pub embedding: usize,
    pub slices: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            input: DESCRIPTOR_DIM,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            output: ENRICHED_DIM,
            embedding: EMBEDDING_DIM,
            slices: TNN_SLICES,
        }
    }
}

impl NetDims {
    pub fn to_array(self) -> [u32; 6] {
        [self.input, self.hidden, self.layers, self.output, self.embedding, self.slices].map(|v| v as u32)
    }

    pub fn from_array(a: [u32; 6]) -> Self {
        let [input, hidden, layers, output, embedding, slices] = a.map(|v| v as usize);
        Self { input, hidden, layers, output, embedding, slices }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights {
    pub dims: NetDims,
    pub input: Linear,
    pub layers: Vec<EgnnLayer>,
    pub output: Linear,
    /// GeM exponent λ.
    pub gem_lambda: f64,
    /// `output → embedding` projection applied after pooling, no bias.
    pub projection: DMatrix<f64>,
    pub tnn: TnnWeights,
}

impl NetWeights {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            dims,
            input: Linear::zeros(dims.input, dims.hidden),
            layers: (0..dims.layers).map(|_| EgnnLayer::zeros(dims.hidden)).collect(),
            output: Linear::zeros(dims.hidden, dims.output),
            gem_lambda: 1.0,
            projection: DMatrix::zeros(dims.embedding, dims.output),
            tnn: TnnWeights {
                slices: vec![DMatrix::zeros(dims.embedding, dims.embedding); dims.slices],
                pair: DMatrix::zeros(dims.slices, 2 * dims.embedding),
                bias: DVector::zeros(dims.slices),
                output: DVector::zeros(dims.slices),
                output_bias: 0.0,
            },
        }
    }

    /// Seeded Xavier-uniform initialisation.
    pub fn random(dims: NetDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = dims.embedding;
        let proj_bound = (6.0 / (dims.output + emb) as f64).sqrt();
        let slice_bound = 1.0 / emb as f64;
        let pair_bound = (6.0 / (2 * emb + dims.slices) as f64).sqrt();
        Self {
            dims,
            input: Linear::xavier(&mut rng, dims.input, dims.hidden, 1.0),
            layers: (0..dims.layers).map(|_| EgnnLayer::random(&mut rng, dims.hidden)).collect(),
            output: Linear::xavier(&mut rng, dims.hidden, dims.output, 1.0),
            gem_lambda: DEFAULT_GEM_LAMBDA,
            projection: DMatrix::from_fn(emb, dims.output, |_, _| rng.random_range(-proj_bound..proj_bound)),
            tnn: TnnWeights {
                slices: (0..dims.slices)
                    .map(|_| DMatrix::from_fn(emb, emb, |_, _| rng.random_range(-slice_bound..slice_bound)))
                    .collect(),
                pair: DMatrix::from_fn(dims.slices, 2 * emb, |_, _| rng.random_range(-pair_bound..pair_bound)),
                bias: DVector::zeros(dims.slices),
                output: DVector::from_fn(dims.slices, |_, _| rng.random_range(-0.5..0.5)),
                output_bias: 0.0,
            },
        }
    }

    /// Checks every tensor against `dims` and the value constraints.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        let shape = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} has shape {got:?}, expected {want:?}")))
            }
        };
        let lin = |name: &str, l: &Linear, i: usize, o: usize| {
            shape(name, l.weight.shape(), (i, o))?;
            shape(name, (l.bias.len(), 1), (o, 1))
        };
        lin("input", &self.input, d.input, d.hidden)?;
        if self.layers.len() != d.layers {
            return Err(Error::Config(format!("{} layers, expected {}", self.layers.len(), d.layers)));
        }
        let h = d.hidden;
        for (k, l) in self.layers.iter().enumerate() {
            lin(&format!("layer {k} edge1"), &l.edge1, 2 * h + 2, h)?;
            lin(&format!("layer {k} edge2"), &l.edge2, h, h)?;
            lin(&format!("layer {k} coord1"), &l.coord1, h, h)?;
            lin(&format!("layer {k} coord2"), &l.coord2, h, 1)?;
            lin(&format!("layer {k} node1"), &l.node1, 2 * h, h)?;
            lin(&format!("layer {k} node2"), &l.node2, h, h)?;
        }
        lin("output", &self.output, h, d.output)?;
        shape("projection", self.projection.shape(), (d.embedding, d.output))?;
        if self.tnn.slices.len() != d.slices {
            return Err(Error::Config(format!("{} tnn slices, expected {}", self.tnn.slices.len(), d.slices)));
        }
        for s in &self.tnn.slices {
            shape("tnn slice", s.shape(), (d.embedding, d.embedding))?;
        }
        shape("tnn pair", self.tnn.pair.shape(), (d.slices, 2 * d.embedding))?;
        shape("tnn bias", (self.tnn.bias.len(), 1), (d.slices, 1))?;
        shape("tnn output", (self.tnn.output.len(), 1), (d.slices, 1))?;
        if !(self.gem_lambda > 0.0) || !self.gem_lambda.is_finite() {
            return Err(Error::Config(format!("gem lambda must be positive, got {}", self.gem_lambda)));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("weights contain non-finite values".into()));
        }
        Ok(())
    }

    /// All parameters in file order. Matrices are column-major.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.input.tensors());
        for l in &self.layers {
            for lin in l.linears() {
                out.extend(lin.tensors());
            }
        }
        out.extend(self.output.tensors());
        out.push(std::slice::from_ref(&self.gem_lambda));
        out.push(self.projection.as_slice());
        for s in &self.tnn.slices {
            out.push(s.as_slice());
        }
        out.push(self.tnn.pair.as_slice());
        out.push(self.tnn.bias.as_slice());
        out.push(self.tnn.output.as_slice());
        out.push(std::slice::from_ref(&self.tnn.output_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.input.tensors_mut());
        for l in &mut self.layers {
            for lin in l.linears_mut() {
                out.extend(lin.tensors_mut());
            }
        }
        out.extend(self.output.tensors_mut());
        out.push(std::slice::from_mut(&mut self.gem_lambda));
        out.push(self.projection.as_mut_slice());
        for s in &mut self.tnn.slices {
            out.push(s.as_mut_slice());
        }
        out.push(self.tnn.pair.as_mut_slice());
        out.push(self.tnn.bias.as_mut_slice());
        out.push(self.tnn.output.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.tnn.output_bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn from_flat(dims: NetDims, values: &[f64]) -> Result<Self> {
        let mut w = Self::zeros(dims);
        let expected = w.parameter_count();
        if values.len() != expected {
            return Err(Error::Mismatch { expected, found: values.len() });
        }
        let mut rest = values;
        for t in w.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        w.validate()?;
        Ok(w)
    }
}
