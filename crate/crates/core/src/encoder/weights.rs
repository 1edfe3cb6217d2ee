use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{spmm_bsr, spmm_csr, dense_matmul, BlockShape, BsrMatrix, CsrMatrix, DenseMatrix};
use crate::sparsity::SparsityProfile;

use super::config::EncoderConfig;

/// Standard deviation of the normal initializer (BERT's `initializer_range`).
pub const INIT_STD: f32 = 0.02;

/// The six weight matrices of an encoder layer. These are the only
/// parameters that are ever pruned or stored sparse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearSlot {
    Query,
    Key,
    Value,
    AttnOut,
    FfIn,
    FfOut,
}

impl LinearSlot {
    pub const ALL: [LinearSlot; 6] = [
        LinearSlot::Query,
        LinearSlot::Key,
        LinearSlot::Value,
        LinearSlot::AttnOut,
        LinearSlot::FfIn,
        LinearSlot::FfOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinearSlot::Query => "attn.query",
            LinearSlot::Key => "attn.key",
            LinearSlot::Value => "attn.value",
            LinearSlot::AttnOut => "attn.out",
            LinearSlot::FfIn => "ffn.in",
            LinearSlot::FfOut => "ffn.out",
        }
    }

    /// `(out_features, in_features)`.
    pub fn shape(self, c: &EncoderConfig) -> (usize, usize) {
        match self {
            LinearSlot::FfIn => (c.ff_dim, c.hidden_dim),
            LinearSlot::FfOut => (c.hidden_dim, c.ff_dim),
            _ => (c.hidden_dim, c.hidden_dim),
        }
    }
}

/// Name of a prunable matrix, e.g. `layers.3.ffn.in`.
pub fn matrix_name(layer: usize, slot: LinearSlot) -> String {
    format!("layers.{layer}.{}", slot.name())
}

/// Parses a name produced by [`matrix_name`].
pub fn parse_matrix_name(name: &str) -> Option<(usize, LinearSlot)> {
    let rest = name.strip_prefix("layers.")?;
    let (idx, slot) = rest.split_once('.')?;
    let layer = idx.parse().ok()?;
    LinearSlot::ALL
        .into_iter()
        .find(|s| s.name() == slot)
        .map(|s| (layer, s))
}

/// Storage tag of a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Storage {
    Dense,
    Csr,
    Bsr { block: BlockShape },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearWeight {
    Dense(DenseMatrix),
    Csr(CsrMatrix),
    Bsr(BsrMatrix),
}

impl LinearWeight {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            LinearWeight::Dense(m) => m.shape(),
            LinearWeight::Csr(m) => (m.rows(), m.cols()),
            LinearWeight::Bsr(m) => (m.rows(), m.cols()),
        }
    }

    pub fn storage(&self) -> Storage {
        match self {
            LinearWeight::Dense(_) => Storage::Dense,
            LinearWeight::Csr(_) => Storage::Csr,
            LinearWeight::Bsr(m) => Storage::Bsr { block: m.block() },
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            LinearWeight::Dense(m) => m.clone(),
            LinearWeight::Csr(m) => m.to_dense(),
            LinearWeight::Bsr(m) => m.to_dense(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            LinearWeight::Dense(m) => m.values().len() - m.count_zeros(),
            LinearWeight::Csr(m) => m.nnz(),
            LinearWeight::Bsr(m) => m.nnz(),
        }
    }

    /// `W × x`, routed to the kernel matching the storage.
    pub fn matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            LinearWeight::Dense(m) => dense_matmul(m, x),
            LinearWeight::Csr(m) => spmm_csr(m, x),
            LinearWeight::Bsr(m) => spmm_bsr(m, x),
        }
    }

    /// Re-encodes the same values under another storage.
    pub fn convert(&self, storage: Storage) -> Result<LinearWeight> {
        let dense = self.to_dense();
        Ok(match storage {
            Storage::Dense => LinearWeight::Dense(dense),
            Storage::Csr => LinearWeight::Csr(CsrMatrix::from_dense(&dense)),
            Storage::Bsr { block } => LinearWeight::Bsr(BsrMatrix::from_dense(&dense, block)?),
        })
    }
}

/// Weight (`out × in`) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: LinearWeight,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerNormParams {
    pub fn identity(n: usize) -> Self {
        Self {
            gain: vec![1.0; n],
            bias: vec![0.0; n],
        }
    }
}

/// One post-LN transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_ln: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ffn_ln: LayerNormParams,
}

impl EncoderLayer {
    pub fn linear(&self, slot: LinearSlot) -> &Linear {
        match slot {
            LinearSlot::Query => &self.query,
            LinearSlot::Key => &self.key,
            LinearSlot::Value => &self.value,
            LinearSlot::AttnOut => &self.attn_out,
            LinearSlot::FfIn => &self.ff_in,
            LinearSlot::FfOut => &self.ff_out,
        }
    }

    pub fn linear_mut(&mut self, slot: LinearSlot) -> &mut Linear {
        match slot {
            LinearSlot::Query => &mut self.query,
            LinearSlot::Key => &mut self.key,
            LinearSlot::Value => &mut self.value,
            LinearSlot::AttnOut => &mut self.attn_out,
            LinearSlot::FfIn => &mut self.ff_in,
            LinearSlot::FfOut => &mut self.ff_out,
        }
    }
}

/// All encoder parameters. Embeddings, biases and layer norms are always
/// dense; each of the six per-layer matrices carries its own storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    /// `vocab_size × hidden_dim`
    pub token_emb: DenseMatrix,
    /// `max_seq_len × hidden_dim`
    pub pos_emb: DenseMatrix,
    pub emb_ln: LayerNormParams,
    pub layers: Vec<EncoderLayer>,
    pub profile: Option<SparsityProfile>,
}

impl EncoderWeights {
    /// Random initialization: every matrix and embedding from N(0, 0.02²),
    /// biases zero, layer norms identity. Deterministic in `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    /// [`EncoderWeights::init`] with a chosen standard deviation.
    pub fn init_with_std(config: EncoderConfig, seed: u64, std: f32) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0f32, std).map_err(|e| Error::invalid(format!("init std {std}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = |rows: usize, cols: usize| {
            let values: Vec<f32> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            DenseMatrix::new(rows, cols, values)
        };
        let h = config.hidden_dim;
        let token_emb = matrix(config.vocab_size, h)?;
        let pos_emb = matrix(config.max_seq_len, h)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let mut linear = |slot: LinearSlot| -> Result<Linear> {
                let (o, i) = slot.shape(&config);
                Ok(Linear {
                    weight: LinearWeight::Dense(matrix(o, i)?),
                    bias: vec![0.0; o],
                })
            };
            layers.push(EncoderLayer {
                query: linear(LinearSlot::Query)?,
                key: linear(LinearSlot::Key)?,
                value: linear(LinearSlot::Value)?,
                attn_out: linear(LinearSlot::AttnOut)?,
                attn_ln: LayerNormParams::identity(h),
                ff_in: linear(LinearSlot::FfIn)?,
                ff_out: linear(LinearSlot::FfOut)?,
                ffn_ln: LayerNormParams::identity(h),
            });
        }
        Ok(Self {
            config,
            token_emb,
            pos_emb,
            emb_ln: LayerNormParams::identity(h),
            layers,
            profile: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Checks every tensor shape against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let h = c.hidden_dim;
        let expect = |what: String, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::dims("EncoderWeights", format!("{what} {want:?}"), format!("{got:?}")))
            } else {
                Ok(())
            }
        };
        let expect_len = |what: String, got: usize, want: usize| {
            if got != want {
                Err(Error::dims("EncoderWeights", format!("{what} of length {want}"), got))
            } else {
                Ok(())
            }
        };
        expect("token_emb".into(), self.token_emb.shape(), (c.vocab_size, h))?;
        expect("pos_emb".into(), self.pos_emb.shape(), (c.max_seq_len, h))?;
        expect_len("emb_ln.gain".into(), self.emb_ln.gain.len(), h)?;
        expect_len("emb_ln.bias".into(), self.emb_ln.bias.len(), h)?;
        if self.layers.len() != c.num_layers {
            return Err(Error::dims("EncoderWeights", format!("{} layers", c.num_layers), self.layers.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for slot in LinearSlot::ALL {
                let lin = layer.linear(slot);
                let want = slot.shape(c);
                expect(matrix_name(l, slot), lin.weight.shape(), want)?;
                expect_len(format!("{}.bias", matrix_name(l, slot)), lin.bias.len(), want.0)?;
            }
            for (name, ln) in [("attn_ln", &layer.attn_ln), ("ffn_ln", &layer.ffn_ln)] {
                expect_len(format!("layers.{l}.{name}.gain"), ln.gain.len(), h)?;
                expect_len(format!("layers.{l}.{name}.bias"), ln.bias.len(), h)?;
            }
        }
        Ok(())
    }

    /// `(name, matrix)` for the six prunable matrices of every layer.
    pub fn prunable(&self) -> impl Iterator<Item = (String, &Linear)> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, layer)| {
            LinearSlot::ALL
                .into_iter()
                .map(move |slot| (matrix_name(l, slot), layer.linear(slot)))
        })
    }

    pub fn linear_by_name(&self, name: &str) -> Option<&Linear> {
        let (l, slot) = parse_matrix_name(name)?;
        self.layers.get(l).map(|layer| layer.linear(slot))
    }

    pub fn linear_by_name_mut(&mut self, name: &str) -> Option<&mut Linear> {
        let (l, slot) = parse_matrix_name(name)?;
        self.layers.get_mut(l).map(|layer| layer.linear_mut(slot))
    }

    /// Same values with every matrix stored dense.
    pub fn to_dense_storage(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for slot in LinearSlot::ALL {
                let lin = layer.linear_mut(slot);
                if !matches!(lin.weight, LinearWeight::Dense(_)) {
                    lin.weight = LinearWeight::Dense(lin.weight.to_dense());
                }
            }
        }
        out
    }

    /// Same values with every prunable matrix stored as `storage`, no pruning.
    pub fn with_storage(&self, storage: Storage) -> Result<Self> {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for slot in LinearSlot::ALL {
                let lin = layer.linear_mut(slot);
                lin.weight = lin.weight.convert(storage)?;
            }
        }
        Ok(out)
    }

    /// 64-bit FNV-1a over the serialized parameter payload; identical to the
    /// fingerprint stored in a model file.
    pub fn fingerprint(&self) -> u64 {
        crate::pipeline::modelfile::payload_fingerprint(self)
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = self.token_emb.values().len() + self.pos_emb.values().len() + 2 * self.config.hidden_dim;
        for layer in &self.layers {
            for slot in LinearSlot::ALL {
                let lin = layer.linear(slot);
                let (o, i) = lin.weight.shape();
                n += o * i + lin.bias.len();
            }
            n += 4 * self.config.hidden_dim;
        }
        n
    }
}
