//! Named weight container for the detection network, plus the `PANW`
//! binary file format.
//!
//! File layout (all integers little-endian): magic `PANW`, version `u16`,
//! then repeated records of `name_len: u16`, UTF-8 name, `rank: u8`,
//! `dims: u32 x rank`, payload of `f64 x prod(dims)`. Every convolution
//! layer contributes a `<name>.weight` record (rank 4) and a `<name>.bias`
//! record (rank 1); a leading rank-1 `meta` record carries the channel
//! configuration and the generator seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{ConvParams, Tensor};

pub const MAGIC: &[u8; 4] = b"PANW";
pub const FORMAT_VERSION: u16 = 1;

/// New layers are initialized from a Gaussian with mean 0 and this standard
/// deviation; biases start at zero.
pub const INIT_STD_DEV: f64 = 0.01;

/// Anchors per sliding position; fixes the RPN head channel counts
/// (2k textness logits, 4k box deltas).
pub const ANCHORS_PER_CELL: usize = 6;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weights io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a PANW file (bad magic bytes {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported PANW version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt weights file: {0}")]
    Corrupt(String),
    #[error("missing layer record: {0}")]
    MissingLayer(String),
    #[error("unknown layer record: {0}")]
    UnknownLayer(String),
    #[error("layer {name}: expected shape {want:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        want: [usize; 4],
        got: [usize; 4],
    },
    #[error("invalid channel config: channels {channels}, context {context_channels}")]
    BadChannels {
        channels: usize,
        context_channels: usize,
    },
}

/// Channel configuration and provenance of a weight set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelMeta {
    /// Pyramid width C; the stub backbone emits C, 2C, 4C channels.
    pub channels: usize,
    /// Working width of the pyramid attention block (C_ctx).
    pub context_channels: usize,
    pub seed: u64,
}

/// Static description of one convolution layer in the network graph.
#[derive(Debug, Clone)]
pub struct LayerDef {
    pub name: &'static str,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl LayerDef {
    fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel, self.kernel]
    }
}

/// Every layer the forward graph references, in generation order.
pub fn layer_registry(channels: usize, context_channels: usize) -> Vec<LayerDef> {
    let c = channels;
    let cx = context_channels;
    let k = ANCHORS_PER_CELL;
    let def = |name, out_ch, in_ch, kernel, padding, dilation| LayerDef {
        name,
        out_ch,
        in_ch,
        kernel,
        padding,
        dilation,
    };
    let mut layers = vec![
        def("stub.conv1", c, 3, 3, 1, 1),
        def("stub.conv2", c, c, 3, 1, 1),
        def("stub.conv3", 2 * c, c, 3, 1, 1),
        def("stub.conv4", 4 * c, 2 * c, 3, 1, 1),
        def("fpa.dilated3", cx, 4 * c, 3, 3, 3),
        def("fpa.dilated6", cx, 4 * c, 3, 6, 6),
        def("fpa.dilated12", cx, 4 * c, 3, 12, 12),
        def("fpa.reduce", cx, 3 * cx, 1, 0, 1),
        def("fpa.gate", cx, 4 * c, 1, 0, 1),
        def("fpa.global", cx, 4 * c, 1, 0, 1),
        def("pyramid.align", c, cx, 1, 0, 1),
        def("gau3.low", c, 2 * c, 3, 1, 1),
        def("gau3.gate", c, c, 1, 0, 1),
        def("gau2.low", c, c, 3, 1, 1),
        def("gau2.gate", c, c, 1, 0, 1),
    ];
    layers.extend([
        def("rpn.p2.conv", c, c, 3, 1, 1),
        def("rpn.p2.cls", 2 * k, c, 1, 0, 1),
        def("rpn.p2.reg", 4 * k, c, 1, 0, 1),
        def("rpn.p3.conv", c, c, 3, 1, 1),
        def("rpn.p3.cls", 2 * k, c, 1, 0, 1),
        def("rpn.p3.reg", 4 * k, c, 1, 0, 1),
        def("rpn.p4.conv", c, c, 3, 1, 1),
        def("rpn.p4.cls", 2 * k, c, 1, 0, 1),
        def("rpn.p4.reg", 4 * k, c, 1, 0, 1),
    ]);
    layers.extend([
        def("skip.reduce", c, 3 * c, 1, 0, 1),
        def("head.trunk1", 2 * c, c, 3, 1, 1),
        def("head.trunk2", 2 * c, 2 * c, 3, 1, 1),
        def("head.cls", 2, 2 * c, 1, 0, 1),
        def("head.reg", 8, 2 * c, 1, 0, 1),
        def("head.mask1", 2 * c, 2 * c, 3, 1, 1),
        def("head.mask2", 2 * c, 2 * c, 3, 1, 1),
        def("head.mask3", 2 * c, 2 * c, 3, 1, 1),
        def("head.mask4", 2 * c, 2 * c, 3, 1, 1),
        def("head.mask_out", 1, 2 * c, 1, 0, 1),
    ]);
    layers
}

/// Immutable bundle of every layer's parameters, validated against the
/// registry at construction and load time.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    meta: ModelMeta,
    layers: BTreeMap<String, ConvParams>,
}

impl ModelWeights {
    /// All layers drawn from a Gaussian(0, 0.01) with zero biases, using a
    /// seeded generator; the same seed always yields the same weights.
    pub fn generate(
        channels: usize,
        context_channels: usize,
        seed: u64,
    ) -> Result<Self, WeightsError> {
        if channels == 0 || context_channels == 0 {
            return Err(WeightsError::BadChannels {
                channels,
                context_channels,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD_DEV).expect("valid std dev");
        let mut layers = BTreeMap::new();
        for def in layer_registry(channels, context_channels) {
            let weights = Tensor::from_fn(def.weight_shape(), |_, _, _, _| normal.sample(&mut rng));
            let params =
                ConvParams::new(weights, vec![0.0; def.out_ch], 1, def.padding, def.dilation)
                    .expect("registry defines valid conv params");
            layers.insert(def.name.to_string(), params);
        }
        Ok(ModelWeights {
            meta: ModelMeta {
                channels,
                context_channels,
                seed,
            },
            layers,
        })
    }

    pub fn meta(&self) -> ModelMeta {
        self.meta
    }

    /// Parameters of a layer; panics if the name is not in the registry
    /// (construction validates completeness).
    pub fn p(&self, name: &str) -> &ConvParams {
        self.layers
            .get(name)
            .unwrap_or_else(|| panic!("layer {name} missing from validated weights"))
    }

    /// Replaces one layer's parameters, keeping the registry shape contract.
    pub fn set_layer(&mut self, name: &str, params: ConvParams) -> Result<(), WeightsError> {
        let registry = layer_registry(self.meta.channels, self.meta.context_channels);
        let def = registry
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| WeightsError::UnknownLayer(name.to_string()))?;
        if params.weights.shape() != def.weight_shape() {
            return Err(WeightsError::ShapeMismatch {
                name: name.to_string(),
                want: def.weight_shape(),
                got: params.weights.shape(),
            });
        }
        self.layers.insert(name.to_string(), params);
        Ok(())
    }

    /// Zeroes the weights and bias of one layer.
    pub fn zero_layer(&mut self, name: &str) -> Result<(), WeightsError> {
        let current = self
            .layers
            .get(name)
            .ok_or_else(|| WeightsError::UnknownLayer(name.to_string()))?;
        let zeroed = ConvParams::new(
            Tensor::zeros(current.weights.shape()),
            vec![0.0; current.bias.len()],
            current.stride,
            current.padding,
            current.dilation,
        )
        .expect("zeroed params keep valid hyperparameters");
        self.layers.insert(name.to_string(), zeroed);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_record(
            &mut out,
            "meta",
            &[4],
            &[
                self.meta.channels as f64,
                self.meta.context_channels as f64,
                (self.meta.seed >> 32) as f64,
                (self.meta.seed & 0xffff_ffff) as f64,
            ],
        );
        for def in layer_registry(self.meta.channels, self.meta.context_channels) {
            let params = self.p(def.name);
            let [o, i, kh, kw] = params.weights.shape();
            write_record(
                &mut out,
                &format!("{}.weight", def.name),
                &[o, i, kh, kw],
                params.weights.data(),
            );
            write_record(&mut out, &format!("{}.bias", def.name), &[o], &params.bias);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(WeightsError::BadMagic([
                magic[0], magic[1], magic[2], magic[3],
            ]));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        let mut records: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        while !r.done() {
            let (name, dims, payload) = r.record()?;
            if records.insert(name.clone(), (dims, payload)).is_some() {
                return Err(WeightsError::Corrupt(format!("duplicate record {name}")));
            }
        }
        let (meta_dims, meta_payload) = records
            .remove("meta")
            .ok_or_else(|| WeightsError::MissingLayer("meta".to_string()))?;
        if meta_dims != [4] || meta_payload.len() != 4 {
            return Err(WeightsError::Corrupt(
                "meta record must hold 4 values".into(),
            ));
        }
        let channels = meta_payload[0] as usize;
        let context_channels = meta_payload[1] as usize;
        if channels == 0
            || context_channels == 0
            || meta_payload[0].fract() != 0.0
            || meta_payload[1].fract() != 0.0
        {
            return Err(WeightsError::BadChannels {
                channels,
                context_channels,
            });
        }
        let seed = ((meta_payload[2] as u64) << 32) | (meta_payload[3] as u64);
        let meta = ModelMeta {
            channels,
            context_channels,
            seed,
        };

        let mut layers = BTreeMap::new();
        for def in layer_registry(channels, context_channels) {
            let weight_name = format!("{}.weight", def.name);
            let bias_name = format!("{}.bias", def.name);
            let (wdims, wdata) = records
                .remove(&weight_name)
                .ok_or(WeightsError::MissingLayer(weight_name))?;
            let (bdims, bdata) = records
                .remove(&bias_name)
                .ok_or(WeightsError::MissingLayer(bias_name))?;
            let want = def.weight_shape();
            let got: [usize; 4] = match wdims.as_slice() {
                &[a, b, c, d] => [a, b, c, d],
                other => {
                    return Err(WeightsError::Corrupt(format!(
                        "{}.weight has rank {} (want 4)",
                        def.name,
                        other.len()
                    )))
                }
            };
            if got != want {
                return Err(WeightsError::ShapeMismatch {
                    name: def.name.to_string(),
                    want,
                    got,
                });
            }
            if bdims != [def.out_ch] {
                return Err(WeightsError::Corrupt(format!(
                    "{}.bias has dims {:?} (want [{}])",
                    def.name, bdims, def.out_ch
                )));
            }
            let weights =
                Tensor::new(want, wdata).map_err(|e| WeightsError::Corrupt(e.to_string()))?;
            let params = ConvParams::new(weights, bdata, 1, def.padding, def.dilation)
                .map_err(|e| WeightsError::Corrupt(e.to_string()))?;
            layers.insert(def.name.to_string(), params);
        }
        if let Some(name) = records.into_keys().next() {
            return Err(WeightsError::UnknownLayer(name));
        }
        Ok(ModelWeights { meta, layers })
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, dims: &[usize], payload: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.pos + n > self.bytes.len() {
            return Err(WeightsError::Corrupt(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>), WeightsError> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| WeightsError::Corrupt("record name is not UTF-8".into()))?;
        let rank = self.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        // checked product, and the payload must fit in the remaining bytes
        // before anything is allocated
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| {
                WeightsError::Corrupt(format!("record {name} dims {dims:?} overflow"))
            })?;
        let remaining = self.bytes.len() - self.pos;
        if count.checked_mul(8).is_none_or(|bytes| bytes > remaining) {
            return Err(WeightsError::Corrupt(format!(
                "record {name} claims {count} values but only {remaining} bytes remain"
            )));
        }
        let mut payload = Vec::with_capacity(count);
        for _ in 0..count {
            let b = self.take(8)?;
            payload.push(f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]));
        }
        Ok((name, dims, payload))
    }
}
