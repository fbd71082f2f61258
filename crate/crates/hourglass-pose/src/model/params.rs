//! Weight snapshots and their on-disk container.
//!
//! The container is little-endian and byte-exact: every f64 is stored with
//! `to_le_bytes`, so a save/load round trip reproduces weights bit for bit.
//! Layout:
//!
//! ```text
//! magic            8 bytes  "HGPOSEW1"
//! config           7 x u32  stacks, order, channels, joints, input, heatmap, upsample(0|1)
//! counts           2 x u32  trainable entries, buffer entries
//! entries          name_len u32, name utf-8, ndim u32, dims u32..., data f64-le...
//! ```
//!
//! Trainable entries come first, buffers after, both in the network's fixed
//! visitation order.

use super::{ModelConfig, Network, UpsampleMode};
use crate::nn::ParamVisit;
use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"HGPOSEW1";
const MAX_NAME: usize = 4096;
const MAX_NDIM: usize = 8;

/// A named snapshot of everything a network holds: trainable parameters and
/// the batch-norm running statistics. `params` alone defines the trainable
/// scalar count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub config: ModelConfig,
    pub params: Vec<(String, ArrayD<f64>)>,
    pub buffers: Vec<(String, ArrayD<f64>)>,
}

impl ParameterStore {
    pub fn empty(config: ModelConfig) -> Self {
        ParameterStore { config, params: Vec::new(), buffers: Vec::new() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Reads a container file; rejects trailing garbage.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let store = Self::read_from(&mut file)?;
        let mut rest = [0u8; 1];
        if file.read(&mut rest)? != 0 {
            return Err(Error::Container("trailing data after weight container".into()));
        }
        Ok(store)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.config.num_stacks,
            self.config.hourglass_order,
            self.config.channels,
            self.config.num_joints,
            self.config.input_side,
            self.config.heatmap_side,
            match self.config.upsample {
                UpsampleMode::Nearest => 0,
                UpsampleMode::Deconv => 1,
            },
            self.params.len(),
            self.buffers.len(),
        ] {
            write_u32(w, v)?;
        }
        for (name, a) in self.params.iter().chain(self.buffers.iter()) {
            write_entry(w, name, a)?;
        }
        Ok(())
    }

    /// Reads one container from the stream, leaving anything after it
    /// unconsumed (checkpoints append more sections).
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container("bad magic, not a weight container".into()));
        }
        let num_stacks = read_u32(r)? as usize;
        let hourglass_order = read_u32(r)? as usize;
        let channels = read_u32(r)? as usize;
        let num_joints = read_u32(r)? as usize;
        let input_side = read_u32(r)? as usize;
        let heatmap_side = read_u32(r)? as usize;
        let upsample = match read_u32(r)? {
            0 => UpsampleMode::Nearest,
            1 => UpsampleMode::Deconv,
            other => {
                return Err(Error::Container(format!("unknown upsample code {other}")));
            }
        };
        let n_params = read_u32(r)? as usize;
        let n_buffers = read_u32(r)? as usize;
        let config = ModelConfig {
            num_stacks,
            hourglass_order,
            channels,
            num_joints,
            input_side,
            heatmap_side,
            upsample,
        };
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(read_entry(r)?);
        }
        let mut buffers = Vec::with_capacity(n_buffers);
        for _ in 0..n_buffers {
            buffers.push(read_entry(r)?);
        }
        Ok(ParameterStore { config, params, buffers })
    }
}

pub(crate) fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Container(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Container("truncated weight container".into()))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_entry(w: &mut impl Write, name: &str, a: &ArrayD<f64>) -> Result<()> {
    write_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    write_u32(w, a.ndim())?;
    for d in a.shape() {
        write_u32(w, *d)?;
    }
    let mut bytes = Vec::with_capacity(a.len() * 8);
    for v in a.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_entry(r: &mut impl Read) -> Result<(String, ArrayD<f64>)> {
    let name_len = read_u32(r)? as usize;
    if name_len > MAX_NAME {
        return Err(Error::Container(format!("entry name length {name_len} out of range")));
    }
    let mut name_bytes = vec![0u8; name_len];
    read_exact(r, &mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Container("entry name is not utf-8".into()))?;
    let ndim = read_u32(r)? as usize;
    if ndim > MAX_NDIM {
        return Err(Error::Container(format!("entry rank {ndim} out of range")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut len = 1usize;
    for _ in 0..ndim {
        let d = read_u32(r)? as usize;
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::Container("entry size overflows".into()))?;
        dims.push(d);
    }
    let mut bytes = vec![0u8; len * 8];
    read_exact(r, &mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let a = ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| Error::Container(format!("entry shape mismatch: {e}")))?;
    Ok((name, a))
}

impl Network {
    /// Snapshot of all parameters and buffers, in visitation order.
    pub fn export_store(&mut self) -> ParameterStore {
        let mut store = ParameterStore::empty(self.config);
        self.for_each_param(&mut |p| store.params.push((p.name.clone(), p.value.clone())));
        self.for_each_buffer(&mut |name, b| store.buffers.push((name.to_string(), b.clone())));
        store
    }

    /// Writes a snapshot back in. The store must carry the same architecture
    /// and the exact entry names and shapes this network produces.
    pub fn load_store(&mut self, store: &ParameterStore) -> Result<()> {
        if store.config != self.config {
            return Err(Error::Incompatible(format!(
                "store config {:?} does not match network config {:?}",
                store.config, self.config
            )));
        }
        let mut idx = 0usize;
        let mut err: Option<Error> = None;
        self.for_each_param(&mut |p| {
            if err.is_some() {
                return;
            }
            match store.params.get(idx) {
                Some((name, value)) if name == &p.name && value.shape() == p.value.shape() => {
                    p.value.assign(value);
                }
                Some((name, value)) => {
                    err = Some(Error::Incompatible(format!(
                        "entry {idx}: expected {} {:?}, store has {} {:?}",
                        p.name,
                        p.value.shape(),
                        name,
                        value.shape()
                    )));
                }
                None => err = Some(Error::Incompatible("store has too few entries".into())),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != store.params.len() {
            return Err(Error::Incompatible(format!(
                "store has {} trainable entries, network expects {idx}",
                store.params.len()
            )));
        }
        let mut idx = 0usize;
        let mut err: Option<Error> = None;
        self.for_each_buffer(&mut |name, b| {
            if err.is_some() {
                return;
            }
            match store.buffers.get(idx) {
                Some((sname, value)) if sname == name && value.shape() == b.shape() => {
                    b.assign(value);
                }
                Some((sname, value)) => {
                    err = Some(Error::Incompatible(format!(
                        "buffer {idx}: expected {name} {:?}, store has {sname} {:?}",
                        b.shape(),
                        value.shape()
                    )));
                }
                None => err = Some(Error::Incompatible("store has too few buffers".into())),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != store.buffers.len() {
            return Err(Error::Incompatible(format!(
                "store has {} buffer entries, network expects {idx}",
                store.buffers.len()
            )));
        }
        Ok(())
    }

    /// Builds a network straight from a snapshot.
    pub fn from_store(store: &ParameterStore) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // overwritten by the load
        let mut net = Network::new(store.config, &mut rng)?;
        net.load_store(store)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{count_parameters, ModelConfig, Network, UpsampleMode};
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn micro(mode: UpsampleMode) -> ModelConfig {
        ModelConfig {
            num_stacks: 1,
            hourglass_order: 1,
            channels: 8,
            num_joints: 2,
            input_side: 32,
            heatmap_side: 8,
            upsample: mode,
        }
    }

    fn randn4(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut a = Array4::zeros(d);
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn parameter_count_matches_hand_derivation() {
        // residual(in, out): in*(out/2) + 2*(out/2) + 9*(out/2)^2 + 2*(out/2)
        //                    + (out/2)*out + 2*out + (in != out)*in*out
        // stem: 294 + 4 + 72 + 68 + 256 = 694
        // order-1 hourglass ch 8: 4 residuals at 240 (+1024 deconv weight)
        // stage: hourglass + 240 + 64 + 16 + 18
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut deconv = Network::new(micro(UpsampleMode::Deconv), &mut rng).unwrap();
        assert_eq!(deconv.num_parameters(), 3016);
        let mut nearest = Network::new(micro(UpsampleMode::Nearest), &mut rng).unwrap();
        assert_eq!(nearest.num_parameters(), 1992);
        assert_eq!(count_parameters(&deconv.export_store()), 3016);
    }

    #[test]
    fn empty_store_counts_zero() {
        assert_eq!(count_parameters(&ParameterStore::empty(micro(UpsampleMode::Nearest))), 0);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::new(micro(UpsampleMode::Deconv), &mut rng).unwrap();
        // push the running statistics away from their initial values
        let x = randn4(&mut rng, (2, 3, 32, 32));
        net.forward_train(&x).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let store = net.export_store();
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        assert_eq!(store, loaded);

        let net2 = Network::from_store(&loaded).unwrap();
        let probe = randn4(&mut rng, (1, 3, 32, 32));
        let y1 = net.forward_eval(&probe);
        let y2 = net2.forward_eval(&probe);
        assert_eq!(y1.heatmaps, y2.heatmaps);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(micro(UpsampleMode::Nearest), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        net.export_store().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ParameterStore::load(&path), Err(Error::Container(_))));
    }

    #[test]
    fn truncated_and_padded_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::new(micro(UpsampleMode::Nearest), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        net.export_store().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(ParameterStore::load(&path).is_err());

        let mut padded = bytes.clone();
        padded.push(0);
        std::fs::write(&path, &padded).unwrap();
        assert!(matches!(ParameterStore::load(&path), Err(Error::Container(_))));
    }

    #[test]
    fn loading_into_a_different_architecture_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut small = Network::new(micro(UpsampleMode::Deconv), &mut rng).unwrap();
        let store = small.export_store();
        let mut other_cfg = micro(UpsampleMode::Deconv);
        other_cfg.num_stacks = 2;
        let mut other = Network::new(other_cfg, &mut rng).unwrap();
        assert!(matches!(other.load_store(&store), Err(Error::Incompatible(_))));
    }

    #[test]
    fn tampered_entry_name_fails_to_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Network::new(micro(UpsampleMode::Nearest), &mut rng).unwrap();
        let mut store = net.export_store();
        store.params[0].0 = "not.a.real.layer".into();
        assert!(matches!(net.load_store(&store), Err(Error::Incompatible(_))));
    }
}
