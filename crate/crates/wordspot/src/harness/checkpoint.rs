//! Self-describing binary checkpoint container.
//!
//! Layout (all integers and floats little endian):
//!
//! ```text
//! magic "WSPCKPT1" | version u32 | arch hash [u8; 32]
//! iteration u64 | learning_rate f64 | adam_step u64
//! block count u32
//! per block: name len u32, name bytes, rank u32, extents u64 each,
//!            values f64 each
//! ```
//!
//! Blocks appear in a fixed order: every parameter, then the first and
//! second Adam moments (named `adam.m.<i>` / `adam.v.<i>`). Loading into
//! a graph whose descriptor hash differs is refused.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::arch::{ArchError, LayerGraph, Network};
use crate::diffcore::{AdamState, Array};

const MAGIC: &[u8; 8] = b"WSPCKPT1";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub arch_hash: [u8; 32],
    pub iteration: u64,
    pub learning_rate: f64,
    pub adam_step: u64,
    pub params: Vec<(String, Array)>,
    pub adam_m: Vec<Array>,
    pub adam_v: Vec<Array>,
}

/// SHA-256 of the graph's canonical descriptor.
pub fn arch_hash(graph: &LayerGraph) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(graph.descriptor().as_bytes());
    hasher.finalize().into()
}

impl Checkpoint {
    pub fn from_network(
        network: &Network,
        adam: &AdamState,
        iteration: u64,
    ) -> Checkpoint {
        let (m, v) = adam.moments();
        Checkpoint {
            arch_hash: arch_hash(network.graph()),
            iteration,
            learning_rate: adam.learning_rate,
            adam_step: adam.step_count(),
            params: network
                .params()
                .iter()
                .map(|p| (p.name.clone(), (*p.value).clone()))
                .collect(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
    }

    /// Refuses to bind to a graph with a different descriptor hash.
    pub fn into_network(
        self,
        graph: LayerGraph,
    ) -> Result<(Network, AdamState, u64), HarnessError> {
        if self.arch_hash != arch_hash(&graph) {
            return Err(HarnessError::ArchMismatch(format!(
                "checkpoint was written for a different graph than {:?}",
                graph.name
            )));
        }
        let network = Network::from_parts(graph, self.params).map_err(|e| match e {
            ArchError::ParameterMismatch { name, reason } => {
                HarnessError::CorruptCheckpoint(format!("block {name}: {reason}"))
            }
            other => HarnessError::Arch(other),
        })?;
        let adam = AdamState::restore(self.learning_rate, self.adam_step, self.adam_m, self.adam_v);
        Ok((network, adam, self.iteration))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.arch_hash)?;
        w.write_all(&self.iteration.to_le_bytes())?;
        w.write_all(&self.learning_rate.to_le_bytes())?;
        w.write_all(&self.adam_step.to_le_bytes())?;
        let blocks = self.params.len() * 3;
        w.write_all(&(blocks as u32).to_le_bytes())?;
        for (name, array) in &self.params {
            write_block(&mut w, name, array)?;
        }
        for (i, array) in self.adam_m.iter().enumerate() {
            write_block(&mut w, &format!("adam.m.{i}"), array)?;
        }
        for (i, array) in self.adam_v.iter().enumerate() {
            write_block(&mut w, &format!("adam.v.{i}"), array)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, HarnessError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let corrupt = |msg: &str| HarnessError::CorruptCheckpoint(msg.to_string());

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if read_u32(&mut r)? != VERSION {
            return Err(corrupt("unsupported format version"));
        }
        let mut arch_hash = [0u8; 32];
        r.read_exact(&mut arch_hash)?;
        let iteration = read_u64(&mut r)?;
        let learning_rate = f64::from_le_bytes(read_bytes(&mut r)?);
        let adam_step = read_u64(&mut r)?;
        let blocks = read_u32(&mut r)? as usize;
        if blocks % 3 != 0 {
            return Err(corrupt("block count is not a multiple of three"));
        }
        let n = blocks / 3;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(read_block(&mut r)?);
        }
        let mut adam_m = Vec::with_capacity(n);
        let mut adam_v = Vec::with_capacity(n);
        for (prefix, out) in [("adam.m.", &mut adam_m), ("adam.v.", &mut adam_v)] {
            for i in 0..n {
                let (name, array) = read_block(&mut r)?;
                if name != format!("{prefix}{i}") {
                    return Err(corrupt(&format!("unexpected block {name}")));
                }
                out.push(array);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            arch_hash,
            iteration,
            learning_rate,
            adam_step,
            params,
            adam_m,
            adam_v,
        })
    }
}

fn write_block(w: &mut impl Write, name: &str, array: &Array) -> Result<(), HarnessError> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(array.shape().len() as u32).to_le_bytes())?;
    for &d in array.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in array.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_block(r: &mut impl Read) -> Result<(String, Array), HarnessError> {
    let corrupt = |msg: String| HarnessError::CorruptCheckpoint(msg);
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(corrupt(format!("implausible block name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| corrupt(e.to_string()))?;
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(corrupt(format!("implausible rank {rank} for block {name}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f64::from_le_bytes(read_bytes(r)?));
    }
    let array = Array::from_vec(&shape, data)
        .map_err(|e| corrupt(format!("block {name}: {e}")))?;
    Ok((name, array))
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N], HarnessError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, HarnessError> {
    Ok(u32::from_le_bytes(read_bytes(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, HarnessError> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_phoclenet, miniaturize};
    use crate::diffcore::AdamState;

    fn small_net() -> (Network, AdamState) {
        let graph = miniaturize(&build_phoclenet(36), 8);
        let net = Network::init(&graph, 21).unwrap();
        let shapes: Vec<&[usize]> = net.params().iter().map(|p| p.value.shape()).collect();
        let adam = AdamState::new(1e-3, &shapes);
        (net, adam)
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (net, adam) = small_net();
        let ckpt = Checkpoint::from_network(&net, &adam, 17);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.iteration, 17);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_refuses_mismatched_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let (net, adam) = small_net();
        let ckpt = Checkpoint::from_network(&net, &adam, 0);
        let path = dir.path().join("x.ckpt");
        ckpt.save(&path).unwrap();
        let other = miniaturize(&build_phoclenet(36), 4);
        let loaded = Checkpoint::load(&path).unwrap();
        assert!(matches!(
            loaded.into_network(other),
            Err(HarnessError::ArchMismatch(_))
        ));
    }

    #[test]
    fn tampered_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (net, adam) = small_net();
        let path = dir.path().join("x.ckpt");
        Checkpoint::from_network(&net, &adam, 0).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(HarnessError::CorruptCheckpoint(_))
        ));

        // truncation
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff; // restore magic
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn network_state_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (net, adam) = small_net();
        let path = dir.path().join("x.ckpt");
        Checkpoint::from_network(&net, &adam, 5).save(&path).unwrap();
        let (restored, adam2, iter) = Checkpoint::load(&path)
            .unwrap()
            .into_network(net.graph().clone())
            .unwrap();
        assert_eq!(iter, 5);
        assert_eq!(adam2.step_count(), adam.step_count());
        for (a, b) in net.params().iter().zip(restored.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
    }
}
