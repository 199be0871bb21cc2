//! Persistent binary containers.
//!
//! Everything is little-endian and self-describing, with no external codec,
//! so files round-trip byte for byte.
//!
//! FLK1 dataset container:
//!
//! ```text
//! magic    4 bytes  "FLK1"
//! version  u32      1
//! n_agents u32      N
//! n_steps  u32      T
//! f_dim    u32      6 (features per agent)
//! g_dim    u32      2 (action components)
//! ts       f64      sampling time, seconds
//! radius   f64      communication radius, meters
//! seed     u64      generation seed
//! n_train  u64 / n_valid u64 / n_test u64
//! ```
//!
//! followed by the train, validation and test trajectories in order. Each
//! trajectory stores positions, velocities, features and executed actions
//! as f64 arrays in (step, agent, component) order, then per step a u32
//! directed-edge count and that many (src u32, dst u32) pairs sorted by
//! (src, dst).
//!
//! FLKM checkpoint:
//!
//! ```text
//! magic   4 bytes  "FLKM"
//! version u32      1
//! arch    u8       0 = gc, 1 = gcnn, 2 = grnn
//! g       u32 / k u32 / h u32   (h = g for grnn, else 0)
//! n_tensors u32
//! per tensor: rank u32, dims u32 x rank, values f64 x prod(dims)
//! crc32   u32      over every preceding byte
//! ```
//!
//! Tensor order: input bank `(k, f_in, g)`, then for grnn the hidden and
//! output banks `(k, h, h)`, then readout weights `(g, 2)` and bias `(2)`.

use crate::error::{CliError, Result};
use flocknet_core::controllers::{Arch, ControllerParams, FilterBank};
use flocknet_core::flocking::{Dataset, FlockingConfig, TrajectoryRecord};
use flocknet_core::graph::{GraphSequence, GraphSnapshot};
use flocknet_core::{Mat, ACTION_DIM, FEATURE_DIM};
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"FLK1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FLKM";
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------
// primitive little-endian IO

struct Writer<W: Write> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> Writer<W> {
    fn new(inner: W) -> Self {
        Writer {
            inner,
            crc: crc32fast::Hasher::new(),
        }
    }

    fn bytes(&mut self, data: &[u8]) -> Result<()> {
        self.crc.update(data);
        self.inner.write_all(data)?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn finish_with_crc(mut self) -> Result<()> {
        let crc = self.crc.clone().finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
    crc: crc32fast::Hasher,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader {
            inner,
            crc: crc32fast::Hasher::new(),
        }
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| CliError::Format(format!("truncated file: {e}")))?;
        self.crc.update(buf);
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn expect_magic(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        if &b != magic {
            return Err(CliError::Format(format!(
                "not a {what} file (magic {:?})",
                String::from_utf8_lossy(&b)
            )));
        }
        Ok(())
    }

    /// The running CRC over everything read so far must match the trailing
    /// u32 (which is read without updating the CRC).
    fn verify_trailing_crc(&mut self) -> Result<()> {
        let expected = self.crc.clone().finalize();
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| CliError::Format(format!("missing checksum: {e}")))?;
        let stored = u32::from_le_bytes(b);
        if stored != expected {
            return Err(CliError::Format(format!(
                "checksum mismatch: stored {stored:08x}, computed {expected:08x}"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// FLK1 dataset

fn write_mat_seq<W: Write>(w: &mut Writer<W>, seq: &[Mat]) -> Result<()> {
    for m in seq {
        for v in m.as_slice() {
            w.f64(*v)?;
        }
    }
    Ok(())
}

fn write_trajectory<W: Write>(w: &mut Writer<W>, record: &TrajectoryRecord) -> Result<()> {
    write_mat_seq(w, &record.positions)?;
    write_mat_seq(w, &record.velocities)?;
    write_mat_seq(w, &record.features)?;
    write_mat_seq(w, &record.actions)?;
    for graph in record.graphs.iter() {
        let edges = graph.edges();
        w.u32(edges.len() as u32)?;
        for (src, dst, _) in edges {
            w.u32(src as u32)?;
            w.u32(dst as u32)?;
        }
    }
    Ok(())
}

fn read_mat_seq<R: Read>(r: &mut Reader<R>, t: usize, rows: usize, cols: usize) -> Result<Vec<Mat>> {
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let mut m = Mat::zeros(rows, cols);
        for v in m.as_mut_slice() {
            *v = r.f64()?;
        }
        out.push(m);
    }
    Ok(out)
}

fn read_trajectory<R: Read>(
    r: &mut Reader<R>,
    t: usize,
    n: usize,
    sampling_time: f64,
) -> Result<TrajectoryRecord> {
    let positions = read_mat_seq(r, t, n, 2)?;
    let velocities = read_mat_seq(r, t, n, 2)?;
    let features = read_mat_seq(r, t, n, FEATURE_DIM)?;
    let actions = read_mat_seq(r, t, n, ACTION_DIM)?;
    let mut graphs = Vec::with_capacity(t);
    for _ in 0..t {
        let n_edges = r.u32()? as usize;
        let mut pairs = Vec::with_capacity(n_edges);
        let mut in_degree = vec![0u32; n];
        for _ in 0..n_edges {
            let src = r.u32()? as usize;
            let dst = r.u32()? as usize;
            if src >= n || dst >= n {
                return Err(CliError::Format(format!("edge ({src},{dst}) out of range")));
            }
            in_degree[dst] += 1;
            pairs.push((src, dst));
        }
        // weights are not stored: the communication graph always carries
        // the degree normalization, which is derivable from the edge list
        let edges = pairs
            .into_iter()
            .map(|(src, dst)| (src, dst, 1.0 / in_degree[dst] as f64));
        graphs.push(GraphSnapshot::from_weighted_edges(n, edges.collect::<Vec<_>>())?);
    }
    Ok(TrajectoryRecord {
        positions,
        velocities,
        features,
        actions,
        graphs: GraphSequence::new(graphs)?,
        sampling_time,
    })
}

pub fn write_dataset<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = Writer::new(out);
    let config = &dataset.config;
    w.bytes(DATASET_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(config.n_agents as u32)?;
    w.u32(config.n_steps() as u32)?;
    w.u32(FEATURE_DIM as u32)?;
    w.u32(ACTION_DIM as u32)?;
    w.f64(config.sampling_time)?;
    w.f64(config.comm_radius)?;
    w.u64(dataset.seed)?;
    w.u64(dataset.train.len() as u64)?;
    w.u64(dataset.valid.len() as u64)?;
    w.u64(dataset.test.len() as u64)?;
    for record in dataset
        .train
        .iter()
        .chain(&dataset.valid)
        .chain(&dataset.test)
    {
        write_trajectory(&mut w, record)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader::new(input);
    r.expect_magic(DATASET_MAGIC, "FLK1 dataset")?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Format(format!(
            "unsupported dataset version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let t = r.u32()? as usize;
    let f_dim = r.u32()? as usize;
    let g_dim = r.u32()? as usize;
    if f_dim != FEATURE_DIM || g_dim != ACTION_DIM {
        return Err(CliError::Format(format!(
            "unexpected dimensions F={f_dim}, G={g_dim}"
        )));
    }
    let sampling_time = r.f64()?;
    let comm_radius = r.f64()?;
    let seed = r.u64()?;
    let n_train = r.u64()? as usize;
    let n_valid = r.u64()? as usize;
    let n_test = r.u64()? as usize;

    // scenario fields not carried by the header keep their defaults; the
    // recorded trajectories themselves are complete either way
    let config = FlockingConfig {
        n_agents: n,
        sampling_time,
        duration: sampling_time * t as f64,
        comm_radius,
        ..FlockingConfig::default()
    };

    let mut read_split = |count: usize| -> Result<Vec<TrajectoryRecord>> {
        (0..count)
            .map(|_| read_trajectory(&mut r, t, n, sampling_time))
            .collect()
    };
    let train = read_split(n_train)?;
    let valid = read_split(n_valid)?;
    let test = read_split(n_test)?;
    Ok(Dataset {
        config,
        seed,
        train,
        valid,
        test,
    })
}

pub fn write_dataset_file(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(file), dataset)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}

// ---------------------------------------------------------------------
// FLKM checkpoint

fn arch_id(arch: Arch) -> u8 {
    match arch {
        Arch::Gc => 0,
        Arch::Gcnn => 1,
        Arch::Grnn => 2,
    }
}

fn arch_from_id(id: u8) -> Result<Arch> {
    match id {
        0 => Ok(Arch::Gc),
        1 => Ok(Arch::Gcnn),
        2 => Ok(Arch::Grnn),
        other => Err(CliError::Format(format!("unknown arch id {other}"))),
    }
}

fn write_tensor<W: Write>(w: &mut Writer<W>, dims: &[u32], data: &[f64]) -> Result<()> {
    w.u32(dims.len() as u32)?;
    let mut expected = 1usize;
    for &d in dims {
        w.u32(d)?;
        expected *= d as usize;
    }
    debug_assert_eq!(expected, data.len());
    for v in data {
        w.f64(*v)?;
    }
    Ok(())
}

fn write_bank<W: Write>(w: &mut Writer<W>, bank: &FilterBank) -> Result<()> {
    let dims = [
        bank.n_taps() as u32,
        bank.f_in() as u32,
        bank.f_out() as u32,
    ];
    let mut data = Vec::with_capacity(bank.n_taps() * bank.f_in() * bank.f_out());
    for k in 0..bank.n_taps() {
        data.extend_from_slice(bank.tap(k).as_slice());
    }
    write_tensor(w, &dims, &data)
}

fn read_tensor<R: Read>(r: &mut Reader<R>) -> Result<(Vec<u32>, Vec<f64>)> {
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 4 {
        return Err(CliError::Format(format!("bad tensor rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut len = 1usize;
    for _ in 0..rank {
        let d = r.u32()? as usize;
        if d == 0 || len.saturating_mul(d) > 1 << 28 {
            return Err(CliError::Format("bad tensor dimensions".into()));
        }
        len *= d;
        dims.push(d as u32);
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(r.f64()?);
    }
    Ok((dims, data))
}

fn read_bank<R: Read>(r: &mut Reader<R>, expect: (usize, usize, usize)) -> Result<FilterBank> {
    let (dims, data) = read_tensor(r)?;
    if dims.len() != 3
        || dims[0] as usize != expect.0
        || dims[1] as usize != expect.1
        || dims[2] as usize != expect.2
    {
        return Err(CliError::Format(format!(
            "bank shape {dims:?} does not match header {expect:?}"
        )));
    }
    let (k, f_in, f_out) = expect;
    let taps = (0..k)
        .map(|tap| Mat::from_slice(f_in, f_out, &data[tap * f_in * f_out..(tap + 1) * f_in * f_out]))
        .collect::<flocknet_core::Result<Vec<_>>>()?;
    Ok(FilterBank::from_taps(taps)?)
}

pub fn write_checkpoint<W: Write>(out: W, params: &ControllerParams) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.bytes(&[arch_id(params.arch)])?;
    let g = params.g() as u32;
    let k = params.n_taps() as u32;
    let h = if params.arch == Arch::Grnn { g } else { 0 };
    w.u32(g)?;
    w.u32(k)?;
    w.u32(h)?;

    let n_tensors = match params.arch {
        Arch::Gc | Arch::Gcnn => 3,
        Arch::Grnn => 5,
    };
    w.u32(n_tensors)?;
    write_bank(&mut w, &params.input_bank)?;
    if let Some(bank) = &params.hidden_bank {
        write_bank(&mut w, bank)?;
    }
    if let Some(bank) = &params.output_bank {
        write_bank(&mut w, bank)?;
    }
    write_tensor(
        &mut w,
        &[params.readout_w.rows() as u32, params.readout_w.cols() as u32],
        params.readout_w.as_slice(),
    )?;
    write_tensor(&mut w, &[ACTION_DIM as u32], params.readout_b.as_slice())?;
    w.finish_with_crc()
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ControllerParams> {
    let mut r = Reader::new(input);
    r.expect_magic(CHECKPOINT_MAGIC, "FLKM checkpoint")?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut arch_byte = [0u8; 1];
    r.bytes(&mut arch_byte)?;
    let arch = arch_from_id(arch_byte[0])?;
    let g = r.u32()? as usize;
    let k = r.u32()? as usize;
    let h = r.u32()? as usize;
    match arch {
        Arch::Grnn if h != g => {
            return Err(CliError::Format(format!(
                "recurrent checkpoint must have h = g, got h={h}, g={g}"
            )))
        }
        Arch::Gc | Arch::Gcnn if h != 0 => {
            return Err(CliError::Format("non-recurrent checkpoint carries h".into()))
        }
        _ => {}
    }
    let n_tensors = r.u32()?;
    let expected_tensors = if arch == Arch::Grnn { 5 } else { 3 };
    if n_tensors != expected_tensors {
        return Err(CliError::Format(format!(
            "expected {expected_tensors} tensors for {arch}, found {n_tensors}"
        )));
    }

    let input_bank = read_bank(&mut r, (k, FEATURE_DIM, g))?;
    let (hidden_bank, output_bank) = if arch == Arch::Grnn {
        (
            Some(read_bank(&mut r, (k, g, g))?),
            Some(read_bank(&mut r, (k, g, g))?),
        )
    } else {
        (None, None)
    };
    let (w_dims, w_data) = read_tensor(&mut r)?;
    if w_dims != vec![g as u32, ACTION_DIM as u32] {
        return Err(CliError::Format(format!(
            "readout weight shape {w_dims:?} does not match g={g}"
        )));
    }
    let readout_w = Mat::from_slice(g, ACTION_DIM, &w_data)?;
    let (b_dims, b_data) = read_tensor(&mut r)?;
    if b_dims != vec![ACTION_DIM as u32] {
        return Err(CliError::Format("readout bias must have length 2".into()));
    }
    let readout_b = Mat::from_slice(1, ACTION_DIM, &b_data)?;
    r.verify_trailing_crc()?;

    Ok(ControllerParams {
        arch,
        input_bank,
        hidden_bank,
        output_bank,
        readout_w,
        readout_b,
    })
}

pub fn write_checkpoint_file(path: &Path, params: &ControllerParams) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), params)
}

pub fn read_checkpoint_file(path: &Path) -> Result<ControllerParams> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
