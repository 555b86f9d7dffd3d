//! Binary containers for demonstration sets and preprocessed context sets.
//!
//! Layout: 8-byte magic, `u32` format version, then length-prefixed
//! sections. Everything is little-endian and reals are IEEE-754 binary64, so
//! round-trips are bit-exact. The byte-level layout is documented in
//! `docs/formats.md`.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::distance::{Metric, Normalizer, SsimParams, WindowMode};
use crate::error::{Error, Result};
use crate::retrieval::CtxSet;
use crate::types::{
    ActKind, ActValue, ContextDatapoint, DemoSet, Demonstration, EnvSpec, ObsKind, ObsValue, Step, StepRef,
};

pub const DEMOSET_MAGIC: &[u8; 8] = b"RGDEMOS\0";
pub const CTXSET_MAGIC: &[u8; 8] = b"RGCTXST\0";
pub const DEMOSET_VERSION: u32 = 1;
pub const CTXSET_VERSION: u32 = 1;

/// Little-endian byte sink.
#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).expect("vec write");
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).expect("vec write");
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).expect("vec write");
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// Writes a `u64` length prefix followed by whatever `f` writes.
    pub fn section(&mut self, f: impl FnOnce(&mut ByteWriter)) {
        let mut inner = ByteWriter::new();
        f(&mut inner);
        self.u64(inner.buf.len() as u64);
        self.buf.extend_from_slice(&inner.buf);
    }
}

/// Little-endian byte source that reports truncation as a format error.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("truncated payload".into())
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.buf.read_u8().map_err(truncated)
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.buf.read_u32::<LE>().map_err(truncated)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.buf.read_u64::<LE>().map_err(truncated)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.buf.read_f64::<LE>().map_err(truncated)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.buf.len() < n.saturating_mul(8) {
            return Err(Error::Format("truncated payload".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.bytes(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    pub fn section(&mut self) -> Result<ByteReader<'a>> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Format("section too large".into()))?;
        Ok(ByteReader::new(self.bytes(n)?))
    }

    pub fn finish(&self, what: &str) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes after {what}", self.buf.len())))
        }
    }

    /// Checks magic and version, returning the reader positioned after them.
    pub fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<()> {
        let found = self.bytes(8)?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::VersionMismatch { found: v, expected: version });
        }
        Ok(())
    }
}

pub fn write_spec(w: &mut ByteWriter, spec: &EnvSpec) {
    w.str(&spec.env_id);
    w.u8(match spec.obs_kind {
        ObsKind::Vector => 0,
        ObsKind::Image => 1,
    });
    w.u32(spec.obs_dims.len() as u32);
    for &d in &spec.obs_dims {
        w.u32(d);
    }
    w.u8(match spec.act_kind {
        ActKind::Discrete => 0,
        ActKind::Continuous => 1,
    });
    w.u32(spec.act_dims);
    w.u32(spec.horizon);
    w.f64(spec.random_return);
    w.f64(spec.expert_return);
}

pub fn read_spec(r: &mut ByteReader) -> Result<EnvSpec> {
    let env_id = r.str()?;
    let obs_kind = match r.u8()? {
        0 => ObsKind::Vector,
        1 => ObsKind::Image,
        t => return Err(Error::Format(format!("unknown observation kind {t}"))),
    };
    let rank = r.u32()?;
    if rank > 8 {
        return Err(Error::Format(format!("implausible observation rank {rank}")));
    }
    let obs_dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let act_kind = match r.u8()? {
        0 => ActKind::Discrete,
        1 => ActKind::Continuous,
        t => return Err(Error::Format(format!("unknown action kind {t}"))),
    };
    Ok(EnvSpec {
        env_id,
        obs_kind,
        obs_dims,
        act_kind,
        act_dims: r.u32()?,
        horizon: r.u32()?,
        random_return: r.f64()?,
        expert_return: r.f64()?,
    })
}

fn write_action(w: &mut ByteWriter, a: &ActValue) {
    match a {
        ActValue::Discrete(i) => {
            w.u8(0);
            w.u32(*i);
        }
        ActValue::Continuous(v) => {
            w.u8(1);
            w.u32(v.len() as u32);
            w.f64s(v);
        }
    }
}

fn read_action(r: &mut ByteReader) -> Result<ActValue> {
    match r.u8()? {
        0 => Ok(ActValue::Discrete(r.u32()?)),
        1 => {
            let n = r.u32()? as usize;
            Ok(ActValue::Continuous(r.f64s(n)?))
        }
        t => Err(Error::Format(format!("unknown action tag {t}"))),
    }
}

fn write_obs(w: &mut ByteWriter, obs: &ObsValue) {
    w.u32(obs.0.len() as u32);
    w.f64s(&obs.0);
}

fn read_obs(r: &mut ByteReader) -> Result<ObsValue> {
    let n = r.u32()? as usize;
    Ok(ObsValue(r.f64s(n)?))
}

fn write_step(w: &mut ByteWriter, s: &Step) {
    write_obs(w, &s.state);
    w.f64(s.prev_reward);
    write_action(w, &s.action);
}

fn read_step(r: &mut ByteReader) -> Result<Step> {
    Ok(Step { state: read_obs(r)?, prev_reward: r.f64()?, action: read_action(r)? })
}

pub fn encode_demoset(set: &DemoSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut w = ByteWriter::new();
    w.bytes(DEMOSET_MAGIC);
    w.u32(DEMOSET_VERSION);
    w.section(|w| write_spec(w, &set.spec));
    w.section(|w| {
        w.u32(set.demos.len() as u32);
        for d in &set.demos {
            w.u32(d.demo_id);
            w.u64(d.level_seed);
            w.f64(d.final_reward);
            w.f64(d.total_return);
            w.u32(d.steps.len() as u32);
            for s in &d.steps {
                write_step(w, s);
            }
        }
    });
    w.section(|w| {
        w.u32(set.retrieval_ids.len() as u32);
        for &id in &set.retrieval_ids {
            w.u32(id);
        }
    });
    Ok(w.into_bytes())
}

pub fn decode_demoset(bytes: &[u8]) -> Result<DemoSet> {
    let mut r = ByteReader::new(bytes);
    r.header(DEMOSET_MAGIC, DEMOSET_VERSION)?;
    let mut spec_sec = r.section()?;
    let spec = read_spec(&mut spec_sec)?;
    spec_sec.finish("spec section")?;

    let mut demo_sec = r.section()?;
    let count = demo_sec.u32()?;
    let mut demos = Vec::new();
    for _ in 0..count {
        let demo_id = demo_sec.u32()?;
        let level_seed = demo_sec.u64()?;
        let final_reward = demo_sec.f64()?;
        let total_return = demo_sec.f64()?;
        let n = demo_sec.u32()?;
        let steps = (0..n).map(|_| read_step(&mut demo_sec)).collect::<Result<Vec<_>>>()?;
        demos.push(Demonstration { demo_id, level_seed, steps, final_reward, total_return });
    }
    demo_sec.finish("demo section")?;

    let mut id_sec = r.section()?;
    let n = id_sec.u32()?;
    let retrieval_ids = (0..n).map(|_| id_sec.u32()).collect::<Result<Vec<_>>>()?;
    id_sec.finish("retrieval section")?;
    r.finish("demoset")?;

    let set = DemoSet { spec, demos, retrieval_ids };
    set.validate()?;
    Ok(set)
}

pub fn write_metric(w: &mut ByteWriter, m: &Metric) {
    match m {
        Metric::L2 => w.u8(0),
        Metric::Ssim(p) => {
            w.u8(1);
            w.u32(p.window);
            w.f64(p.c1);
            w.f64(p.c2);
            w.u8(match p.mode {
                WindowMode::Valid => 0,
                WindowMode::Full => 1,
            });
        }
    }
}

pub fn read_metric(r: &mut ByteReader) -> Result<Metric> {
    match r.u8()? {
        0 => Ok(Metric::L2),
        1 => {
            let window = r.u32()?;
            let c1 = r.f64()?;
            let c2 = r.f64()?;
            let mode = match r.u8()? {
                0 => WindowMode::Valid,
                1 => WindowMode::Full,
                t => return Err(Error::Format(format!("unknown window mode {t}"))),
            };
            Ok(Metric::Ssim(SsimParams { window, c1, c2, mode }))
        }
        t => Err(Error::Format(format!("unknown metric tag {t}"))),
    }
}

fn write_normalizer(w: &mut ByteWriter, n: &Normalizer) {
    w.str(&n.env_id);
    write_metric(w, &n.metric);
    w.f64(n.scale);
}

fn read_normalizer(r: &mut ByteReader) -> Result<Normalizer> {
    let env_id = r.str()?;
    let metric = read_metric(r)?;
    let scale = r.f64()?;
    Normalizer::new(env_id, metric, scale).map_err(|e| Error::Format(e.to_string()))
}

fn write_datapoint(w: &mut ByteWriter, dp: &ContextDatapoint) {
    w.str(&dp.env_id);
    w.u32(dp.neighbors.len() as u32);
    for s in &dp.neighbors {
        write_step(w, s);
    }
    for r in &dp.neighbor_refs {
        w.u32(r.demo_id);
        w.u32(r.step_idx);
    }
    w.f64s(&dp.neighbor_dists);
    write_obs(w, &dp.query_state);
    w.f64(dp.query_prev_reward);
    match &dp.query_action {
        None => w.u8(0),
        Some(a) => {
            w.u8(1);
            write_action(w, a);
        }
    }
    match dp.query_ref {
        None => w.u8(0),
        Some(r) => {
            w.u8(1);
            w.u32(r.demo_id);
            w.u32(r.step_idx);
        }
    }
    w.f64(dp.dist_first);
}

fn read_datapoint(r: &mut ByteReader) -> Result<ContextDatapoint> {
    let env_id = r.str()?;
    let n = r.u32()? as usize;
    let neighbors = (0..n).map(|_| read_step(r)).collect::<Result<Vec<_>>>()?;
    let neighbor_refs =
        (0..n).map(|_| Ok(StepRef { demo_id: r.u32()?, step_idx: r.u32()? })).collect::<Result<Vec<_>>>()?;
    let neighbor_dists = r.f64s(n)?;
    let query_state = read_obs(r)?;
    let query_prev_reward = r.f64()?;
    let query_action = match r.u8()? {
        0 => None,
        1 => Some(read_action(r)?),
        t => return Err(Error::Format(format!("bad option tag {t}"))),
    };
    let query_ref = match r.u8()? {
        0 => None,
        1 => Some(StepRef { demo_id: r.u32()?, step_idx: r.u32()? }),
        t => return Err(Error::Format(format!("bad option tag {t}"))),
    };
    Ok(ContextDatapoint {
        env_id,
        neighbors,
        neighbor_refs,
        neighbor_dists,
        query_state,
        query_prev_reward,
        query_action,
        query_ref,
        dist_first: r.f64()?,
    })
}

pub fn encode_ctxset(set: &CtxSet) -> Result<Vec<u8>> {
    set.spec.validate()?;
    for (i, dp) in set.datapoints.iter().enumerate() {
        dp.validate(&set.spec).map_err(|e| match e {
            Error::Validation { field, reason } => {
                Error::Validation { field: format!("datapoints[{i}].{field}"), reason }
            }
            other => other,
        })?;
    }
    let mut w = ByteWriter::new();
    w.bytes(CTXSET_MAGIC);
    w.u32(CTXSET_VERSION);
    w.section(|w| {
        write_spec(w, &set.spec);
        write_normalizer(w, &set.normalizer);
        w.u32(set.n);
    });
    w.section(|w| {
        w.u32(set.datapoints.len() as u32);
        for dp in &set.datapoints {
            w.section(|w| write_datapoint(w, dp));
        }
    });
    Ok(w.into_bytes())
}

pub fn decode_ctxset(bytes: &[u8]) -> Result<CtxSet> {
    let mut r = ByteReader::new(bytes);
    r.header(CTXSET_MAGIC, CTXSET_VERSION)?;
    let mut head = r.section()?;
    let spec = read_spec(&mut head)?;
    let normalizer = read_normalizer(&mut head)?;
    let n = head.u32()?;
    head.finish("ctxset header")?;
    let mut body = r.section()?;
    let count = body.u32()?;
    let mut datapoints = Vec::new();
    for _ in 0..count {
        let mut sec = body.section()?;
        datapoints.push(read_datapoint(&mut sec)?);
        sec.finish("datapoint")?;
    }
    body.finish("datapoint section")?;
    r.finish("ctxset")?;
    spec.validate()?;
    for dp in &datapoints {
        dp.validate(&spec)?;
    }
    Ok(CtxSet { spec, normalizer, n, datapoints })
}

pub fn read_demoset_file(path: &std::path::Path) -> Result<DemoSet> {
    decode_demoset(&std::fs::read(path)?)
}

pub fn write_demoset_file(path: &std::path::Path, set: &DemoSet) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_demoset(set)?)?;
    Ok(())
}

pub fn read_ctxset_file(path: &std::path::Path) -> Result<CtxSet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_ctxset(&buf)
}

pub fn write_ctxset_file(path: &std::path::Path, set: &CtxSet) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_ctxset(set)?)?;
    Ok(())
}

/// Lossy, non-canonical JSON-lines dump: one step per line.
pub fn export_jsonl(set: &DemoSet, mut out: impl Write) -> Result<()> {
    for d in &set.demos {
        for (t, s) in d.steps.iter().enumerate() {
            let line = serde_json::json!({
                "env_id": set.spec.env_id,
                "demo_id": d.demo_id,
                "step": t,
                "retrieval": set.is_retrieval(d.demo_id),
                "state": s.state.0,
                "prev_reward": s.prev_reward,
                "action": s.action,
            });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
