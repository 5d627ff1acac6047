//! Record-wise distance between two binary artifact files.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use kvh_core::io::{read_records, Header, Payload, Record};
use kvh_core::{BoundaryMode, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(Norm::L1),
            "l2" => Some(Norm::L2),
            "linf" => Some(Norm::Linf),
            _ => None,
        }
    }
}

fn spacing((lo, hi): (f32, f32), n: u32, bc: BoundaryMode) -> f64 {
    let l = f64::from(hi) - f64::from(lo);
    match bc {
        BoundaryMode::FiniteDifference4 => l / f64::from(n - 1),
        _ => l / f64::from(n),
    }
}

/// Quadrature weight of one stored value: cell area for fields, `dx` for
/// lines, `w²` for kernel entries.
fn weight(h: &Header) -> f64 {
    let dq = spacing(h.q_range, h.n_q, h.bc);
    let w = if h.n_p == 1 { dq } else { dq * spacing(h.p_range, h.n_p, h.bc) };
    match h.payload {
        Payload::Kernel => w * w,
        _ => w,
    }
}

fn pointwise(a: &Record, b: &Record) -> Vec<f64> {
    match a.header.payload {
        Payload::Real => a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect(),
        _ => a
            .data
            .chunks_exact(2)
            .zip(b.data.chunks_exact(2))
            .map(|(x, y)| (x[0] - y[0]).hypot(x[1] - y[1]))
            .collect(),
    }
}

pub fn distance(a: &Record, b: &Record, norm: Norm) -> Result<f64> {
    if a.header != b.header {
        return Err(Error::Format(format!("header mismatch: {:?} vs {:?}", a.header, b.header)));
    }
    let d = pointwise(a, b);
    let w = weight(&a.header);
    Ok(match norm {
        Norm::L1 => w * d.iter().sum::<f64>(),
        Norm::L2 => (w * d.iter().map(|x| x * x).sum::<f64>()).sqrt(),
        Norm::Linf => d.iter().copied().fold(0.0, f64::max),
    })
}

/// One distance per record pair.
pub fn compare(a: &Path, b: &Path, norm: Norm) -> Result<Vec<f64>> {
    let ra = read_records(&mut BufReader::new(File::open(a)?))?;
    let rb = read_records(&mut BufReader::new(File::open(b)?))?;
    if ra.len() != rb.len() {
        return Err(Error::Format(format!("record count differs: {} vs {}", ra.len(), rb.len())));
    }
    ra.iter().zip(&rb).map(|(x, y)| distance(x, y, norm)).collect()
}
