//! Field, kernel and log serialisation.
//!
//! Binary files are a 32-byte header followed by little-endian `f64`s:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `KVHF`                              |
//! | 4..8   | `n_q` (u32)                               |
//! | 8..12  | `n_p` (u32, 1 for line data)              |
//! | 12..28 | `q_min, q_max, p_min, p_max` as `f32`     |
//! | 28     | payload kind                              |
//! | 29     | boundary mode (0 spectral, 1 FD4)         |
//! | 30..32 | zero                                      |
//!
//! Bounds are stored in single precision to fit the header; they label the
//! data and are not meant to rebuild a grid bit-for-bit.

use std::io::{self, BufRead, Read, Write};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{BoundaryMode, PhaseGrid};
use crate::kvh::ConservedRow;
use crate::liouville::DensityRow;
use crate::madelung::HydroState;
use crate::qhd::QWaveFunction;
use crate::vonneumann::{KernelRow, VNKernel};

pub const MAGIC: &[u8; 4] = b"KVHF";
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Payload {
    /// One `f64` per node.
    Real = 1,
    /// `re, im` per node.
    Complex = 2,
    /// `N × N` complex matrix, `N = n_q n_p`, row-major.
    Kernel = 3,
}

impl Payload {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Payload::Real),
            2 => Ok(Payload::Complex),
            3 => Ok(Payload::Kernel),
            _ => Err(Error::Format(format!("unknown payload kind {b}"))),
        }
    }

    fn doubles(self, n_q: usize, n_p: usize) -> usize {
        let n = n_q * n_p;
        match self {
            Payload::Real => n,
            Payload::Complex => 2 * n,
            Payload::Kernel => 2 * n * n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub n_q: u32,
    pub n_p: u32,
    pub q_range: (f32, f32),
    pub p_range: (f32, f32),
    pub payload: Payload,
    pub bc: BoundaryMode,
}

impl Header {
    pub fn for_grid(g: &PhaseGrid, payload: Payload) -> Self {
        let (q, p) = (g.q_range(), g.p_range());
        Self {
            n_q: g.n_q() as u32,
            n_p: g.n_p() as u32,
            q_range: (q.0 as f32, q.1 as f32),
            p_range: (p.0 as f32, p.1 as f32),
            payload,
            bc: g.bc(),
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.n_q.to_le_bytes());
        b[8..12].copy_from_slice(&self.n_p.to_le_bytes());
        for (k, v) in [self.q_range.0, self.q_range.1, self.p_range.0, self.p_range.1].iter().enumerate() {
            b[12 + 4 * k..16 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        b[28] = self.payload as u8;
        b[29] = match self.bc {
            BoundaryMode::PeriodicSpectral => 0,
            BoundaryMode::FiniteDifference4 => 1,
        };
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u = |r: std::ops::Range<usize>| u32::from_le_bytes(b[r].try_into().unwrap());
        let f = |k: usize| f32::from_le_bytes(b[12 + 4 * k..16 + 4 * k].try_into().unwrap());
        let bc = match b[29] {
            0 => BoundaryMode::PeriodicSpectral,
            1 => BoundaryMode::FiniteDifference4,
            x => return Err(Error::Format(format!("unknown boundary mode {x}"))),
        };
        Ok(Self {
            n_q: u(4..8),
            n_p: u(8..12),
            q_range: (f(0), f(1)),
            p_range: (f(2), f(3)),
            payload: Payload::from_byte(b[28])?,
            bc,
        })
    }
}

fn write_doubles<W: Write>(w: &mut W, xs: impl Iterator<Item = f64>) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 * 1024);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
        if buf.len() >= 8 * 1024 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}

fn complex_doubles<'a>(it: impl Iterator<Item = &'a Complex64> + 'a) -> impl Iterator<Item = f64> + 'a {
    it.flat_map(|z| [z.re, z.im])
}

pub fn write_field<W: Write>(w: &mut W, f: &ScalarField) -> Result<()> {
    w.write_all(&Header::for_grid(f.grid(), Payload::Complex).to_bytes())?;
    write_doubles(w, complex_doubles(f.values().iter()))?;
    Ok(())
}

pub fn write_real<W: Write>(w: &mut W, g: &PhaseGrid, values: &Array2<f64>) -> Result<()> {
    if values.dim() != g.shape() {
        return Err(Error::GridMismatch);
    }
    w.write_all(&Header::for_grid(g, Payload::Real).to_bytes())?;
    write_doubles(w, values.iter().copied())?;
    Ok(())
}

pub fn write_kernel<W: Write>(w: &mut W, k: &VNKernel) -> Result<()> {
    w.write_all(&Header::for_grid(k.grid(), Payload::Kernel).to_bytes())?;
    write_doubles(w, complex_doubles(k.matrix().iter()))?;
    Ok(())
}

/// `σ_q`, `σ_p` and `D` as three consecutive real records.
pub fn write_hydro<W: Write>(w: &mut W, h: &HydroState) -> Result<()> {
    let g = h.grid();
    write_real(w, g, &h.sigma.a_q.re())?;
    write_real(w, g, &h.sigma.a_p.re())?;
    write_real(w, g, &h.d.re())
}

/// A line wavefunction as a complex record with `n_p = 1`.
pub fn write_line<W: Write>(w: &mut W, psi: &QWaveFunction) -> Result<()> {
    let (lo, hi) = psi.line().range();
    let h = Header {
        n_q: psi.line().len() as u32,
        n_p: 1,
        q_range: (lo as f32, hi as f32),
        p_range: (0.0, 0.0),
        payload: Payload::Complex,
        bc: BoundaryMode::PeriodicSpectral,
    };
    w.write_all(&h.to_bytes())?;
    write_doubles(w, complex_doubles(psi.values().iter()))?;
    Ok(())
}

/// A header and its payload as raw doubles.
#[derive(Clone, Debug)]
pub struct Record {
    pub header: Header,
    pub data: Vec<f64>,
}

impl Record {
    pub fn real(&self) -> Result<Array2<f64>> {
        if self.header.payload != Payload::Real {
            return Err(Error::Format("expected a real record".into()));
        }
        let shape = (self.header.n_q as usize, self.header.n_p as usize);
        Ok(Array2::from_shape_vec(shape, self.data.clone()).expect("length checked on read"))
    }

    /// Node values for `Complex`, the matrix for `Kernel`.
    pub fn complex(&self) -> Result<Array2<Complex64>> {
        let (nq, np) = (self.header.n_q as usize, self.header.n_p as usize);
        let shape = match self.header.payload {
            Payload::Complex => (nq, np),
            Payload::Kernel => (nq * np, nq * np),
            Payload::Real => return Err(Error::Format("expected a complex record".into())),
        };
        let z = self.data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Ok(Array2::from_shape_vec(shape, z).expect("length checked on read"))
    }
}

/// Reads one record, or `None` at a clean end of stream.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<Record>> {
    let mut hb = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = r.read(&mut hb[got..])?;
        if n == 0 {
            return if got == 0 { Ok(None) } else { Err(Error::Format("truncated header".into())) };
        }
        got += n;
    }
    let header = Header::from_bytes(&hb)?;
    let n = header.payload.doubles(header.n_q as usize, header.n_p as usize);
    let mut raw = vec![0u8; 8 * n];
    r.read_exact(&mut raw).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated payload".into()),
        _ => Error::Io(e),
    })?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Some(Record { header, data }))
}

pub fn read_records<R: Read>(r: &mut R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    while let Some(rec) = read_record(r)? {
        out.push(rec);
    }
    Ok(out)
}

/// CSV with header `q,p,re,im`, one row per node in row-major order.
pub fn write_field_csv<W: Write>(w: &mut W, f: &ScalarField) -> Result<()> {
    writeln!(w, "q,p,re,im")?;
    let g = f.grid();
    for ((i, j), z) in f.values().indexed_iter() {
        writeln!(w, "{:e},{:e},{:e},{:e}", g.q(i), g.p(j), z.re, z.im)?;
    }
    Ok(())
}

/// CSV with header `x,re,im`.
pub fn write_line_csv<W: Write>(w: &mut W, psi: &QWaveFunction) -> Result<()> {
    writeln!(w, "x,re,im")?;
    for (i, z) in psi.values().iter().enumerate() {
        writeln!(w, "{:e},{:e},{:e}", psi.line().x(i), z.re, z.im)?;
    }
    Ok(())
}

/// Reads `q,p,re,im` rows back into `(q, p, value)` triples.
pub fn read_field_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64, Complex64)>> {
    let mut lines = r.lines();
    let head = lines.next().transpose()?;
    if head.as_deref().map(str::trim) != Some("q,p,re,im") {
        return Err(Error::Format("missing `q,p,re,im` header".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))?;
        if v.len() != 4 {
            return Err(Error::Format(format!("row {} has {} columns", n + 2, v.len())));
        }
        out.push((v[0], v[1], Complex64::new(v[2], v[3])));
    }
    Ok(out)
}

pub fn write_conserved_csv<W: Write>(w: &mut W, rows: &[ConservedRow]) -> Result<()> {
    writeln!(w, "t,norm,energy")?;
    for r in rows {
        writeln!(w, "{:e},{:e},{:e}", r.t, r.norm, r.energy)?;
    }
    Ok(())
}

pub fn write_density_csv<W: Write>(w: &mut W, rows: &[DensityRow]) -> Result<()> {
    writeln!(w, "t,l1_error,l2_error,min_rho")?;
    for r in rows {
        writeln!(w, "{:e},{:e},{:e},{:e}", r.t, r.l1_error, r.l2_error, r.min_rho)?;
    }
    Ok(())
}

pub fn write_kernel_csv<W: Write>(w: &mut W, rows: &[KernelRow]) -> Result<()> {
    writeln!(w, "t,trace,energy,casimir2,herm_residual,sigma_defect")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.trace, r.energy, r.casimir2, r.herm_residual, r.sigma_defect
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvh::GaussianPacket;
    use crate::madelung::hydro_from_wavefunction;
    use crate::qhd::Line;
    use crate::vonneumann::kernel_from_wavefunction;
    use proptest::prelude::*;

    fn grid() -> PhaseGrid {
        PhaseGrid::new((-3.0, 3.5), (-2.0, 2.0), 12, 10, BoundaryMode::PeriodicSpectral).unwrap()
    }

    #[test]
    fn header_layout() {
        let h = Header::for_grid(&grid(), Payload::Complex);
        let b = h.to_bytes();
        assert_eq!(&b[..4], b"KVHF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 10);
        assert_eq!(f32::from_le_bytes(b[12..16].try_into().unwrap()), -3.0);
        assert_eq!(f32::from_le_bytes(b[24..28].try_into().unwrap()), 2.0);
        assert_eq!(b[28], 2);
        assert_eq!(&b[29..], &[0, 0, 0]);
        assert_eq!(Header::from_bytes(&b).unwrap(), h);
    }

    #[test]
    fn field_roundtrip_is_exact() {
        let g = grid();
        let f = ScalarField::from_fn(&g, |q, p| Complex64::new(q.sin() * p, 1.0 / 3.0 + q * p));
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 16 * 120);
        let rec = read_record(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(rec.complex().unwrap(), *f.values());
        assert!(rec.real().is_err());
    }

    #[test]
    fn kernel_and_hydro_roundtrip() {
        let g = grid();
        let psi = GaussianPacket::new((0.2, 0.1), 0.6, 1.0).with_linear_phase(0.4, -0.2).sample(&g).unwrap();
        let psi = psi.normalized().unwrap();
        let k = kernel_from_wavefunction(&psi).unwrap();
        let mut buf = Vec::new();
        write_kernel(&mut buf, &k).unwrap();
        let rec = read_record(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(rec.header.payload, Payload::Kernel);
        assert_eq!(rec.complex().unwrap(), *k.matrix());

        let hs = hydro_from_wavefunction(&psi);
        let mut buf = Vec::new();
        write_hydro(&mut buf, &hs).unwrap();
        let recs = read_records(&mut buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].real().unwrap(), hs.sigma.a_q.re());
        assert_eq!(recs[1].real().unwrap(), hs.sigma.a_p.re());
        assert_eq!(recs[2].real().unwrap(), hs.d.re());
    }

    #[test]
    fn line_record() {
        let l = Line::new(-4.0, 4.0, 16).unwrap();
        let psi = QWaveFunction::coherent(l, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_line(&mut buf, &psi).unwrap();
        let rec = read_record(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!((rec.header.n_q, rec.header.n_p), (16, 1));
        assert_eq!(rec.complex().unwrap().column(0).to_owned(), *psi.values());
    }

    #[test]
    fn corrupt_input() {
        let mut buf = Vec::new();
        write_field(&mut buf, &ScalarField::zeros(&grid())).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_record(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_record(&mut &short[..]), Err(Error::Format(_))));
        assert!(matches!(read_record(&mut &buf[..10]), Err(Error::Format(_))));
        assert!(read_record(&mut &buf[..0]).unwrap().is_none());
    }

    #[test]
    fn csv_roundtrip() {
        let g = grid();
        let f = ScalarField::from_fn(&g, |q, p| Complex64::new(q - p, q * p));
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &f).unwrap();
        let rows = read_field_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 120);
        for ((i, j), z) in f.values().indexed_iter() {
            let (q, p, v) = rows[i * 10 + j];
            assert_eq!((q, p, v), (g.q(i), g.p(j), *z));
        }
        assert!(read_field_csv(&b"x,y\n"[..]).is_err());
    }

    #[test]
    fn log_headers() {
        let mut buf = Vec::new();
        write_conserved_csv(&mut buf, &[ConservedRow { t: 0.0, norm: 1.0, energy: 0.5 }]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,norm,energy\n0e0,1e0,5e-1"));
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"t,l1_error,l2_error,min_rho\n");
        let mut buf = Vec::new();
        write_kernel_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"t,trace,energy,casimir2,herm_residual,sigma_defect\n");
    }

    proptest! {
        #[test]
        fn real_roundtrip(vals in proptest::collection::vec(-1e300f64..1e300, 120)) {
            let g = grid();
            let a = Array2::from_shape_vec((12, 10), vals).unwrap();
            let mut buf = Vec::new();
            write_real(&mut buf, &g, &a).unwrap();
            let rec = read_record(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(rec.real().unwrap(), a);
        }
    }
}
