//! Precomputed `W(r, t)` on a tensor grid with bicubic Hermite interpolation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{pair_kernel_quad, w_integrand, w_prefactor, ModelParams, WPart};
use crate::error::{Error, Result};
use crate::quadrature::{graded_edges, CompositeRule};

/// Required agreement between interpolated and directly integrated values,
/// relative to `|W|`; an absolute floor of `1e-12` applies near zeros.
pub const TABLE_TOLERANCE: f64 = 1e-6;
/// Node spacing (in units of `σ`) that meets [`TABLE_TOLERANCE`] for `d <= 5`.
pub const DEFAULT_TABLE_RESOLUTION: f64 = 0.02;
const TABLE_ABS_FLOOR: f64 = 1e-12;
const MAGIC: &[u8; 5] = b"NIRK1";
const VERSION: u32 = 1;

static FALLBACK_WARNED: AtomicBool = AtomicBool::new(false);

/// Grid axis: uniform spacing `step` on `[0, knee]`, then geometric with
/// ratio `1 + step/knee` so the spacing is continuous at the knee.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    step: f64,
    n_lin: usize,
    ratio: f64,
    nodes: Vec<f64>,
}

impl Axis {
    pub fn new(max: f64, step: f64, knee: f64) -> Self {
        let n_lin = (knee / step).round().max(1.0) as usize;
        let knee = n_lin as f64 * step;
        let ratio = 1.0 + step / knee;
        let mut nodes: Vec<f64> = (0..=n_lin).map(|i| i as f64 * step).collect();
        let mut x = knee;
        while x < max {
            x *= ratio;
            nodes.push(x);
        }
        if nodes.len() < 2 {
            nodes.push(step);
        }
        Axis {
            step,
            n_lin,
            ratio,
            nodes,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn max(&self) -> f64 {
        *self.nodes.last().expect("axis has nodes")
    }

    /// Cell index `i` and local coordinate `u ∈ [0, 1]` with
    /// `x = nodes[i] + u (nodes[i+1] - nodes[i])`, or `None` outside the axis.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let n = self.nodes.len();
        if !(x >= 0.0) || x > self.nodes[n - 1] {
            return None;
        }
        let knee = self.nodes[self.n_lin];
        let mut i = if x <= knee {
            (x / self.step) as usize
        } else {
            self.n_lin + ((x / knee).ln() / self.ratio.ln()) as usize
        };
        i = i.min(n - 2);
        while i > 0 && x < self.nodes[i] {
            i -= 1;
        }
        while i < n - 2 && x > self.nodes[i + 1] {
            i += 1;
        }
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        Some((i, ((x - a) / (b - a)).clamp(0.0, 1.0)))
    }
}

/// `W(·, t)` and `∂r W(·, t)` at every r-node for a fixed `t`, see
/// [`KernelTable::slice`]; evaluation is then one-dimensional.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    t: f64,
    nodes: Vec<[f64; 2]>,
}

/// `W(r, t)` and its derivatives `∂r W`, `∂t W`, `∂r∂t W` tabulated on an
/// `(r, t)` grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KernelTable {
    params: ModelParams,
    resolution: f64,
    r_axis: Axis,
    t_axis: Axis,
    f: Vec<f64>,
    fr: Vec<f64>,
    ft: Vec<f64>,
    frt: Vec<f64>,
}

fn hermite(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        2.0 * u3 - 3.0 * u2 + 1.0,
        -2.0 * u3 + 3.0 * u2,
        u3 - 2.0 * u2 + u,
        u3 - u2,
    ]
}

impl KernelTable {
    /// Tabulates `W` on `[0, r_max] × [0, t_max]` with relative node spacing
    /// `resolution` (in units of `σ` near the origin), then checks the
    /// interpolant at cell midpoints against adaptive quadrature.
    pub fn build(params: &ModelParams, r_max: f64, t_max: f64, resolution: f64) -> Result<Self> {
        params.validate()?;
        if !(r_max > 0.0 && t_max > 0.0 && r_max.is_finite() && t_max.is_finite()) {
            return Err(Error::invalid(
                "r_max/t_max",
                format!("must be positive, got {r_max}, {t_max}"),
            ));
        }
        if !(resolution > 0.0 && resolution <= 0.5) {
            return Err(Error::invalid(
                "resolution",
                format!("must lie in (0, 0.5], got {resolution}"),
            ));
        }
        let sigma = params.sigma;
        let step = resolution * sigma;
        let r_axis = Axis::new(r_max, step, sigma);
        let t_axis = Axis::new(t_max, step, sigma);
        let mut table = KernelTable {
            params: *params,
            resolution,
            f: vec![0.0; r_axis.nodes.len() * t_axis.nodes.len()],
            fr: vec![0.0; r_axis.nodes.len() * t_axis.nodes.len()],
            ft: vec![0.0; r_axis.nodes.len() * t_axis.nodes.len()],
            frt: vec![0.0; r_axis.nodes.len() * t_axis.nodes.len()],
            r_axis,
            t_axis,
        };
        if params.e == 0.0 {
            return Ok(table);
        }
        table.fill();
        table.validate()?;
        Ok(table)
    }

    fn fill(&mut self) {
        let p = self.params;
        let d = p.d;
        let sigma = p.sigma;
        let rm = self.r_axis.max();
        let width = (0.5 / sigma).min(std::f64::consts::FRAC_PI_2 / rm);
        let t_top = self.t_axis.max();
        let floor = (1e-3 / t_top).min(1e-7 / sigma);
        let edges = graded_edges(floor, 1.0 / sigma, p.k_max(), 1.25, width);
        let rule = CompositeRule::from_edges(&edges, 16);
        let nk = rule.len();
        let pre = w_prefactor(&p);
        let nt = self.t_axis.nodes.len();
        let exps: Vec<Vec<f64>> = self
            .t_axis
            .nodes
            .iter()
            .map(|&t| rule.nodes.iter().map(|&k| (-k * t).exp()).collect())
            .collect();
        let mut a = vec![0.0; nk];
        let mut ad = vec![0.0; nk];
        for (ir, &r) in self.r_axis.nodes.iter().enumerate() {
            for j in 0..nk {
                let k = rule.nodes[j];
                let w = rule.weights[j] * pre;
                a[j] = w * w_integrand(d, sigma, k, r, 0.0, WPart::Value);
                ad[j] = w * w_integrand(d, sigma, k, r, 0.0, WPart::DR);
            }
            for (it, ex) in exps.iter().enumerate() {
                let (mut f, mut fr, mut ft, mut frt) = (0.0, 0.0, 0.0, 0.0);
                for j in 0..nk {
                    let k = rule.nodes[j];
                    let av = a[j] * ex[j];
                    let adv = ad[j] * ex[j];
                    f += av;
                    fr += adv;
                    ft -= k * av;
                    frt -= k * adv;
                }
                let idx = ir * nt + it;
                self.f[idx] = f;
                self.fr[idx] = fr;
                self.ft[idx] = ft;
                self.frt[idx] = frt;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let nr = self.r_axis.nodes.len() - 1;
        let nt = self.t_axis.nodes.len() - 1;
        let stride_r = (nr / 16).max(1);
        let stride_t = (nt / 16).max(1);
        let mut worst: Option<(f64, f64, f64)> = None;
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for i in (0..nr).step_by(stride_r).chain([0, 1, nr - 1]) {
            for j in (0..nt).step_by(stride_t).chain([0, 1, nt - 1]) {
                cells.push((i.min(nr - 1), j.min(nt - 1)));
            }
        }
        cells.sort_unstable();
        cells.dedup();
        for (i, j) in cells {
            let r = 0.5 * (self.r_axis.nodes[i] + self.r_axis.nodes[i + 1]);
            let t = 0.5 * (self.t_axis.nodes[j] + self.t_axis.nodes[j + 1]);
            let exact = pair_kernel_quad(r, t, &self.params, WPart::Value)?.value;
            let approx = self.interpolate(r, t).expect("midpoint inside table");
            let err = (approx - exact).abs() / exact.abs().max(TABLE_ABS_FLOOR / TABLE_TOLERANCE);
            if worst.is_none_or(|(e, _, _)| err > e) {
                worst = Some((err, r, t));
            }
        }
        match worst {
            Some((err, r, t)) if err > TABLE_TOLERANCE => Err(Error::TableResolution {
                max_error: err,
                r,
                t,
                tol: TABLE_TOLERANCE,
            }),
            _ => Ok(()),
        }
    }

    /// Interpolated `W(r, t)`, or `None` outside the tabulated range.
    pub fn interpolate(&self, r: f64, t: f64) -> Option<f64> {
        let (i, u) = self.r_axis.locate(r)?;
        let (j, v) = self.t_axis.locate(t.abs())?;
        let hr = self.r_axis.nodes[i + 1] - self.r_axis.nodes[i];
        let ht = self.t_axis.nodes[j + 1] - self.t_axis.nodes[j];
        let bu = hermite(u);
        let bv = hermite(v);
        let nt = self.t_axis.nodes.len();
        let mut out = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let idx = (i + a) * nt + j + b;
                out += bu[a] * bv[b] * self.f[idx]
                    + hr * bu[2 + a] * bv[b] * self.fr[idx]
                    + ht * bu[a] * bv[2 + b] * self.ft[idx]
                    + hr * ht * bu[2 + a] * bv[2 + b] * self.frt[idx];
            }
        }
        Some(out)
    }

    /// Interpolates the table in `t` once, leaving a cubic Hermite in `r`.
    pub fn slice(&self, t: f64) -> Option<TimeSlice> {
        let (j, v) = self.t_axis.locate(t.abs())?;
        let ht = self.t_axis.nodes[j + 1] - self.t_axis.nodes[j];
        let bv = hermite(v);
        let nt = self.t_axis.nodes.len();
        let nodes = (0..self.r_axis.nodes.len())
            .map(|i| {
                let (mut g, mut gr) = (0.0, 0.0);
                for b in 0..2 {
                    let idx = i * nt + j + b;
                    g += bv[b] * self.f[idx] + ht * bv[2 + b] * self.ft[idx];
                    gr += bv[b] * self.fr[idx] + ht * bv[2 + b] * self.frt[idx];
                }
                [g, gr]
            })
            .collect();
        Some(TimeSlice { t: t.abs(), nodes })
    }

    /// `W(r, slice.t)`; falls back to direct quadrature when `r` is outside the table.
    pub fn w_slice(&self, r: f64, s: &TimeSlice) -> f64 {
        let Some((i, u)) = self.r_axis.locate(r) else {
            return self.w(r, s.t);
        };
        let hr = self.r_axis.nodes[i + 1] - self.r_axis.nodes[i];
        let bu = hermite(u);
        let (a, b) = (s.nodes[i], s.nodes[i + 1]);
        bu[0] * a[0] + bu[1] * b[0] + hr * (bu[2] * a[1] + bu[3] * b[1])
    }

    /// `W(r, t)`: interpolated inside the table, direct quadrature outside.
    pub fn w(&self, r: f64, t: f64) -> f64 {
        if let Some(v) = self.interpolate(r, t) {
            return v;
        }
        if !FALLBACK_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!(
                "kernel table lookup outside [0, {}] x [0, {}] at (r = {r}, t = {t}); using direct quadrature",
                self.r_max(),
                self.t_max()
            );
        }
        match pair_kernel_quad(r, t.abs(), &self.params, WPart::Value) {
            Ok(q) => q.value,
            Err(Error::Quadrature { value, .. }) => value,
            Err(e) => panic!("kernel evaluation outside table failed: {e}"),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn r_max(&self) -> f64 {
        self.r_axis.max()
    }

    pub fn t_max(&self) -> f64 {
        self.t_axis.max()
    }

    pub fn r_grid(&self) -> &[f64] {
        self.r_axis.nodes()
    }

    pub fn t_grid(&self) -> &[f64] {
        self.t_axis.nodes()
    }

    /// Stored value at grid node `(i, j)`.
    pub fn node_value(&self, i: usize, j: usize) -> f64 {
        self.f[i * self.t_axis.nodes.len() + j]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.params.d as u32)?;
        for x in [
            self.params.e,
            self.params.sigma,
            self.params.pot_c,
            self.params.pot_alpha,
            self.resolution,
        ] {
            w.write_f64::<LittleEndian>(x)?;
        }
        for axis in [&self.r_axis, &self.t_axis] {
            w.write_f64::<LittleEndian>(axis.step)?;
            w.write_u64::<LittleEndian>(axis.n_lin as u64)?;
            w.write_f64::<LittleEndian>(axis.ratio)?;
            w.write_u64::<LittleEndian>(axis.nodes.len() as u64)?;
            for &x in &axis.nodes {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        for arr in [&self.f, &self.fr, &self.ft, &self.frt] {
            for &x in arr.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let io = |e: std::io::Error| fmt(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt("not a kernel table (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut vals = [0.0; 5];
        for v in vals.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(io)?;
        }
        let params = ModelParams {
            d,
            e: vals[0],
            sigma: vals[1],
            pot_c: vals[2],
            pot_alpha: vals[3],
        };
        params.validate()?;
        let mut read_axis = || -> Result<Axis> {
            let step = r.read_f64::<LittleEndian>().map_err(io)?;
            let n_lin = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            let ratio = r.read_f64::<LittleEndian>().map_err(io)?;
            let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            if n < 2 || n_lin >= n || n > 1 << 24 {
                return Err(fmt(format!(
                    "corrupt axis header (n = {n}, n_lin = {n_lin})"
                )));
            }
            let mut nodes = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut nodes).map_err(io)?;
            Ok(Axis {
                step,
                n_lin,
                ratio,
                nodes,
            })
        };
        let r_axis = read_axis()?;
        let t_axis = read_axis()?;
        let len = r_axis.nodes.len() * t_axis.nodes.len();
        let mut arrays = [
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
        ];
        for arr in arrays.iter_mut() {
            r.read_f64_into::<LittleEndian>(arr).map_err(io)?;
        }
        let [f, fr, ft, frt] = arrays;
        Ok(KernelTable {
            params,
            resolution: vals[4],
            r_axis,
            t_axis,
            f,
            fr,
            ft,
            frt,
        })
    }
}
