//! Particle fields `(Y, Z)` on a node range, with empirical means and norm proxies.

use rayon::prelude::*;

use super::regression::Regressor;
use super::{chunked_sum, CHUNK};
use crate::error::{Error, Result};

/// `(Y, Z)` on the absolute node range `start..=end`.
///
/// `Y` is laid out `[node][particle][i]`, `Z` as `[node][particle][i * d + j]`.
/// `Z` at `end` is stored too: it is the value the generator sees there, but
/// it never enters a norm, since the to-go sums stop before the last node.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessPair {
    n: usize,
    d: usize,
    n_particles: usize,
    start: usize,
    end: usize,
    dt: f64,
    y: Vec<f64>,
    z: Vec<f64>,
    mean_y: Vec<f64>,
    mean_z: Vec<f64>,
}

impl ProcessPair {
    pub fn zeros(n: usize, d: usize, n_particles: usize, start: usize, end: usize, dt: f64) -> Result<Self> {
        if end < start {
            return Err(Error::invalid("nodes", format!("end {end} before start {start}")));
        }
        if n == 0 || d == 0 || n_particles == 0 {
            return Err(Error::invalid("shape", "dimensions must be positive"));
        }
        let nodes = end - start + 1;
        Ok(ProcessPair {
            n,
            d,
            n_particles,
            start,
            end,
            dt,
            y: vec![0.0; nodes * n_particles * n],
            z: vec![0.0; nodes * n_particles * n * d],
            mean_y: vec![0.0; nodes * n],
            mean_z: vec![0.0; nodes * n * d],
        })
    }

    /// Builds from raw arrays in the documented layout and computes the means.
    pub fn from_fields(
        n: usize,
        d: usize,
        n_particles: usize,
        start: usize,
        dt: f64,
        y: Vec<f64>,
        z: Vec<f64>,
    ) -> Result<Self> {
        let per = n_particles * n;
        if per == 0 || y.len() % per != 0 || y.is_empty() {
            return Err(Error::invalid("Y", "length is not a whole number of nodes"));
        }
        let nodes = y.len() / per;
        if z.len() != nodes * per * d {
            return Err(Error::invalid("Z", format!("expected {} entries, got {}", nodes * per * d, z.len())));
        }
        let mut out = ProcessPair {
            n,
            d,
            n_particles,
            start,
            end: start + nodes - 1,
            dt,
            y,
            z,
            mean_y: vec![0.0; nodes * n],
            mean_z: vec![0.0; nodes * n * d],
        };
        out.refresh_means();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
    pub fn start(&self) -> usize {
        self.start
    }
    pub fn end(&self) -> usize {
        self.end
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn nodes(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    fn local(&self, k: usize) -> usize {
        assert!(k >= self.start && k <= self.end, "node {k} outside {}..={}", self.start, self.end);
        k - self.start
    }

    /// `Y` at node `k` for all particles, `N × n`.
    pub fn y_node(&self, k: usize) -> &[f64] {
        let len = self.n_particles * self.n;
        let l = self.local(k);
        &self.y[l * len..(l + 1) * len]
    }

    pub fn y_node_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.n_particles * self.n;
        let l = self.local(k);
        &mut self.y[l * len..(l + 1) * len]
    }

    /// `Z` at node `k` for all particles, `N × n·d`.
    pub fn z_node(&self, k: usize) -> &[f64] {
        let len = self.n_particles * self.n * self.d;
        let l = self.local(k);
        &self.z[l * len..(l + 1) * len]
    }

    pub fn z_node_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.n_particles * self.n * self.d;
        let l = self.local(k);
        &mut self.z[l * len..(l + 1) * len]
    }

    pub fn y_at(&self, k: usize, p: usize) -> &[f64] {
        &self.y_node(k)[p * self.n..(p + 1) * self.n]
    }

    pub fn z_at(&self, k: usize, p: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.z_node(k)[p * w..(p + 1) * w]
    }

    pub fn mean_y(&self, k: usize) -> &[f64] {
        let l = self.local(k);
        &self.mean_y[l * self.n..(l + 1) * self.n]
    }

    pub fn mean_z(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        let l = self.local(k);
        &self.mean_z[l * w..(l + 1) * w]
    }

    pub fn y_raw(&self) -> &[f64] {
        &self.y
    }
    pub fn z_raw(&self) -> &[f64] {
        &self.z
    }

    /// Writes component `i` from per-node scalar `Y^i` (`[node][p]`) and row `Z^i` (`[node][p][j]`).
    pub fn set_component(&mut self, i: usize, yi: &[f64], zi: &[f64]) {
        let (n, d, np) = (self.n, self.d, self.n_particles);
        let nodes = self.end - self.start + 1;
        assert_eq!(yi.len(), nodes * np);
        assert_eq!(zi.len(), nodes * np * d);
        for l in 0..nodes {
            for p in 0..np {
                self.y[(l * np + p) * n + i] = yi[l * np + p];
                let dst = (l * np + p) * n * d + i * d;
                self.z[dst..dst + d].copy_from_slice(&zi[(l * np + p) * d..(l * np + p + 1) * d]);
            }
        }
    }

    /// Component `i` of `Y` at node `k`, one value per particle.
    pub fn y_component(&self, k: usize, i: usize) -> Vec<f64> {
        self.y_node(k).chunks(self.n).map(|r| r[i]).collect()
    }

    /// Recomputes `E[Y_{t_k}]` and `E[Z_{t_k}]` as particle averages.
    pub fn refresh_means(&mut self) {
        let nodes = self.end - self.start + 1;
        let (n, w, np) = (self.n, self.n * self.d, self.n_particles);
        let ys = &self.y;
        let zs = &self.z;
        let means: Vec<(Vec<f64>, Vec<f64>)> = (0..nodes)
            .into_par_iter()
            .map(|l| {
                let yb = &ys[l * np * n..(l + 1) * np * n];
                let zb = &zs[l * np * w..(l + 1) * np * w];
                (column_means(yb, n, np), column_means(zb, w, np))
            })
            .collect();
        for (l, (my, mz)) in means.into_iter().enumerate() {
            self.mean_y[l * n..(l + 1) * n].copy_from_slice(&my);
            self.mean_z[l * w..(l + 1) * w].copy_from_slice(&mz);
        }
    }

    /// Returns `(mean_Y, mean_Z)` after recomputing them.
    pub fn empirical_means(&mut self) -> (&[f64], &[f64]) {
        self.refresh_means();
        (&self.mean_y, &self.mean_z)
    }

    /// Largest deviation between stored means and a fresh recomputation.
    pub fn mean_consistency_error(&self) -> f64 {
        let mut fresh = self.clone();
        fresh.refresh_means();
        self.mean_y
            .iter()
            .zip(&fresh.mean_y)
            .chain(self.mean_z.iter().zip(&fresh.mean_z))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.n, self.d, self.n_particles, self.start, self.end)
            != (other.n, other.d, other.n_particles, other.start, other.end)
        {
            return Err(Error::invalid("ProcessPair", "shapes differ"));
        }
        Ok(())
    }

    /// `self − other`, fieldwise.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let mut out = self.clone();
        out.y.iter_mut().zip(&other.y).for_each(|(a, b)| *a -= b);
        out.z.iter_mut().zip(&other.z).for_each(|(a, b)| *a -= b);
        out.mean_y.iter_mut().zip(&other.mean_y).for_each(|(a, b)| *a -= b);
        out.mean_z.iter_mut().zip(&other.mean_z).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    /// Restriction to the absolute nodes `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start < self.start || end > self.end || end < start {
            return Err(Error::invalid("nodes", format!("{start}..={end} not inside {}..={}", self.start, self.end)));
        }
        let (a, b) = (start - self.start, end - self.start + 1);
        let (py, pz) = (self.n_particles * self.n, self.n_particles * self.n * self.d);
        let (my, mz) = (self.n, self.n * self.d);
        let mut out = self.clone_header();
        out.start = start;
        out.end = end;
        out.y = self.y[a * py..b * py].to_vec();
        out.z = self.z[a * pz..b * pz].to_vec();
        out.mean_y = self.mean_y[a * my..b * my].to_vec();
        out.mean_z = self.mean_z[a * mz..b * mz].to_vec();
        Ok(out)
    }

    fn clone_header(&self) -> Self {
        ProcessPair {
            n: self.n,
            d: self.d,
            n_particles: self.n_particles,
            start: self.start,
            end: self.end,
            dt: self.dt,
            y: Vec::new(),
            z: Vec::new(),
            mean_y: Vec::new(),
            mean_z: Vec::new(),
        }
    }

    /// Joins `earlier` (ending at `self.start`) in front of `self`. The shared
    /// node keeps the values of `self`.
    pub fn prepend(&self, earlier: &Self) -> Result<Self> {
        if earlier.end != self.start
            || (earlier.n, earlier.d, earlier.n_particles) != (self.n, self.d, self.n_particles)
        {
            return Err(Error::invalid("ProcessPair", "windows are not adjacent"));
        }
        let head = earlier;
        let head_nodes = earlier.end - earlier.start;
        let mut out = self.clone_header();
        out.start = earlier.start;
        let (py, pz) = (self.n_particles * self.n, self.n_particles * self.n * self.d);
        let (my, mz) = (self.n, self.n * self.d);
        out.y = [&head.y[..head_nodes * py], &self.y[..]].concat();
        out.z = [&head.z[..head_nodes * pz], &self.z[..]].concat();
        out.mean_y = [&head.mean_y[..head_nodes * my], &self.mean_y[..]].concat();
        out.mean_z = [&head.mean_z[..head_nodes * mz], &self.mean_z[..]].concat();
        Ok(out)
    }

    /// Discrete `S∞` proxy: `max_{k,p} |Y_{t_k}|` (Euclidean norm over components).
    pub fn sup_norm_estimate(&self) -> f64 {
        let n = self.n;
        chunked_sum(
            self.y.len() / n,
            0.0f64,
            |r| self.y[r.start * n..r.end * n].chunks(n).map(crate::model::norm).fold(0.0, f64::max),
            |a, b| *a = a.max(*b),
        )
    }

    /// `sqrt(max_p E[Σ_{l=k}^{end-1} |Z_{t_l}|² dt | W_{t_k}])` for each node `k` of the range.
    pub fn bmo_to_go(&self, reg: &Regressor<'_>) -> Vec<f64> {
        let np = self.n_particles;
        let w = self.n * self.d;
        let nodes = self.end - self.start + 1;
        let mut out = vec![0.0; nodes];
        let mut acc = vec![0.0; np];
        for l in (0..nodes - 1).rev() {
            let k = self.start + l;
            let zk = self.z_node(k);
            acc.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (off, a) in chunk.iter_mut().enumerate() {
                    let p = c * CHUNK + off;
                    let s: f64 = zk[p * w..(p + 1) * w].iter().map(|v| v * v).sum();
                    *a += s * self.dt;
                }
            });
            let proj = reg.project_or_mean(k, &acc);
            // Projections of a nonnegative field can dip below zero; the proxy cannot.
            out[l] = proj.iter().copied().fold(0.0, f64::max).sqrt();
        }
        out
    }

    /// Discrete BMO proxy over grid-node stopping times.
    pub fn bmo_norm_estimate(&self, reg: &Regressor<'_>) -> f64 {
        self.bmo_to_go(reg).into_iter().fold(0.0, f64::max)
    }
}

/// Column means of a `rows × width` block with the fixed chunk order.
fn column_means(block: &[f64], width: usize, rows: usize) -> Vec<f64> {
    let sums = chunked_sum(
        rows,
        vec![0.0; width],
        |r| {
            let mut s = vec![0.0; width];
            for row in block[r.start * width..r.end * width].chunks(width) {
                s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            s
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    );
    sums.into_iter().map(|s| s / rows as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{Ensemble, RegressionBasis, TimeGrid};

    fn setup(m: usize, n: usize) -> Ensemble {
        Ensemble::generate(TimeGrid::new(m, 1.0).unwrap(), n, 1, 9).unwrap()
    }

    #[test]
    fn sup_of_constant_and_path() {
        let e = setup(8, 4);
        let mut p = ProcessPair::zeros(1, 1, 4, 0, 8, 1.0 / 8.0).unwrap();
        for k in 0..=8 {
            p.y_node_mut(k).fill(-0.7);
        }
        assert_eq!(p.sup_norm_estimate(), 0.7);

        let mut q = ProcessPair::zeros(1, 1, 4, 0, 8, 1.0 / 8.0).unwrap();
        for k in 0..=8 {
            q.y_node_mut(k)[2] = e.w(k, 2, 0);
        }
        let expect = (0..=8).map(|k| e.w(k, 2, 0).abs()).fold(0.0, f64::max);
        assert_eq!(q.sup_norm_estimate(), expect);
    }

    #[test]
    fn sup_of_deterministic_exponential() {
        let m = 20;
        let mut p = ProcessPair::zeros(1, 1, 3, 0, m, 1.0 / m as f64).unwrap();
        for k in 0..=m {
            let t = k as f64 / m as f64;
            p.y_node_mut(k).fill(1.5 * (1.0 - t).exp());
        }
        assert_eq!(p.sup_norm_estimate(), 1.5 * 1f64.exp());
    }

    #[test]
    fn bmo_proxies() {
        let m = 20;
        let e = setup(m, 2_000);
        let reg = Regressor::new(&e, &RegressionBasis::default_for(1)).unwrap();
        let mut p = ProcessPair::zeros(2, 1, 2_000, 0, m, e.grid().dt()).unwrap();
        assert_eq!(p.bmo_norm_estimate(&reg), 0.0);

        for k in 0..=m {
            for (idx, v) in p.z_node_mut(k).iter_mut().enumerate() {
                *v = if idx % 2 == 0 { 0.3 } else { -0.4 };
            }
        }
        let b = p.bmo_norm_estimate(&reg);
        assert!((b - 0.5).abs() < 1e-12, "{b}");

        let mut h = ProcessPair::zeros(1, 1, 2_000, 0, m, e.grid().dt()).unwrap();
        for k in m / 2..m {
            h.z_node_mut(k).fill(1.0);
        }
        assert!((h.bmo_norm_estimate(&reg) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn means_and_antisymmetry() {
        let mut p = ProcessPair::zeros(1, 1, 2, 0, 3, 0.1).unwrap();
        for k in 0..=3 {
            let y = p.y_node_mut(k);
            y[0] = k as f64;
            y[1] = -(k as f64);
        }
        let (my, _) = p.empirical_means();
        assert!(my.iter().all(|&m| m == 0.0));
        assert_eq!(p.mean_consistency_error(), 0.0);
    }

    #[test]
    fn means_of_terminal_brownian() {
        let n = 100_000;
        let e = setup(2, n);
        let mut p = ProcessPair::zeros(1, 1, n, 0, 2, 0.5).unwrap();
        p.y_node_mut(2).copy_from_slice(e.w_node(2));
        p.refresh_means();
        assert!(p.mean_y(2)[0].abs() < 4.0 * (1.0 / n as f64).sqrt());
    }

    #[test]
    fn slice_prepend_roundtrip() {
        let mut p = ProcessPair::zeros(2, 1, 3, 0, 6, 0.1).unwrap();
        for (i, v) in p.y.iter_mut().enumerate() {
            *v = i as f64;
        }
        for (i, v) in p.z.iter_mut().enumerate() {
            *v = -(i as f64);
        }
        p.refresh_means();
        let a = p.slice(0, 3).unwrap();
        let b = p.slice(3, 6).unwrap();
        assert_eq!(b.prepend(&a).unwrap(), p);
        assert!(p.slice(4, 7).is_err());
        assert!(b.prepend(&p.slice(0, 2).unwrap()).is_err());
    }

    #[test]
    fn difference_shape_checked() {
        let p = ProcessPair::zeros(1, 1, 3, 0, 2, 0.1).unwrap();
        let q = ProcessPair::zeros(1, 1, 3, 0, 3, 0.1).unwrap();
        assert!(p.difference(&q).is_err());
        assert_eq!(p.difference(&p).unwrap().sup_norm_estimate(), 0.0);
    }
}
