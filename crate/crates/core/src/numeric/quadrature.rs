//! Gauss–Legendre quadrature: one-dimensional composite rules and their
//! tensor products over boxes.
//!
//! The composite form (several panels per axis, a moderate-order rule per
//! panel) integrates both polynomial basis functions and the sharply peaked
//! truncated-normal kernels to near machine precision; single-panel
//! high-order rules would struggle with the boundary layers that appear when
//! a drift term pushes the kernel mean toward a box edge.

use crate::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre polynomial recurrence; accurate to
/// machine precision for n up to several hundred.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-flavored initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P'_n(x) by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on an interval.
#[derive(Debug, Clone)]
pub struct Quadrature1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly (per panel).
    pub order: u32,
}

impl Quadrature1d {
    /// `points_per_panel`-point Gauss–Legendre on each of `panels` equal
    /// subintervals of [lo, hi].
    pub fn composite(lo: f64, hi: f64, points_per_panel: usize, panels: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::config(format!("empty interval [{lo}, {hi}]")));
        }
        if points_per_panel == 0 || panels == 0 {
            return Err(Error::config("quadrature needs at least one point and panel"));
        }
        let (gn, gw) = gauss_legendre(points_per_panel);
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(points_per_panel * panels);
        let mut weights = Vec::with_capacity(points_per_panel * panels);
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let mid = a + 0.5 * width;
            let half = 0.5 * width;
            for (x, w) in gn.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        let rule = Self { nodes, weights, order: (2 * points_per_panel - 1) as u32 };
        rule.verify(lo, hi)?;
        Ok(rule)
    }

    /// Construction-time checks: weights sum to the interval length and
    /// monomials up to `order` integrate exactly.
    fn verify(&self, lo: f64, hi: f64) -> Result<()> {
        let len: f64 = self.weights.iter().sum();
        if (len - (hi - lo)).abs() > 1e-9 * (hi - lo).max(1.0) {
            return Err(Error::numerical(format!(
                "quadrature weights sum to {len}, expected {}",
                hi - lo
            )));
        }
        for k in 0..=self.order.min(12) {
            let approx: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| w * x.powi(k as i32))
                .sum();
            let exact = (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / (k as f64 + 1.0);
            let scale = hi.abs().max(lo.abs()).max(1.0).powi(k as i32 + 1);
            if (approx - exact).abs() > 1e-9 * scale {
                return Err(Error::numerical(format!(
                    "quadrature not exact on degree {k}: {approx} vs {exact}"
                )));
            }
        }
        Ok(())
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor-product quadrature over a multi-dimensional box.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Flattened points, one `dim`-vector per node.
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub dim: usize,
    pub order: u32,
}

impl QuadratureRule {
    /// Tensor product of per-axis composite rules.
    pub fn tensor(lo: &[f64], hi: &[f64], points_per_panel: usize, panels: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("box bounds must have matching nonzero dimension"));
        }
        let axes: Vec<Quadrature1d> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| Quadrature1d::composite(a, b, points_per_panel, panels))
            .collect::<Result<_>>()?;
        let dim = axes.len();
        let total: usize = axes.iter().map(Quadrature1d::len).product();
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        loop {
            let mut pt = Vec::with_capacity(dim);
            let mut w = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                pt.push(axes[d].nodes[i]);
                w *= axes[d].weights[i];
            }
            nodes.push(pt);
            weights.push(w);
            // Odometer increment.
            let mut d = dim;
            loop {
                if d == 0 {
                    return Ok(Self { nodes, weights, dim, order: axes[0].order });
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    /// Sum of weights = box volume.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn gauss_legendre_5_reference_nodes() {
        let (n, w) = gauss_legendre(5);
        // Classical values.
        assert_abs_diff_eq!(n[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n[4], 0.906_179_845_938_664, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 0.568_888_888_888_889, epsilon = 1e-12);
    }

    #[test]
    fn composite_integrates_gaussian_to_machine_precision() {
        // ∫ φ(y) dy over [-10, 10] = 1 - 2 sf(10).
        let q = Quadrature1d::composite(-10.0, 10.0, 24, 20).unwrap();
        let got = q.integrate(crate::numeric::normal::pdf);
        assert_relative_eq!(got, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn composite_handles_boundary_layer() {
        // Density of a deep one-sided truncation: width ~ 1/15 near -10.
        let d = crate::numeric::truncnorm::TruncatedNormal::new(-25.0, 1.0, -10.0, 10.0).unwrap();
        let q = Quadrature1d::composite(-10.0, 10.0, 24, 20).unwrap();
        let got = q.integrate(|y| d.pdf(y));
        assert_relative_eq!(got, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn tensor_volume_and_polynomials() {
        let q = QuadratureRule::tensor(&[-10.0, -10.0], &[10.0, 10.0], 8, 1).unwrap();
        assert_relative_eq!(q.volume(), 400.0, max_relative = 1e-12);
        // ∫ x² a² over the box = (2000/3)².
        let got = q.integrate(|p| p[0] * p[0] * p[1] * p[1]);
        let exact = (2000.0_f64 / 3.0) * (2000.0 / 3.0);
        assert_relative_eq!(got, exact, max_relative = 1e-12);
        // Odd monomial vanishes.
        assert_abs_diff_eq!(q.integrate(|p| p[0]), 0.0, epsilon = 1e-9);
    }
}
