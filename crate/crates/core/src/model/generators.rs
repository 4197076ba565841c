//! Built-in generators used by the benchmark catalog.

use super::{norm, row, Generator, Point};

/// `f ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroGenerator {
    pub n: usize,
    pub d: usize,
}

impl Generator for ZeroGenerator {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn component(&self, _i: usize, _x: &Point<'_>) -> f64 {
        0.0
    }
    fn name(&self) -> &str {
        "zero"
    }
}

/// `f^i = a y^i + b ȳ^i`.
#[derive(Clone, Debug)]
pub struct MeanFieldLinear {
    pub n: usize,
    pub d: usize,
    pub a: f64,
    pub b: f64,
}

impl Generator for MeanFieldLinear {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn component(&self, i: usize, x: &Point<'_>) -> f64 {
        self.a * x.y[i] + self.b * x.ybar[i]
    }
    fn name(&self) -> &str {
        "meanfield_linear"
    }
}

/// `f^i = (γ/2)|z^i|²`: each component is quadratic in its own row only.
#[derive(Clone, Debug)]
pub struct DiagonalQuadratic {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
}

impl Generator for DiagonalQuadratic {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn component(&self, i: usize, x: &Point<'_>) -> f64 {
        let zi = row(x.z, i, self.d);
        0.5 * self.gamma * zi.iter().map(|v| v * v).sum::<f64>()
    }
    fn name(&self) -> &str {
        "colehopf_diagonal"
    }
}

/// `f^i = (γ/2)|z^i|² + κ Σ_{j≠i} log(1 + |z^j|)`.
#[derive(Clone, Debug)]
pub struct LogGrowth {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub kappa: f64,
}

impl Generator for LogGrowth {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn component(&self, i: usize, x: &Point<'_>) -> f64 {
        let zi = row(x.z, i, self.d);
        let quad = 0.5 * self.gamma * zi.iter().map(|v| v * v).sum::<f64>();
        let cross: f64 = (0..self.n)
            .filter(|&j| j != i)
            .map(|j| norm(row(x.z, j, self.d)).ln_1p())
            .sum();
        quad + self.kappa * cross
    }
    fn name(&self) -> &str {
        "loggrowth"
    }
}
