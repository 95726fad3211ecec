//! Heterogeneous diffusion coefficients and their per-element sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, StructuredTriMesh};

/// Parameters of the highly oscillating background with an isolating arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcCoefficientParams {
    pub eps: f64,
    pub radius: f64,
    pub center: Point,
    pub arc_value: f64,
}

impl ArcCoefficientParams {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            radius: 0.9,
            center: [1.0 - eps, eps],
            arc_value: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.radius > 0.0 && self.arc_value > 0.0) {
            return Err(Error::Config(format!(
                "arc coefficient needs eps, radius and arc value > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

impl Default for ArcCoefficientParams {
    fn default() -> Self {
        Self::with_eps(0.05)
    }
}

/// Oscillating background field `c_eps`, with values in `[0, 2]`.
pub fn eval_c_eps(x: Point, eps: f64) -> f64 {
    let [x1, x2] = x;
    let mut sum = 0.0;
    for j in 0..=4 {
        let weight = 2.0 / (j as f64 + 1.0);
        for i in 0..=j {
            let fi = i as f64;
            let arg = (fi * x2 - x1 / (1.0 + fi)).floor() + (fi * x1 / eps).floor() + (x2 / eps).floor();
            sum += weight * arg.cos();
        }
    }
    1.0 + 0.1 * sum
}

/// Contrast-enhancing transfer function applied to `c_eps`.
pub fn eval_h(t: f64) -> f64 {
    if 0.5 < t && t < 1.0 {
        t.powi(4)
    } else if 1.0 < t && t < 1.5 {
        t.powf(1.5)
    } else {
        t
    }
}

pub fn eval_a_eps(x: Point, params: &ArcCoefficientParams) -> f64 {
    let [x1, x2] = x;
    let dist = ((x1 - params.center[0]).powi(2) + (x2 - params.center[1]).powi(2)).sqrt();
    let in_band = (dist - params.radius).abs() < 0.5 * params.eps;
    if in_band && x2 > params.eps && x1 < 1.0 - params.eps {
        params.arc_value
    } else {
        eval_h(eval_c_eps(x, params.eps))
    }
}

/// Checkerboard with `cells` squares per side alternating `high` and `low`;
/// the square containing the origin gets `high`.
pub fn checkerboard(x: Point, cells: usize, high: f64, low: f64) -> f64 {
    let c = cells as f64;
    let i = ((x[0] * c).floor() as i64).clamp(0, cells as i64 - 1);
    let j = ((x[1] * c).floor() as i64).clamp(0, cells as i64 - 1);
    if (i + j) % 2 == 0 {
        high
    } else {
        low
    }
}

/// Coefficient that is constant on every element of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantCoefficient {
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl PiecewiseConstantCoefficient {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidMesh("coefficient without elements".into()));
        }
        let mut alpha = f64::INFINITY;
        let mut beta = 0.0f64;
        for (element, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveCoefficient { element, value });
            }
            alpha = alpha.min(value);
            beta = beta.max(value);
        }
        Ok(Self { values, alpha, beta })
    }

    pub fn constant(mesh: &StructuredTriMesh, value: f64) -> Result<Self> {
        Self::from_values(vec![value; mesh.num_triangles()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn contrast(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_values(self.values.iter().map(|v| v * factor).collect())
    }
}

/// One-point (centroid) sampling of `field` on every element of `mesh`.
pub fn discretize<F>(field: F, mesh: &StructuredTriMesh) -> Result<PiecewiseConstantCoefficient>
where
    F: Fn(Point) -> f64 + Sync,
{
    use rayon::prelude::*;
    let values = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| field(mesh.centroid(t)))
        .collect();
    PiecewiseConstantCoefficient::from_values(values)
}
