use super::system::ItoCoefficients;
use crate::error::{Error, Result};

/// Natural cubic spline, extended linearly beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidArgument("spline needs at least two matching knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i => (i - 1).min(self.x.len() - 2),
        }
    }

    /// Value and first derivative.
    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let n = self.x.len();
        let end_slope = |i: usize| {
            let s = self.segment(self.x[i]);
            self.inside(s, self.x[i]).1
        };
        if t < self.x[0] {
            let s = end_slope(0);
            return (self.y[0] + s * (t - self.x[0]), s);
        }
        if t > self.x[n - 1] {
            let s = end_slope(n - 1);
            return (self.y[n - 1] + s * (t - self.x[n - 1]), s);
        }
        self.inside(self.segment(t), t)
    }

    fn inside(&self, i: usize, t: f64) -> (f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let v = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let dv = (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0
            + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0;
        (v, dv)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }
}

/// One-dimensional Itô SDE `dX = b(X) dt + √2 s(X) dW` with tabulated
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSde1d {
    pub drift: CubicSpline,
    pub sigma: CubicSpline,
}

impl TabulatedSde1d {
    pub fn new(x: Vec<f64>, drift: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        Ok(Self {
            drift: CubicSpline::natural(x.clone(), drift)?,
            sigma: CubicSpline::natural(x, sigma)?,
        })
    }
}

impl ItoCoefficients for TabulatedSde1d {
    type Workspace = ();

    fn dim(&self) -> usize {
        1
    }

    fn workspace(&self) {}

    fn coefficients(&self, x: &[f64], drift: &mut [f64], sigma: &mut [f64], _: &mut ()) -> Result<()> {
        drift[0] = self.drift.eval(x[0]);
        sigma[0] = self.sigma.eval(x[0]);
        Ok(())
    }
}
