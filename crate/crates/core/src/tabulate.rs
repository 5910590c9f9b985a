//! Piecewise Chebyshev tables for expensive matrix-valued functions of time
//! with a `t^σ` singularity at the origin.
//!
//! On `[t_lo, min(1, t_max)]` the table stores `t^{−σ} F(t)` as a function
//! of `u = t^g`, extrapolated polynomially down to `u = 0`; beyond 1 it uses
//! octaves `[2^j, 2^{j+1}]` in `t`. Each piece is checked against direct
//! evaluations between the nodes and halved until the mismatch is below the
//! tolerance.

use std::f64::consts::PI;

use nalgebra::DMatrix;

const NODES: usize = 20;
const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone)]
struct Piece {
    /// Interval in the piece variable (`u` for graded pieces, `t` otherwise).
    a: f64,
    b: f64,
    graded: bool,
    nodes: Vec<f64>,
    values: Vec<DMatrix<f64>>,
}

/// First-kind Chebyshev points on `[a, b]` and their barycentric weights.
fn cheb(a: f64, b: f64) -> Vec<f64> {
    (0..NODES)
        .map(|j| {
            let x = ((2 * j + 1) as f64 * PI / (2 * NODES) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * x
        })
        .collect()
}

fn weight(j: usize) -> f64 {
    let s = ((2 * j + 1) as f64 * PI / (2 * NODES) as f64).sin();
    if j % 2 == 0 {
        s
    } else {
        -s
    }
}

impl Piece {
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let mut num = DMatrix::zeros(self.values[0].nrows(), self.values[0].ncols());
        let mut den = 0.0;
        for (j, (&xj, v)) in self.nodes.iter().zip(&self.values).enumerate() {
            let d = x - xj;
            if d == 0.0 {
                return v.clone();
            }
            let w = weight(j) / d;
            num += v * w;
            den += w;
        }
        num / den
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Table {
    sigma: f64,
    g: f64,
    graded_end: f64,
    pieces: Vec<Piece>,
    t_max: f64,
    /// Largest relative mismatch seen at the check points.
    pub(crate) max_error: f64,
}

impl Table {
    pub(crate) fn build<F, E>(f: F, sigma: f64, g: f64, t_lo: f64, t_max: f64, tol: f64) -> Result<Self, E>
    where
        F: Fn(f64) -> Result<DMatrix<f64>, E>,
    {
        let graded_end = t_max.min(1.0);
        let mut table = Table {
            sigma,
            g,
            graded_end,
            pieces: Vec::new(),
            t_max,
            max_error: 0.0,
        };
        let mut todo = vec![(t_lo.powf(g), graded_end.powf(g), true, 0usize)];
        let mut lo = 1.0;
        while lo < t_max {
            let hi = (2.0 * lo).min(t_max);
            todo.push((lo, hi, false, 0));
            lo = hi;
        }
        let direct = |x: f64, graded: bool| -> Result<DMatrix<f64>, E> {
            if graded {
                let t = x.powf(1.0 / g);
                Ok(f(t)? * t.powf(-sigma))
            } else {
                f(x)
            }
        };
        while let Some((a, b, graded, depth)) = todo.pop() {
            let nodes = cheb(a, b);
            let values = nodes
                .iter()
                .map(|&x| direct(x, graded))
                .collect::<Result<Vec<_>, E>>()?;
            let piece = Piece {
                a,
                b,
                graded,
                nodes,
                values,
            };
            let scale = piece
                .values
                .iter()
                .map(|v| v.amax())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let mut err = 0.0f64;
            for frac in [0.013, 0.5 + 1.0 / (4.0 * NODES as f64), 0.991] {
                let x = a + frac * (b - a);
                let exact = direct(x, graded)?;
                err = err.max((piece.eval(x) - exact).amax() / scale);
            }
            if err > tol && depth < MAX_DEPTH {
                let mid = 0.5 * (a + b);
                todo.push((a, mid, graded, depth + 1));
                todo.push((mid, b, graded, depth + 1));
            } else {
                table.max_error = table.max_error.max(err);
                table.pieces.push(piece);
            }
        }
        table
            .pieces
            .sort_by(|x, y| (!x.graded).cmp(&!y.graded).then(x.a.total_cmp(&y.a)));
        Ok(table)
    }

    pub(crate) fn t_max(&self) -> f64 {
        self.t_max
    }

    /// `F(t)` for `0 < t ≤ t_max` (and `t = 0` when `σ = 0`).
    pub(crate) fn eval(&self, t: f64) -> DMatrix<f64> {
        if t <= self.graded_end {
            let u = t.powf(self.g);
            let p = self.find(u, true);
            let v = p.eval(u);
            return if self.sigma == 0.0 { v } else { v * t.powf(self.sigma) };
        }
        self.find(t, false).eval(t)
    }

    fn find(&self, x: f64, graded: bool) -> &Piece {
        let start = self.pieces.partition_point(|p| p.graded && !graded);
        let group: &[Piece] = if graded {
            &self.pieces[..self.pieces.partition_point(|p| p.graded)]
        } else {
            &self.pieces[start..]
        };
        let i = group.partition_point(|p| p.b < x).min(group.len() - 1);
        &group[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn reproduces_a_singular_function() {
        // t^{-1/2} e^{-t}, smooth in u = t^{1/2} once t^{1/2} is factored out.
        let f = |t: f64| Ok::<_, ()>(scalar(t.powf(-0.5) * (-t).exp()));
        let table = Table::build(f, -0.5, 0.5, 1e-9, 20.0, 1e-12).unwrap();
        for i in 1..2000 {
            let t = 20.0 * (i as f64 / 2000.0).powi(3);
            let exact = t.powf(-0.5) * (-t).exp();
            assert!(
                (table.eval(t)[0] - exact).abs() <= 1e-11 * exact.abs().max(1.0),
                "t={t}"
            );
        }
    }

    #[test]
    fn short_range_stays_graded() {
        let f = |t: f64| Ok::<_, ()>(scalar(t.cos()));
        let table = Table::build(f, 0.0, 1.0, 0.0, 0.5, 1e-13).unwrap();
        assert!((table.eval(0.0)[0] - 1.0).abs() < 1e-13);
        assert!((table.eval(0.5)[0] - 0.5f64.cos()).abs() < 1e-13);
        assert!(table.max_error < 1e-13);
    }
}
