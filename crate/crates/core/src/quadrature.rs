//! Gauss rules on the unit interval and on the reference triangle.
//!
//! The triangle rules are collapsed (Duffy) tensor products of Gauss–Legendre
//! rules, which gives a rule of any requested polynomial exactness without
//! tabulated data. They are not the most economical rules available but the
//! integrands in this crate are evaluated on modest meshes.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1] with `n` points (exact to degree 2n-1).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a Gauss rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule on the interval [0, 1] exact for polynomials up to `degree`.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn with_degree(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (x, w) = gauss_legendre(n);
        LineRule {
            points: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
            weights: w.iter().map(|&t| 0.5 * t).collect(),
        }
    }

    /// Integrate `f` over [a, b].
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let len = b - a;
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(a + t * len))
            .sum::<f64>()
            * len
    }
}

/// Rule on the reference triangle (0,0), (1,0), (0,1).
///
/// Points are barycentric-free local coordinates `(s, t)`; weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn with_degree(degree: usize) -> Self {
        // The collapse adds one to the degree in the second direction.
        let n = (degree + 2).div_ceil(2);
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (xi, wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            for (eta, we) in x.iter().zip(&w) {
                let v = 0.5 * (eta + 1.0);
                points.push([u * (1.0 - v), v]);
                weights.push(0.25 * wi * we * (1.0 - v));
            }
        }
        TriangleRule {
            degree,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for k in 0..(2 * n) {
                let num: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((num - exact).abs() < 1e-13, "n={n} k={k}: {num} vs {exact}");
            }
        }
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn triangle_rule_exact_to_requested_degree() {
        for degree in 0..=12usize {
            let rule = TriangleRule::with_degree(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    // ∫ s^a t^b over the reference triangle = a! b! / (a+b+2)!
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!(
                        (num - exact).abs() < 1e-14,
                        "degree {degree}, s^{a} t^{b}: {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn line_rule_on_interval() {
        let rule = LineRule::with_degree(5);
        let v = rule.integrate(1.0, 3.0, |x| x.powi(5));
        assert!((v - (3f64.powi(6) - 1.0) / 6.0).abs() < 1e-12);
    }
}
