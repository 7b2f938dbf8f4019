//! Quadrature rules on the reference triangle and the reference edge.
//!
//! The reference triangle has vertices (0,0), (1,0), (0,1); the reference
//! edge is the interval [0,1]. Triangle rules are built from a tensor
//! Gauss-Legendre rule under the Duffy map `x = s, y = t(1-s)`, which turns
//! a polynomial of total degree `d` into a bivariate polynomial of degree
//! at most `d+1` per direction, so an n-point-per-direction rule with
//! `2n-1 >= d+1` is exact.

/// Gauss-Legendre nodes and weights on [0,1], exact for degree `2n-1`.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    /// Rule exact for polynomials up to `degree` on [0,1].
    pub fn with_degree(degree: usize) -> Self {
        let n = (degree + 1).div_ceil(2);
        let (points, weights) = gauss_legendre_unit(n);
        EdgeRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Quadrature on the reference triangle; weights sum to the area 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Rule exact for total degree `degree` polynomials.
    pub fn with_degree(degree: usize) -> Self {
        // Duffy transform raises the per-direction degree by one in s.
        let n = (degree + 2).div_ceil(2);
        let (gp, gw) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (i, &s) in gp.iter().enumerate() {
            for (j, &t) in gp.iter().enumerate() {
                points.push([s, t * (1.0 - s)]);
                weights.push(gw[i] * gw[j] * (1.0 - s));
            }
        }
        TriangleRule {
            points,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre rule with `n` points, mapped from [-1,1] to [0,1].
///
/// Nodes are found by Newton iteration on P_n with the asymptotic
/// Chebyshev-like initial guess; this is accurate to machine precision
/// for the modest n used here.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Initial guess for the k-th root of P_n on [-1,1].
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map from [-1,1] to [0,1]; reverse so points are ascending.
        nodes[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 0.5 * w;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial P_n at x via the
/// three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
pub fn reference_monomial_integral(a: u32, b: u32) -> f64 {
    // a!b!/(a+b+2)! = [prod_{j=1..b} j/(a+j)] / ((a+b+1)(a+b+2)),
    // evaluated as a product of ratios to stay in floating-point range.
    let mut value = 1.0;
    for j in 1..=b {
        value *= j as f64 / (a as f64 + j as f64);
    }
    value / ((a as f64 + b as f64 + 1.0) * (a as f64 + b as f64 + 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product::<f64>().max(1.0)
    }

    #[test]
    fn monomial_integral_matches_factorial_formula() {
        for a in 0..8u32 {
            for b in 0..8u32 {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let got = reference_monomial_integral(a, b);
                assert!(
                    (got - exact).abs() <= 1e-15 * exact.max(1.0),
                    "a={a} b={b}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=8 {
            let (p, w) = gauss_legendre_unit(n);
            assert_eq!(p.len(), n);
            for d in 0..=(2 * n - 1) {
                let num: f64 = p.iter().zip(&w).map(|(&x, &wi)| x.powi(d as i32) * wi).sum();
                let exact = 1.0 / (d as f64 + 1.0);
                assert!((num - exact).abs() < 1e-14, "n={n} d={d}: {num} vs {exact}");
            }
        }
    }

    #[test]
    fn triangle_rule_exact_to_declared_degree() {
        for degree in [2usize, 4, 5, 7, 8] {
            let rule = TriangleRule::with_degree(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, &w)| p[0].powi(a as i32) * p[1].powi(b as i32) * w)
                        .sum();
                    let exact = reference_monomial_integral(a, b);
                    assert!(
                        (num - exact).abs() < 1e-13,
                        "degree {degree} monomial x^{a} y^{b}: {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_weights_sum_to_area() {
        let rule = TriangleRule::with_degree(4);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 0.5).abs() < 1e-14);
    }
}
