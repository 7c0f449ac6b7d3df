//! Gauss-Legendre quadrature nodes and weights.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Nodes come out in ascending order and the weights sum to 2. Nodes are
/// found by Newton iteration on the Legendre recurrence, seeded with the
/// Chebyshev-like initial guess; a dozen digits are reached in a few steps.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for k in 0..half {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_value_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                // One polishing step after the tolerance is met.
                let (p2, d2) = legendre_value_and_derivative(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        // The guess enumerates roots from the largest down; store symmetric
        // pairs so the full rule needs only half the Newton solves.
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        // Odd rules have an exact node at the origin.
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_value_and_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for j in 2..=n {
        let jf = j as f64;
        let p_next = ((2.0 * jf - 1.0) * x * p - (jf - 1.0) * p_prev) / jf;
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_point_rule_is_midpoint() {
        let (x, w) = gauss_legendre(1);
        assert_eq!(x, vec![0.0]);
        assert_eq!(w, vec![2.0]);
    }

    #[test]
    fn two_point_rule_matches_closed_form() {
        let (x, w) = gauss_legendre(2);
        let r = 1.0 / 3.0f64.sqrt();
        assert_relative_eq!(x[0], -r, epsilon = 1e-15);
        assert_relative_eq!(x[1], r, epsilon = 1e-15);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn three_point_rule_matches_closed_form() {
        let (x, w) = gauss_legendre(3);
        let r = (3.0f64 / 5.0).sqrt();
        assert_relative_eq!(x[0], -r, epsilon = 1e-15);
        assert_eq!(x[1], 0.0);
        assert_relative_eq!(x[2], r, epsilon = 1e-15);
        assert_relative_eq!(w[0], 5.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 8.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(w[2], 5.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in 1..=64 {
            let (_, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert_relative_eq!(total, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        for n in [2, 5, 20, 41] {
            let (x, w) = gauss_legendre(n);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            for k in 0..n {
                assert_eq!(x[k], -x[n - 1 - k]);
                assert_eq!(w[k], w[n - 1 - k]);
            }
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        // integral of x^d over [-1,1] = 2/(d+1) for even d, 0 for odd d
        let n = 6;
        let (x, w) = gauss_legendre(n);
        for d in 0..(2 * n) {
            let approx_val: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * xi.powi(d as i32))
                .sum();
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            assert!((approx_val - exact).abs() < 1e-14, "degree {d}");
        }
    }

    #[test]
    fn exponential_integral_converges() {
        let (x, w) = gauss_legendre(20);
        let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.exp()).sum();
        let exact = 1.0f64.exp() - (-1.0f64).exp();
        assert_relative_eq!(got, exact, max_relative = 1e-15);
    }
}
