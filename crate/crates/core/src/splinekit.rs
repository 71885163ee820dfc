//! Exact arithmetic on univariate piecewise cubic polynomials.
//!
//! Every scaling function and wavelet in this crate is represented as a
//! [`PiecewisePoly`]: a compactly supported function that is a cubic
//! polynomial between consecutive dyadic breakpoints and zero outside.
//! Coefficients are stored in the local coordinate of each piece (relative
//! to its left breakpoint), so dyadic rescaling and integer translation are
//! exact operations: translation leaves coefficients untouched and scaling
//! multiplies them by exact powers of two. Inner products of such functions
//! are polynomials of degree at most six on each merged subinterval, so a
//! 4-point Gauss rule per subinterval integrates them exactly.

use num_traits::{Float, FromPrimitive};

/// Scalar type for the piecewise-polynomial layer.
pub trait Real: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + 'static {}
impl<T> Real for T where T: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + 'static {}

/// Breakpoints closer than this are merged when integrating products.
/// Breakpoints are dyadic, so exact comparison almost always applies; the
/// tolerance guards rescaled arithmetic.
const MERGE_TOL: f64 = 1e-14;

/// A univariate piecewise cubic polynomial with compact support.
///
/// `pieces[i]` holds coefficients `[c3, c2, c1, c0]` of
/// `c3 t^3 + c2 t^2 + c1 t + c0` with `t = x - breakpoints[i]` on
/// `[breakpoints[i], breakpoints[i+1]]`. The function is zero outside
/// `[breakpoints[0], breakpoints[n]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly<T: Real> {
    breakpoints: Vec<T>,
    pieces: Vec<[T; 4]>,
}

impl<T: Real> PiecewisePoly<T> {
    /// Builds from strictly increasing breakpoints and per-interval coefficients.
    ///
    /// Panics if the piece count does not match or breakpoints are not
    /// strictly increasing; these are programming errors, not data errors.
    pub fn new(breakpoints: Vec<T>, pieces: Vec<[T; 4]>) -> Self {
        assert!(
            breakpoints.len() == pieces.len() + 1,
            "pieces count must be breakpoints count - 1"
        );
        assert!(
            breakpoints.windows(2).all(|w| w[0] < w[1]),
            "breakpoints must be strictly increasing"
        );
        Self { breakpoints, pieces }
    }

    /// Builds from coefficients given in the global coordinate:
    /// `c3 x^3 + c2 x^2 + c1 x + c0` on each interval. Used when ingesting
    /// printed coefficient tables.
    pub fn from_global_pieces(breakpoints: Vec<T>, global: Vec<[T; 4]>) -> Self {
        let local = global
            .iter()
            .zip(&breakpoints)
            .map(|(c, &a)| shift_origin(c, a))
            .collect();
        Self::new(breakpoints, local)
    }

    /// The zero function on a degenerate support.
    pub fn zero() -> Self {
        Self {
            breakpoints: vec![T::zero(), T::one()],
            pieces: vec![[T::zero(); 4]],
        }
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[[T; 4]] {
        &self.pieces
    }

    /// Support interval `[t0, tn]`.
    pub fn support(&self) -> (T, T) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Evaluates at `x`. At an interior breakpoint the right piece is used;
    /// at the right support endpoint the last piece is used.
    pub fn evaluate(&self, x: T) -> T {
        let (a, b) = self.support();
        if x < a || x > b {
            return T::zero();
        }
        let idx = if x == b {
            self.pieces.len() - 1
        } else {
            // partition_point: first breakpoint > x, minus one.
            match self.breakpoints.binary_search_by(|t| {
                t.partial_cmp(&x).expect("non-finite breakpoint")
            }) {
                Ok(i) => i.min(self.pieces.len() - 1),
                Err(i) => i - 1,
            }
        };
        eval_cubic(&self.pieces[idx], x - self.breakpoints[idx])
    }

    /// Derivative; a piecewise quadratic embedded with `c3 = 0`.
    pub fn derivative(&self) -> Self {
        let two = T::from_f64(2.0).unwrap();
        let three = T::from_f64(3.0).unwrap();
        let pieces = self
            .pieces
            .iter()
            .map(|c| [T::zero(), three * c[0], two * c[1], c[2]])
            .collect();
        Self {
            breakpoints: self.breakpoints.clone(),
            pieces,
        }
    }

    /// Dyadic rescale `x -> 2^{j/2} p(2^j x - m)`, preserving the L2 norm.
    pub fn rescale(&self, j: u32, m: i64) -> Self {
        assert!(j <= 60, "rescale level out of range");
        let scale = T::from_f64((2.0f64).powi(j as i32)).unwrap();
        let shift = T::from_i64(m).unwrap();
        let amp = T::from_f64((2.0f64).powf(j as f64 / 2.0)).unwrap();
        self.affine(scale, shift, amp)
    }

    /// Returns `amp * p(scale * x - shift)` with `scale > 0`.
    ///
    /// In local coordinates the substitution is exact: a new piece starting
    /// at `b_i = (a_i + shift) / scale` sees the old local variable as
    /// `scale * t`, so coefficients only pick up powers of `scale`.
    pub fn affine(&self, scale: T, shift: T, amp: T) -> Self {
        assert!(scale > T::zero(), "affine scale must be positive");
        let breakpoints: Vec<T> = self
            .breakpoints
            .iter()
            .map(|&t| (t + shift) / scale)
            .collect();
        let s2 = scale * scale;
        let s3 = s2 * scale;
        let pieces = self
            .pieces
            .iter()
            .map(|c| [amp * c[0] * s3, amp * c[1] * s2, amp * c[2] * scale, amp * c[3]])
            .collect();
        Self { breakpoints, pieces }
    }

    /// Scales function values by `s`.
    pub fn scaled(&self, s: T) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|c| [s * c[0], s * c[1], s * c[2], s * c[3]])
            .collect();
        Self {
            breakpoints: self.breakpoints.clone(),
            pieces,
        }
    }

    /// Pointwise sum, merging breakpoint grids.
    pub fn add(&self, other: &Self) -> Self {
        let grid = merge_breakpoints(&self.breakpoints, &other.breakpoints);
        let mut pieces = Vec::with_capacity(grid.len() - 1);
        let half = T::from_f64(0.5).unwrap();
        for w in grid.windows(2) {
            let mid = (w[0] + w[1]) * half;
            let mut c = [T::zero(); 4];
            for p in [self, other] {
                if let Some(i) = p.piece_index_at(mid) {
                    // Re-center the piece on the merged cell's left endpoint.
                    let pc = shift_origin(&p.pieces[i], w[0] - p.breakpoints[i]);
                    for k in 0..4 {
                        c[k] = c[k] + pc[k];
                    }
                }
            }
            pieces.push(c);
        }
        Self {
            breakpoints: grid,
            pieces,
        }
        .trimmed()
    }

    /// Linear combination `sum coeffs[i] * funcs[i]`.
    pub fn linear_combination(coeffs: &[T], funcs: &[&Self]) -> Self {
        assert_eq!(coeffs.len(), funcs.len());
        let mut acc = Self::zero();
        for (&c, f) in coeffs.iter().zip(funcs) {
            if c != T::zero() {
                acc = acc.add(&f.scaled(c));
            }
        }
        acc
    }

    /// Restriction to `[a, b]`: pieces outside are dropped, crossing pieces clipped.
    pub fn restricted(&self, a: T, b: T) -> Self {
        let mut bp = Vec::new();
        let mut pieces = Vec::new();
        let tol = T::from_f64(MERGE_TOL).unwrap();
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            let lo = if w[0] > a { w[0] } else { a };
            let hi = if w[1] < b { w[1] } else { b };
            if hi - lo > tol {
                if bp.is_empty() {
                    bp.push(lo);
                }
                bp.push(hi);
                pieces.push(shift_origin(&self.pieces[i], lo - w[0]));
            }
        }
        if pieces.is_empty() {
            return Self::zero();
        }
        Self {
            breakpoints: bp,
            pieces,
        }
    }

    /// Drops zero pieces at the ends of the support.
    fn trimmed(&self) -> Self {
        let is_zero = |c: &[T; 4]| c.iter().all(|&v| v == T::zero());
        let mut lo = 0;
        let mut hi = self.pieces.len();
        while hi - lo > 1 && is_zero(&self.pieces[lo]) {
            lo += 1;
        }
        while hi - lo > 1 && is_zero(&self.pieces[hi - 1]) {
            hi -= 1;
        }
        Self {
            breakpoints: self.breakpoints[lo..=hi].to_vec(),
            pieces: self.pieces[lo..hi].to_vec(),
        }
    }

    fn piece_index_at(&self, x: T) -> Option<usize> {
        let (a, b) = self.support();
        if x < a || x > b {
            return None;
        }
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            if x >= w[0] && x <= w[1] {
                return Some(i);
            }
        }
        None
    }

    /// Exact integral of the product `p * q` over the union of supports.
    pub fn inner_product(&self, other: &Self) -> T {
        let rule = QuadratureRule::gauss_legendre(4);
        self.inner_product_with_rule(other, &rule)
    }

    pub fn inner_product_with_rule(&self, other: &Self, rule: &QuadratureRule<T>) -> T {
        let (a0, b0) = self.support();
        let (a1, b1) = other.support();
        let lo = if a0 > a1 { a0 } else { a1 };
        let hi = if b0 < b1 { b0 } else { b1 };
        if hi <= lo {
            return T::zero();
        }
        let grid = merge_breakpoints(&self.breakpoints, &other.breakpoints);
        let half = T::from_f64(0.5).unwrap();
        let mut acc = T::zero();
        for w in grid.windows(2) {
            if w[1] <= lo || w[0] >= hi {
                continue;
            }
            let mid = (w[0] + w[1]) * half;
            let hw = (w[1] - w[0]) * half;
            let (Some(pi), Some(qi)) = (self.piece_index_at(mid), other.piece_index_at(mid))
            else {
                continue;
            };
            let (p, pa) = (&self.pieces[pi], self.breakpoints[pi]);
            let (q, qa) = (&other.pieces[qi], other.breakpoints[qi]);
            let mut cell = T::zero();
            for (&node, &weight) in rule.nodes.iter().zip(&rule.weights) {
                let x = mid + hw * node;
                cell = cell + weight * eval_cubic(p, x - pa) * eval_cubic(q, x - qa);
            }
            acc = acc + cell * hw;
        }
        acc
    }

    /// `int x^m p(x) dx` over the support, exact for `m <= 3`.
    pub fn moment(&self, m: u32) -> T {
        let mut mono = [T::zero(); 4];
        assert!(m <= 3, "moment degree out of range for exact quadrature");
        mono[3 - m as usize] = T::one();
        let (a, b) = self.support();
        let monomial = Self::from_global_pieces(vec![a, b], vec![mono]);
        self.inner_product(&monomial)
    }

    /// L2 norm.
    pub fn norm(&self) -> T {
        self.inner_product(self).sqrt()
    }

    /// Unit L2 normalization.
    pub fn normalized(&self) -> Self {
        self.scaled(T::one() / self.norm())
    }

    /// Flips the sign so the first nonzero coefficient (pieces in order,
    /// coefficients c3..c0) is positive. Fixes the sign ambiguity of
    /// constructed generators so cached bases are reproducible.
    pub fn sign_fixed(&self) -> Self {
        let tol = T::from_f64(1e-9).unwrap();
        for piece in &self.pieces {
            for &c in piece {
                if c.abs() > tol {
                    return if c < T::zero() { self.scaled(-T::one()) } else { self.clone() };
                }
            }
        }
        self.clone()
    }
}

fn eval_cubic<T: Real>(c: &[T; 4], x: T) -> T {
    ((c[0] * x + c[1]) * x + c[2]) * x + c[3]
}

/// Re-expresses a cubic `[c3, c2, c1, c0]` about an origin moved right by
/// `delta`: the result `d` satisfies `d(t - delta) = c(t)`.
fn shift_origin<T: Real>(c: &[T; 4], delta: T) -> [T; 4] {
    if delta == T::zero() {
        return *c;
    }
    let two = T::from_f64(2.0).unwrap();
    let three = T::from_f64(3.0).unwrap();
    let d0 = ((c[0] * delta + c[1]) * delta + c[2]) * delta + c[3];
    let d1 = (three * c[0] * delta + two * c[1]) * delta + c[2];
    let d2 = three * c[0] * delta + c[1];
    [c[0], d2, d1, d0]
}

fn merge_breakpoints<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let tol = T::from_f64(MERGE_TOL).unwrap();
    let mut all: Vec<T> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).expect("non-finite breakpoint"));
    let mut out = Vec::with_capacity(all.len());
    for v in all {
        if out.last().map_or(true, |&last: &T| v - last > tol) {
            out.push(v);
        }
    }
    out
}

/// Gauss-Legendre quadrature on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct QuadratureRule<T: Real> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    /// Gauss-Legendre rule with `n` nodes, exact for degree `2n - 1`.
    /// Nodes are Newton-refined roots of the Legendre polynomial.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1 && n <= 64);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            // Chebyshev-based initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_and_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_and_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes.push(T::from_f64(-x).unwrap());
            weights.push(T::from_f64(w).unwrap());
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]` with a single application of the rule.
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let half = T::from_f64(0.5).unwrap();
        let mid = (a + b) * half;
        let hw = (b - a) * half;
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + w * f(mid + hw * x);
        }
        acc * hw
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Hermite cubic spline generator `xi_1` on `[-1, 1]` (symmetric, value 1 at 0).
pub fn hermite_xi1<T: Real>() -> PiecewisePoly<T> {
    let f = |v: f64| T::from_f64(v).unwrap();
    // (x+1)^2 (1-2x) = -2x^3 - 3x^2 + 1 on [-1,0]
    // (1-x)^2 (1+2x) =  2x^3 - 3x^2 + 1 on [0,1]
    PiecewisePoly::from_global_pieces(
        vec![f(-1.0), f(0.0), f(1.0)],
        vec![
            [f(-2.0), f(-3.0), f(0.0), f(1.0)],
            [f(2.0), f(-3.0), f(0.0), f(1.0)],
        ],
    )
}

/// Hermite cubic spline generator `xi_2` on `[-1, 1]` (antisymmetric, slope 1 at 0).
pub fn hermite_xi2<T: Real>() -> PiecewisePoly<T> {
    let f = |v: f64| T::from_f64(v).unwrap();
    // (x+1)^2 x = x^3 + 2x^2 + x on [-1,0]
    // (1-x)^2 x = x^3 - 2x^2 + x on [0,1]
    PiecewisePoly::from_global_pieces(
        vec![f(-1.0), f(0.0), f(1.0)],
        vec![
            [f(1.0), f(2.0), f(1.0), f(0.0)],
            [f(1.0), f(-2.0), f(1.0), f(0.0)],
        ],
    )
}

/// Hermite frame function `xi_{j,2k+l-1} = 2^{j/2} xi_l(2^j x - k)`, `l` in {1, 2}.
pub fn hermite_frame_function<T: Real>(j: u32, m: i64) -> PiecewisePoly<T> {
    let k = m.div_euclid(2);
    let l = m.rem_euclid(2); // 0 -> xi_1 (m = 2k), 1 -> xi_2 (m = 2k+1)
    let gen = if l == 0 { hermite_xi1() } else { hermite_xi2() };
    gen.rescale(j, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xi1() -> PiecewisePoly<f64> {
        hermite_xi1()
    }

    fn xi2() -> PiecewisePoly<f64> {
        hermite_xi2()
    }

    #[test]
    fn evaluate_hermite_generators() {
        assert_abs_diff_eq!(xi1().evaluate(0.0), 1.0);
        assert_abs_diff_eq!(xi2().evaluate(0.0), 0.0);
        assert_abs_diff_eq!(xi1().evaluate(2.0), 0.0);
        assert_abs_diff_eq!(xi1().evaluate(-1.0), 0.0);
        assert_abs_diff_eq!(xi1().evaluate(1.0), 0.0);
    }

    #[test]
    fn derivative_drops_degree() {
        let constant = PiecewisePoly::new(vec![0.0, 1.0], vec![[0.0, 0.0, 0.0, 1.0]]);
        assert_abs_diff_eq!(constant.derivative().evaluate(0.5), 0.0);
        // d/dx (1-x)^2 x at 0+ is 1
        assert_abs_diff_eq!(xi2().derivative().evaluate(0.0), 1.0);
        let second = xi1().derivative().derivative();
        assert!(second.pieces().iter().all(|c| c[0] == 0.0 && c[1] == 0.0));
    }

    #[test]
    fn hermite_inner_products_match_symbolic_values() {
        // Exact values: <xi1,xi1> = 26/35, <xi2,xi2> = 2/105, <xi1,xi2> = 0.
        assert_abs_diff_eq!(xi1().inner_product(&xi1()), 26.0 / 35.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xi2().inner_product(&xi2()), 2.0 / 105.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xi1().inner_product(&xi2()), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rescale_identity_and_support() {
        let same = xi1().rescale(0, 0);
        for x in [-0.7, 0.0, 0.3, 0.99] {
            assert_abs_diff_eq!(same.evaluate(x), xi1().evaluate(x), epsilon = 1e-14);
        }
        let r = xi1().rescale(2, 1);
        let (a, b) = r.support();
        assert_abs_diff_eq!(a, 0.0);
        assert_abs_diff_eq!(b, 0.5);
        let far = xi1().rescale(3, 5);
        assert_abs_diff_eq!(far.inner_product(&far), 26.0 / 35.0, epsilon = 1e-13);
    }

    #[test]
    fn gauss_rule_exact_for_high_degree_monomial() {
        for n in 1..=8usize {
            let rule = QuadratureRule::<f64>::gauss_legendre(n);
            let total: f64 = rule.weights.iter().sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-14);
            let deg = 2 * n as i32 - 1;
            let got = rule.integrate(-1.0, 1.0, |x| x.powi(deg));
            assert_abs_diff_eq!(got, 0.0, epsilon = 1e-14);
            // Even degree 2n-2 must also be exact.
            let deg = 2 * n as u32 - 2;
            let exact = 2.0 / (deg as f64 + 1.0);
            let got = rule.integrate(-1.0, 1.0, |x| x.powi(deg as i32));
            assert_abs_diff_eq!(got, exact, epsilon = 1e-14);
        }
    }

    /// Random continuous piecewise cubic; each piece starts where the
    /// previous one ended, so the only jumps are at the support endpoints.
    fn random_poly(rng: &mut impl Rng) -> PiecewisePoly<f64> {
        let n = rng.gen_range(1..5usize);
        let start = rng.gen_range(-4i64..4) as f64 * 0.25;
        let bp: Vec<f64> = (0..=n).map(|i| start + i as f64 * 0.25).collect();
        let mut value = rng.gen_range(-2.0..2.0);
        let pieces = (0..n)
            .map(|_| {
                let c = [
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    value,
                ];
                let w = 0.25;
                value = ((c[0] * w + c[1]) * w + c[2]) * w + c[3];
                c
            })
            .collect();
        PiecewisePoly::new(bp, pieces)
    }

    #[test]
    fn inner_product_symmetric_and_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_poly(&mut rng);
            let q = random_poly(&mut rng);
            let r = random_poly(&mut rng);
            let a: f64 = rng.gen_range(-3.0..3.0);
            assert_abs_diff_eq!(p.inner_product(&q), q.inner_product(&p), epsilon = 1e-12);
            let lhs = p.scaled(a).add(&r).inner_product(&q);
            let rhs = a * p.inner_product(&q) + r.inner_product(&q);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11);
        }
    }

    #[test]
    fn integration_by_parts_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let p = random_poly(&mut rng);
            let q = random_poly(&mut rng);
            let lhs = p.derivative().inner_product(&q) + p.inner_product(&q.derivative());
            // Boundary term of the product over the intersection of supports.
            let (a0, b0) = p.support();
            let (a1, b1) = q.support();
            let lo = a0.max(a1);
            let hi = b0.min(b1);
            let boundary = if hi > lo {
                p.evaluate(hi) * q.evaluate(hi) - p.evaluate(lo) * q.evaluate(lo)
            } else {
                0.0
            };
            assert_abs_diff_eq!(lhs, boundary, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rescale_preserves_l2_norm(j in 0u32..=10, m in -64i64..64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng);
            let n0 = p.norm();
            let n1 = p.rescale(j, m).norm();
            prop_assert!((n0 - n1).abs() <= 1e-13 * n0.max(1.0));
        }

        #[test]
        fn restriction_never_grows_norm(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng);
            let r = p.restricted(0.0, 1.0);
            prop_assert!(r.norm() <= p.norm() + 1e-12);
        }
    }
}
