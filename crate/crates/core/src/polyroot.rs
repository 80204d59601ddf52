//! Closed-form real roots of cubics and exact minimizers of the univariate
//! polynomials that arise in every coordinate step.

use arrayvec::ArrayVec;
use serde::Serialize;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolyError {
    #[error("polynomial has no variable terms")]
    Degenerate,
    #[error("polynomial is not bounded below (a4 = {a4}, a3 = {a3}, a2 = {a2}, a1 = {a1})")]
    NonCoercive { a4: f64, a3: f64, a2: f64, a1: f64 },
    #[error("empty box [{lo}, {hi}]")]
    EmptyBox { lo: f64, hi: f64 },
}

/// `a4·x⁴ + a3·x³ + a2·x² + a1·x + a0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct QuarticCoeffs<T> {
    pub a4: T,
    pub a3: T,
    pub a2: T,
    pub a1: T,
    pub a0: T,
}

impl<T: Scalar> QuarticCoeffs<T> {
    pub fn new(a4: T, a3: T, a2: T, a1: T, a0: T) -> Self {
        QuarticCoeffs { a4, a3, a2, a1, a0 }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        (((self.a4 * x + self.a3) * x + self.a2) * x + self.a1) * x + self.a0
    }

    #[inline]
    pub fn derivative(&self, x: T) -> T {
        let four = T::lit(4.0);
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        ((four * self.a4 * x + three * self.a3) * x + two * self.a2) * x + self.a1
    }

    fn scale(&self) -> T {
        self.a4.abs() + self.a3.abs() + self.a2.abs() + self.a1.abs()
    }
}

pub type Roots<T> = ArrayVec<T, 3>;

/// All real roots of `c3·x³ + c2·x² + c1·x + c0`, ascending, with repeated
/// roots collapsed. A leading coefficient that is negligible against the
/// others demotes the degree.
pub fn cubic_real_roots<T: Scalar>(c3: T, c2: T, c1: T, c0: T) -> Result<Roots<T>, PolyError> {
    let scale = c3.abs() + c2.abs() + c1.abs() + c0.abs();
    let tiny = T::lit(1e-12) * scale;
    let mut roots = Roots::new();
    if c3.abs() <= tiny {
        if c2.abs() <= tiny {
            if c1.abs() <= tiny || c1 == T::zero() {
                return Err(PolyError::Degenerate);
            }
            roots.push(-c0 / c1);
        } else {
            quadratic_roots(c2, c1, c0, &mut roots);
        }
    } else {
        depressed_cubic_roots(c2 / c3, c1 / c3, c0 / c3, &mut roots);
    }

    for x in roots.iter_mut() {
        *x = newton_polish(c3, c2, c1, c0, *x);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = Roots::new();
    for x in roots {
        match out.last() {
            Some(&prev) if (x - prev).abs() <= T::lit(1e-7) * T::one().max(x.abs()) => {}
            _ => out.push(x),
        }
    }
    Ok(out)
}

fn quadratic_roots<T: Scalar>(a: T, b: T, c: T, out: &mut Roots<T>) {
    let two = T::lit(2.0);
    let disc = b * b - T::lit(4.0) * a * c;
    if disc < T::zero() {
        // A negative discriminant within rounding of zero is a double root.
        if disc.abs() <= T::lit(1e-14) * (b * b).max((a * c).abs()) {
            out.push(-b / (two * a));
        }
        return;
    }
    let sq = disc.sqrt();
    // Avoid cancellation between -b and ±sqrt(disc).
    let q = -(b + sq.copysign(b)) / two;
    if q == T::zero() {
        out.push(T::zero());
        return;
    }
    out.push(q / a);
    out.push(c / q);
}

/// Roots of `x³ + a·x² + b·x + c` via the depressed form `y³ + p·y + q`.
fn depressed_cubic_roots<T: Scalar>(a: T, b: T, c: T, out: &mut Roots<T>) {
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    let shift = a / three;
    let p = b - a * a / three;
    let q = two * a * a * a / T::lit(27.0) - a * b / three + c;
    let half_q = q / two;
    let third_p = p / three;
    let disc = half_q * half_q + third_p * third_p * third_p;
    let mag = half_q * half_q + third_p.abs() * third_p.abs() * third_p.abs();

    if p < T::zero() && disc <= T::lit(1e-14) * mag {
        // Three real roots (some possibly repeated): trigonometric form.
        let m = two * (-third_p).sqrt();
        let arg = (three * q / (p * m)).max(-T::one()).min(T::one());
        let theta = arg.acos() / three;
        let step = T::lit(2.0 * std::f64::consts::PI / 3.0);
        for k in 0..3 {
            out.push(m * (theta - step * T::lit(k as f64)).cos() - shift);
        }
    } else if p == T::zero() && q == T::zero() {
        out.push(-shift);
    } else {
        // One real root: Cardano with the cube root taken on the side that avoids cancellation.
        let s = disc.max(T::zero()).sqrt();
        let u = -(half_q.abs() + s).cbrt().copysign(half_q);
        let y = if u == T::zero() { T::zero() } else { u - third_p / u };
        out.push(y - shift);
    }
}

fn newton_polish<T: Scalar>(c3: T, c2: T, c1: T, c0: T, x: T) -> T {
    let f = ((c3 * x + c2) * x + c1) * x + c0;
    let df = (T::lit(3.0) * c3 * x + T::lit(2.0) * c2) * x + c1;
    if df == T::zero() || !df.is_finite() {
        return x;
    }
    let y = x - f / df;
    let fy = ((c3 * y + c2) * y + c1) * y + c0;
    if y.is_finite() && fy.abs() <= f.abs() {
        y
    } else {
        x
    }
}

/// Global minimizer of a coercive quartic. Ties between stationary points
/// (within 1e-12 relative) resolve to the one nearest `current`, and `current`
/// itself is kept when no candidate improves on it.
pub fn minimize_quartic<T: Scalar>(q: &QuarticCoeffs<T>, current: T) -> Result<(T, T), PolyError> {
    let scale = q.scale();
    let tiny = T::lit(1e-12) * scale;
    let non_coercive = || PolyError::NonCoercive {
        a4: q.a4.to_f64_lossy(),
        a3: q.a3.to_f64_lossy(),
        a2: q.a2.to_f64_lossy(),
        a1: q.a1.to_f64_lossy(),
    };
    if q.a4 < -tiny {
        return Err(non_coercive());
    }

    let mut candidates = Roots::new();
    if q.a4 > tiny {
        let roots = cubic_real_roots(T::lit(4.0) * q.a4, T::lit(3.0) * q.a3, T::lit(2.0) * q.a2, q.a1)?;
        candidates = roots;
    } else if q.a3.abs() > tiny {
        return Err(non_coercive());
    } else if q.a2 > tiny {
        candidates.push(-q.a1 / (T::lit(2.0) * q.a2));
    } else if q.a2 < -tiny || q.a1.abs() > tiny {
        return Err(non_coercive());
    }

    let mut best = (current, q.eval(current));
    for &x in &candidates {
        let v = q.eval(x);
        let tol = T::lit(1e-12) * T::one().max(v.abs()).max(best.1.abs());
        if v < best.1 - tol || (v <= best.1 + tol && (x - current).abs() < (best.0 - current).abs()) {
            best = (x, v);
        }
    }
    Ok(best)
}

/// Minimizer of `a2·x² + a1·x` on `[lo, hi]`.
pub fn minimize_quadratic_box<T: Scalar>(a2: T, a1: T, lo: T, hi: T) -> Result<T, PolyError> {
    if lo > hi {
        return Err(PolyError::EmptyBox { lo: lo.to_f64_lossy(), hi: hi.to_f64_lossy() });
    }
    if a2 > T::zero() {
        Ok((-a1 / (T::lit(2.0) * a2)).max(lo).min(hi))
    } else if a1 < T::zero() {
        Ok(hi)
    } else {
        Ok(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn cubic_examples() {
        assert_eq!(cubic_real_roots(1.0, 0.0, 0.0, 0.0).unwrap().as_slice(), &[0.0]);
        let r = cubic_real_roots(4.0, 0.0, -4.0, 0.0).unwrap();
        assert_eq!(r.len(), 3);
        for (x, e) in r.iter().zip([-1.0, 0.0, 1.0]) {
            assert!(close(*x, e, 1e-12), "{r:?}");
        }
        let r = cubic_real_roots(1.0, -6.0, 11.0, -6.0).unwrap();
        for (x, e) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!(close(*x, e, 1e-12), "{r:?}");
        }
    }

    #[test]
    fn cubic_degenerate_cases() {
        assert_eq!(cubic_real_roots(0.0, 0.0, 0.0, 0.0), Err(PolyError::Degenerate));
        assert_eq!(cubic_real_roots(0.0, 0.0, 2.0, -1.0).unwrap().as_slice(), &[0.5]);
        let r = cubic_real_roots(0.0, 1.0, 0.0, -4.0).unwrap();
        assert_eq!(r.as_slice(), &[-2.0, 2.0]);
        // (x-1)²(x+2): double root collapsed
        let r = cubic_real_roots(1.0, 0.0, -3.0, 2.0).unwrap();
        assert_eq!(r.len(), 2, "{r:?}");
        assert!(close(r[0], -2.0, 1e-12) && close(r[1], 1.0, 1e-6));
        // triple root
        let r = cubic_real_roots(1.0, -3.0, 3.0, -1.0).unwrap();
        assert!(r.iter().all(|x| close(*x, 1.0, 1e-4)), "{r:?}");
        // near-zero leading coefficient demotes to a quadratic
        let r = cubic_real_roots(1e-20, 1.0, 0.0, -1.0).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn cubic_in_f32() {
        let r = cubic_real_roots(1.0f32, -6.0, 11.0, -6.0).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[2] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn quartic_examples() {
        let (x, v) = minimize_quartic(&QuarticCoeffs::new(1.0, 0.0, -2.0, 0.0, 0.0), 0.5).unwrap();
        assert!(close(x, 1.0, 1e-12) && close(v, -1.0, 1e-12));
        let (x, v) = minimize_quartic(&QuarticCoeffs::new(1.0, 0.0, -2.0, 0.0, 0.0), -0.2).unwrap();
        assert!(close(x, -1.0, 1e-12) && close(v, -1.0, 1e-12));
        let (x, v) = minimize_quartic(&QuarticCoeffs::<f64>::new(1.0, 0.0, 0.0, 0.0, 0.0), 3.0).unwrap();
        assert!(x.abs() < 1e-12 && v.abs() < 1e-40);
        // x⁴ + x: frozen from a 1e-6 grid search on [-10, 10] followed by Newton polish
        let (x, v) = minimize_quartic(&QuarticCoeffs::new(1.0, 0.0, 0.0, 1.0, 0.0), 0.0).unwrap();
        assert!(close(x, -0.629_960_524_947_436_6, 1e-12), "{x}");
        assert!(close(v, -0.472_470_393_710_577_4, 1e-12), "{v}");
    }

    #[test]
    fn x4_plus_x_grid_oracle() {
        let p = |x: f64| x.powi(4) + x;
        let mut best = (0.0, f64::INFINITY);
        let mut i = -10_000_000i64;
        while i <= 10_000_000 {
            let x = i as f64 * 1e-6;
            if p(x) < best.1 {
                best = (x, p(x));
            }
            i += 1;
        }
        let mut x = best.0;
        for _ in 0..3 {
            x -= (4.0 * x.powi(3) + 1.0) / (12.0 * x * x);
        }
        assert!(close(x, -0.629_960_524_947_436_6, 1e-14));
        assert!(close(p(x), -0.472_470_393_710_577_4, 1e-14));
    }

    #[test]
    fn quartic_errors_and_degenerate_forms() {
        assert!(matches!(
            minimize_quartic(&QuarticCoeffs::new(-1.0, 0.0, 0.0, 0.0, 0.0), 0.0),
            Err(PolyError::NonCoercive { .. })
        ));
        assert!(minimize_quartic(&QuarticCoeffs::new(0.0, 0.0, -1.0, 0.0, 0.0), 0.0).is_err());
        assert!(minimize_quartic(&QuarticCoeffs::new(0.0, 0.0, 0.0, 1.0, 0.0), 0.0).is_err());
        assert!(minimize_quartic(&QuarticCoeffs::new(0.0, 1.0, 1.0, 0.0, 0.0), 0.0).is_err());
        let (x, _) = minimize_quartic(&QuarticCoeffs::new(0.0, 0.0, 2.0, -4.0, 0.0), 0.0).unwrap();
        assert_eq!(x, 1.0);
        let (x, v) = minimize_quartic(&QuarticCoeffs::new(0.0, 0.0, 0.0, 0.0, 5.0), 0.7).unwrap();
        assert_eq!((x, v), (0.7, 5.0));
    }

    #[test]
    fn boxed_quadratic_examples() {
        // (x-3)² = x² - 6x + 9
        assert_eq!(minimize_quadratic_box(1.0, -6.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(minimize_quadratic_box(1.0, 0.0, -1.0, 1.0).unwrap(), 0.0);
        // -λz + (μ/2)(z - s)² with λ=0.2, μ=0.1, s=1: a2 = 0.05, a1 = -0.2 - 0.1
        let z = minimize_quadratic_box(0.05, -0.3, 0.0, 4.0).unwrap();
        assert!(close(z, 3.0, 1e-14));
        let grid = (0..=400_000)
            .map(|i| i as f64 * 1e-5)
            .min_by(|a, b| {
                let f = |z: f64| -0.2 * z + 0.05 * (z - 1.0) * (z - 1.0);
                f(*a).partial_cmp(&f(*b)).unwrap()
            })
            .unwrap();
        assert!((grid - 3.0).abs() < 1e-5);
        assert_eq!(minimize_quadratic_box(0.0, 1.0, -1.0, 2.0).unwrap(), -1.0);
        assert_eq!(minimize_quadratic_box(0.0, -1.0, -1.0, 2.0).unwrap(), 2.0);
        assert_eq!(minimize_quadratic_box(0.0, 0.0, -1.0, 2.0).unwrap(), -1.0);
        assert!(matches!(minimize_quadratic_box(1.0, 0.0, 1.0, 0.0), Err(PolyError::EmptyBox { .. })));
    }

    /// Number of sign changes of p on a fine grid: an independent root count.
    fn sign_change_count(c: [f64; 4], lo: f64, hi: f64) -> usize {
        let p = |x: f64| ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
        let steps = 200_000;
        let mut count = 0;
        let mut prev = p(lo);
        for i in 1..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let v = p(x);
            if (prev < 0.0 && v > 0.0) || (prev > 0.0 && v < 0.0) {
                count += 1;
            }
            if v != 0.0 {
                prev = v;
            }
        }
        count
    }

    proptest! {
        #[test]
        fn roots_match_bisection_count(r1 in -50.0f64..50.0, gap1 in 0.01f64..20.0, gap2 in 0.01f64..20.0, lead in 0.1f64..10.0) {
            // Three well-separated real roots.
            let (a, b, c) = (r1, r1 + gap1, r1 + gap1 + gap2);
            let coeffs = [lead, -lead * (a + b + c), lead * (a * b + b * c + a * c), -lead * a * b * c];
            let roots = cubic_real_roots(coeffs[0], coeffs[1], coeffs[2], coeffs[3]).unwrap();
            prop_assert_eq!(roots.len(), sign_change_count(coeffs, -1e3, 1e3));
            let scale = 1.0f64.max(coeffs.iter().map(|v| v.abs()).sum());
            for x in roots {
                let v = ((coeffs[0] * x + coeffs[1]) * x + coeffs[2]) * x + coeffs[3];
                prop_assert!(v.abs() <= 1e-9 * scale, "residual {} at {}", v, x);
            }
        }

        #[test]
        fn random_cubic_roots_are_roots(c in prop::array::uniform4(-10.0f64..10.0)) {
            prop_assume!(c[0].abs() > 1e-3);
            let roots = cubic_real_roots(c[0], c[1], c[2], c[3]).unwrap();
            prop_assert!(!roots.is_empty());
            let scale = 1.0f64.max(c.iter().map(|v| v.abs()).sum());
            for x in &roots {
                let v = ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
                prop_assert!(v.abs() <= 1e-9 * scale);
                prop_assert!(!x.is_nan());
            }
            prop_assert!(roots.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn boxed_minimizer_beats_endpoints(a2 in 0.0f64..5.0, a1 in -5.0f64..5.0, lo in -3.0f64..0.0, w in 0.0f64..3.0) {
            let hi = lo + w;
            let x = minimize_quadratic_box(a2, a1, lo, hi).unwrap();
            let f = |x: f64| a2 * x * x + a1 * x;
            prop_assert!(x >= lo && x <= hi);
            for k in 0..=20 {
                let y = lo + w * k as f64 / 20.0;
                prop_assert!(f(x) <= f(y) + 1e-12);
            }
        }
    }

    #[test]
    fn near_zero_discriminant_is_finite() {
        // (x - 1)²(x - 1 - eps) for tiny eps: discriminant around 1e-30
        for k in 0..20 {
            let eps = 10f64.powi(-k);
            let (a, b, c) = (1.0, 1.0, 1.0 + eps);
            let coeffs = [1.0, -(a + b + c), a * b + b * c + a * c, -a * b * c];
            let r = cubic_real_roots(coeffs[0], coeffs[1], coeffs[2], coeffs[3]).unwrap();
            assert!(r.iter().all(|x| x.is_finite()), "{r:?}");
            assert!(r.iter().all(|x| (x - 1.0).abs() < 1e-3 + eps), "{eps}: {r:?}");
        }
    }
}
