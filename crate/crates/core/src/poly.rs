//! Polynomial bases for the learnable edge functions.
//!
//! The main basis is the Hahn family `Q_r(x; a, b, n)`, evaluated with its
//! three-term recurrence
//!
//! ```text
//! A_r P_r(x) = (A_r + B_r - x) P_{r-1}(x) - B_r P_{r-2}(x)
//! A_r = (r+a+b)(r+a)(n-r+1) / ((2r+a+b-1)(2r+a+b))
//! B_r = (r-1)(r+b-1)(r+a+b+n) / ((2r+a+b-2)(2r+a+b-1))
//! P_0 = 1,  P_1 = 1 - (a+b+2) x / ((a+1) n)
//! ```
//!
//! Chebyshev, Lucas and (with the `bspline` feature) cubic B-spline bases
//! exist for ablations.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

thread_local! {
    static EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of basis evaluations performed on this thread.
pub fn eval_count() -> u64 {
    EVALS.with(|c| c.get())
}

pub fn reset_eval_count() {
    EVALS.with(|c| c.set(0));
}

fn bump() {
    EVALS.with(|c| c.set(c.get() + 1));
}

/// `(A_r, B_r)` of the Hahn recurrence, computed straight from the formulas.
///
/// `r = 1` uses the cancelled form `A_1 = (a+1) n / (a+b+2)`, and `B_1 = 0`
/// since its numerator carries the factor `r - 1`.
pub fn hahn_recurrence_coeffs(a: f64, b: f64, n: usize, r: usize) -> Result<(f64, f64)> {
    if r == 0 {
        return Err(Error::BasisParameter(
            "recurrence coefficients start at r = 1".into(),
        ));
    }
    let (rf, nf) = (r as f64, n as f64);
    let nonzero = |v: f64, what: &str| {
        if v == 0.0 {
            Err(Error::BasisParameter(format!(
                "r = {r}: denominator factor {what} is zero (a = {a}, b = {b}, n = {n})"
            )))
        } else {
            Ok(v)
        }
    };
    if r == 1 {
        let den = nonzero(a + b + 2.0, "(a+b+2)")?;
        return Ok(((a + 1.0) * nf / den, 0.0));
    }
    let d1 = nonzero(2.0 * rf + a + b - 1.0, "(2r+a+b-1)")?;
    let d2 = nonzero(2.0 * rf + a + b, "(2r+a+b)")?;
    let d0 = nonzero(2.0 * rf + a + b - 2.0, "(2r+a+b-2)")?;
    let big_a = (rf + a + b) * (rf + a) * (nf - rf + 1.0) / (d1 * d2);
    let big_b = (rf - 1.0) * (rf + b - 1.0) * (rf + a + b + nf) / (d0 * d1);
    Ok((big_a, big_b))
}

/// Hahn polynomials `P_0..P_d` with parameters `(a, b, n)` and cached
/// recurrence coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct HahnBasis {
    a: f64,
    b: f64,
    n: usize,
    degree: usize,
    coeff_a: Vec<f64>,
    coeff_b: Vec<f64>,
    p1_slope: f64,
}

impl HahnBasis {
    pub fn new(a: f64, b: f64, n: usize, degree: usize) -> Result<Self> {
        if !(a > -1.0 && a.is_finite()) || !(b > -1.0 && b.is_finite()) {
            return Err(Error::BasisParameter(format!(
                "Hahn parameters need a > -1 and b > -1, got a = {a}, b = {b}"
            )));
        }
        if n == 0 {
            return Err(Error::BasisParameter("Hahn parameter n must be positive".into()));
        }
        if degree > n {
            return Err(Error::BasisParameter(format!(
                "degree {degree} exceeds n = {n}"
            )));
        }
        let mut coeff_a = Vec::with_capacity(degree);
        let mut coeff_b = Vec::with_capacity(degree);
        for r in 1..=degree {
            let (ar, br) = hahn_recurrence_coeffs(a, b, n, r)?;
            if ar == 0.0 {
                return Err(Error::BasisParameter(format!("A_{r} vanishes")));
            }
            coeff_a.push(ar);
            coeff_b.push(br);
        }
        Ok(HahnBasis {
            a,
            b,
            n,
            degree,
            coeff_a,
            coeff_b,
            p1_slope: (a + b + 2.0) / ((a + 1.0) * n as f64),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Cached `(A_r, B_r)` for `r` in `1..=degree`.
    pub fn recurrence_coeffs(&self, r: usize) -> Result<(f64, f64)> {
        if r == 0 || r > self.degree {
            return Err(Error::BasisParameter(format!(
                "r = {r} outside 1..={}",
                self.degree
            )));
        }
        Ok((self.coeff_a[r - 1], self.coeff_b[r - 1]))
    }

    /// `[P_0(x), .., P_d(x)]`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.degree + 1];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        if self.degree == 0 {
            return;
        }
        out[1] = 1.0 - self.p1_slope * x;
        for r in 2..=self.degree {
            let (ar, br) = (self.coeff_a[r - 1], self.coeff_b[r - 1]);
            out[r] = ((ar + br - x) * out[r - 1] - br * out[r - 2]) / ar;
        }
    }

    /// Values and first derivatives in `x`.
    pub fn eval_all_with_deriv(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; self.degree + 1];
        let mut d = vec![0.0; self.degree + 1];
        self.eval_with_deriv_into(x, &mut v, &mut d);
        (v, d)
    }

    pub fn eval_with_deriv_into(&self, x: f64, v: &mut [f64], d: &mut [f64]) {
        v[0] = 1.0;
        d[0] = 0.0;
        if self.degree == 0 {
            return;
        }
        v[1] = 1.0 - self.p1_slope * x;
        d[1] = -self.p1_slope;
        for r in 2..=self.degree {
            let (ar, br) = (self.coeff_a[r - 1], self.coeff_b[r - 1]);
            v[r] = ((ar + br - x) * v[r - 1] - br * v[r - 2]) / ar;
            d[r] = ((ar + br - x) * d[r - 1] - v[r - 1] - br * d[r - 2]) / ar;
        }
    }
}

/// Closed-form Hahn value as a terminating hypergeometric sum:
///
/// `Q_r(x) = Σ_{k=0}^{r} (-r)_k (r+a+b+1)_k (-x)_k / ((a+1)_k (-n)_k k!)`.
///
/// Slow reference used to validate the recurrence; not for the hot path.
pub fn hypergeometric_oracle(basis: &HahnBasis, r: usize, x: f64) -> Result<f64> {
    let (a, b, n) = (basis.a, basis.b, basis.n);
    if r > n {
        return Err(Error::BasisParameter(format!("degree {r} exceeds n = {n}")));
    }
    let poch = |base: f64, k: usize| (0..k).map(|i| base + i as f64).product::<f64>();
    let mut total = 0.0;
    for k in 0..=r {
        let num = poch(-(r as f64), k) * poch(r as f64 + a + b + 1.0, k) * poch(-x, k);
        let den = poch(a + 1.0, k) * poch(-(n as f64), k) * poch(1.0, k);
        total += num / den;
    }
    Ok(total)
}

/// `[T_0(x), .., T_d(x)]`, Chebyshev polynomials of the first kind.
pub fn chebyshev_eval_all(degree: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; degree + 1];
    let mut d = vec![0.0; degree + 1];
    chebyshev_into(x, &mut v, &mut d);
    v
}

/// `[L_0(x), .., L_d(x)]`, Lucas polynomials.
pub fn lucas_eval_all(degree: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; degree + 1];
    let mut d = vec![0.0; degree + 1];
    lucas_into(x, &mut v, &mut d);
    v
}

fn chebyshev_into(x: f64, v: &mut [f64], d: &mut [f64]) {
    v[0] = 1.0;
    d[0] = 0.0;
    if v.len() > 1 {
        v[1] = x;
        d[1] = 1.0;
    }
    for r in 2..v.len() {
        v[r] = 2.0 * x * v[r - 1] - v[r - 2];
        d[r] = 2.0 * v[r - 1] + 2.0 * x * d[r - 1] - d[r - 2];
    }
}

fn lucas_into(x: f64, v: &mut [f64], d: &mut [f64]) {
    v[0] = 2.0;
    d[0] = 0.0;
    if v.len() > 1 {
        v[1] = x;
        d[1] = 1.0;
    }
    for r in 2..v.len() {
        v[r] = x * v[r - 1] + v[r - 2];
        d[r] = v[r - 1] + x * d[r - 1] + d[r - 2];
    }
}

/// Uniform cubic B-splines on `[-1, 1]` with `grid` intervals (`grid + 3` functions).
#[cfg(feature = "bspline")]
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineBasis {
    grid: usize,
}

#[cfg(feature = "bspline")]
impl BSplineBasis {
    const ORDER: usize = 3;

    pub fn new(grid: usize) -> Result<Self> {
        if grid == 0 {
            return Err(Error::BasisParameter("B-spline grid must be positive".into()));
        }
        Ok(BSplineBasis { grid })
    }

    pub fn len(&self) -> usize {
        self.grid + Self::ORDER
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn eval_with_deriv_into(&self, x: f64, v: &mut [f64], d: &mut [f64]) {
        let k = Self::ORDER;
        let h = 2.0 / self.grid as f64;
        let knot = |i: usize| -1.0 + (i as f64 - k as f64) * h;
        let intervals = self.grid + 2 * k;
        // degree-0 indicators over the extended knot vector
        let mut cur: Vec<f64> = (0..intervals)
            .map(|i| if x >= knot(i) && x < knot(i + 1) { 1.0 } else { 0.0 })
            .collect();
        let mut prev = Vec::new();
        for p in 1..=k {
            prev = cur.clone();
            cur = (0..intervals - p)
                .map(|i| {
                    let left = (x - knot(i)) / (p as f64 * h) * prev[i];
                    let right = (knot(i + p + 1) - x) / (p as f64 * h) * prev[i + 1];
                    left + right
                })
                .collect();
        }
        for i in 0..self.len() {
            v[i] = cur[i];
            d[i] = (k as f64 / (k as f64 * h)) * (prev[i] - prev[i + 1]);
        }
    }
}

/// Which family an ablation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    Hahn,
    Chebyshev,
    Lucas,
    BSpline,
}

impl BasisKind {
    pub const ALL: [BasisKind; 4] = [
        BasisKind::Hahn,
        BasisKind::Chebyshev,
        BasisKind::Lucas,
        BasisKind::BSpline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Hahn => "hahn",
            BasisKind::Chebyshev => "chebyshev",
            BasisKind::Lucas => "lucas",
            BasisKind::BSpline => "bspline",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hahn" => Ok(BasisKind::Hahn),
            "chebyshev" => Ok(BasisKind::Chebyshev),
            "lucas" => Ok(BasisKind::Lucas),
            "bspline" | "b-spline" | "bsplines" => Ok(BasisKind::BSpline),
            other => Err(Error::Config(format!(
                "unknown basis `{other}` (expected hahn, chebyshev, lucas, bspline)"
            ))),
        }
    }
}

/// A constructed basis family of some width.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis {
    Hahn(HahnBasis),
    Chebyshev { degree: usize },
    Lucas { degree: usize },
    #[cfg(feature = "bspline")]
    BSpline(BSplineBasis),
}

impl Basis {
    /// Builds the basis for `kind`. Hahn uses `(a, b, n)`; the B-spline uses
    /// `degree` as its grid size.
    pub fn build(kind: BasisKind, a: f64, b: f64, n: usize, degree: usize) -> Result<Self> {
        match kind {
            BasisKind::Hahn => Ok(Basis::Hahn(HahnBasis::new(a, b, n, degree)?)),
            BasisKind::Chebyshev => Ok(Basis::Chebyshev { degree }),
            BasisKind::Lucas => Ok(Basis::Lucas { degree }),
            #[cfg(feature = "bspline")]
            BasisKind::BSpline => Ok(Basis::BSpline(BSplineBasis::new(degree.max(1))?)),
            #[cfg(not(feature = "bspline"))]
            BasisKind::BSpline => Err(Error::BasisParameter(
                "B-spline basis requires the `bspline` feature".into(),
            )),
        }
    }

    pub fn kind(&self) -> BasisKind {
        match self {
            Basis::Hahn(_) => BasisKind::Hahn,
            Basis::Chebyshev { .. } => BasisKind::Chebyshev,
            Basis::Lucas { .. } => BasisKind::Lucas,
            #[cfg(feature = "bspline")]
            Basis::BSpline(_) => BasisKind::BSpline,
        }
    }

    /// Number of basis functions per edge.
    pub fn width(&self) -> usize {
        match self {
            Basis::Hahn(h) => h.degree + 1,
            Basis::Chebyshev { degree } | Basis::Lucas { degree } => degree + 1,
            #[cfg(feature = "bspline")]
            Basis::BSpline(s) => s.len(),
        }
    }

    /// Interval the basis is evaluated on.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Basis::Hahn(h) => (0.0, h.n as f64),
            _ => (-1.0, 1.0),
        }
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        bump();
        match self {
            Basis::Hahn(h) => h.eval_into(x, out),
            _ => {
                let mut scratch = vec![0.0; out.len()];
                self.dispatch_with_deriv(x, out, &mut scratch);
            }
        }
    }

    pub fn eval_with_deriv_into(&self, x: f64, v: &mut [f64], d: &mut [f64]) {
        bump();
        self.dispatch_with_deriv(x, v, d);
    }

    fn dispatch_with_deriv(&self, x: f64, v: &mut [f64], d: &mut [f64]) {
        match self {
            Basis::Hahn(h) => h.eval_with_deriv_into(x, v, d),
            Basis::Chebyshev { .. } => chebyshev_into(x, v, d),
            Basis::Lucas { .. } => lucas_into(x, v, d),
            #[cfg(feature = "bspline")]
            Basis::BSpline(s) => s.eval_with_deriv_into(x, v, d),
        }
    }
}
