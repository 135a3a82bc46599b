//! Test problems with known structure and solutions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{Operator, Problem};
use crate::point::Point;

/// `F(x) = A x + b`.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineOperator {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::Construction(format!(
                "affine operator needs square A matching b, got {}x{} and {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(AffineOperator { a, b })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }
}

impl Operator for AffineOperator {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }

    fn taylor_tail(
        &self,
        _v: &DVector<f64>,
        d: &DVector<f64>,
        _order: usize,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = d.len();
        Some((DVector::zeros(n), DMatrix::zeros(n, n)))
    }

    fn affine_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.a, &self.b))
    }
}

/// `F(x) = mu x + |x|^2 x`, the gradient of `mu/2 |x|^2 + 1/4 |x|^4`.
#[derive(Debug, Clone)]
pub struct CubicGradOperator {
    dim: usize,
    mu: f64,
}

impl Operator for CubicGradOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        x * (self.mu + x.norm_squared())
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.dim;
        Some(DMatrix::identity(n, n) * (self.mu + x.norm_squared()) + x * x.transpose() * 2.0)
    }

    fn taylor_tail(
        &self,
        v: &DVector<f64>,
        d: &DVector<f64>,
        order: usize,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim;
        let mut value = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let vd = v.dot(d);
        let dd = d.norm_squared();
        let eye = DMatrix::<f64>::identity(n, n);
        if order >= 3 {
            // (1/2) D^2F(v)[d,d] = 2<v,d> d + |d|^2 v
            value += d * (2.0 * vd) + v * dd;
            jac += (d * v.transpose() + &eye * vd) * 2.0 + v * d.transpose() * 2.0;
        }
        if order >= 4 {
            // (1/6) D^3F[d,d,d] = |d|^2 d
            value += d * dd;
            jac += &eye * dd + d * d.transpose() * 2.0;
        }
        Some((value, jac))
    }
}

/// `F(x)_i = x_i^3`.
#[derive(Debug, Clone)]
pub struct ScalarCubedOperator {
    dim: usize,
}

impl Operator for ScalarCubedOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(|c| c * c * c)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&x.map(|c| 3.0 * c * c)))
    }

    fn taylor_tail(
        &self,
        v: &DVector<f64>,
        d: &DVector<f64>,
        order: usize,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim;
        let mut value = DVector::zeros(n);
        let mut diag = DVector::zeros(n);
        for i in 0..n {
            if order >= 3 {
                value[i] += 3.0 * v[i] * d[i] * d[i];
                diag[i] += 6.0 * v[i] * d[i];
            }
            if order >= 4 {
                value[i] += d[i] * d[i] * d[i];
                diag[i] += 3.0 * d[i] * d[i];
            }
        }
        Some((value, DMatrix::from_diagonal(&diag)))
    }
}

/// Names accepted by [`ProblemKind::from_str`], as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    AffineMonotone,
    Bilinear,
    StrongMonoAffine,
    CubicGrad,
    ScalarCubed,
    StrongMonoCubic,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::AffineMonotone,
        ProblemKind::Bilinear,
        ProblemKind::StrongMonoAffine,
        ProblemKind::CubicGrad,
        ProblemKind::ScalarCubed,
        ProblemKind::StrongMonoCubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::AffineMonotone => "affine",
            ProblemKind::Bilinear => "bilinear",
            ProblemKind::StrongMonoAffine => "strongmono-affine",
            ProblemKind::CubicGrad => "cubic-grad",
            ProblemKind::ScalarCubed => "scalar-cubed",
            ProblemKind::StrongMonoCubic => "strongmono-cubic",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ProblemKind::AffineMonotone => "F(x) = (S + M) x + b, S skew, M PSD (random)",
            ProblemKind::Bilinear => {
                "saddle of x^T B y + linear terms, B with singular values in [1/cond, 1]"
            }
            ProblemKind::StrongMonoAffine => "F(x) = (mu I + S) x + b, S skew (random)",
            ProblemKind::CubicGrad => "F(x) = |x|^2 x, zero at the origin",
            ProblemKind::ScalarCubed => "F(x)_i = x_i^3, zero at the origin",
            ProblemKind::StrongMonoCubic => "F(x) = mu x + |x|^2 x (x + x^3 in 1-D)",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match norm.as_str() {
            "affine" | "affine-monotone" => ProblemKind::AffineMonotone,
            "bilinear" | "bilinear-saddle" => ProblemKind::Bilinear,
            "strongmono-affine" | "strongly-monotone-affine" => ProblemKind::StrongMonoAffine,
            "cubic-grad" => ProblemKind::CubicGrad,
            "scalar-cubed" => ProblemKind::ScalarCubed,
            "strongmono-cubic" => ProblemKind::StrongMonoCubic,
            _ => return Err(Error::Config(format!("unknown problem '{s}'"))),
        };
        Ok(kind)
    }
}

/// Fully specified problem instance. Random instances are produced by the
/// `random_*` constructors, which are deterministic in their seed.
#[derive(Debug, Clone)]
pub enum ProblemDescriptor {
    /// `F(x) = (S + M) x + b`.
    AffineMonotone {
        skew: DMatrix<f64>,
        psd: DMatrix<f64>,
        b: DVector<f64>,
    },
    /// `F(x, y) = (B y, -B^T x) + b`.
    BilinearSaddle { coupling: DMatrix<f64>, b: DVector<f64> },
    /// `F(x) = (mu I + S) x + b`.
    StronglyMonotoneAffine {
        mu: f64,
        skew: Option<DMatrix<f64>>,
        b: DVector<f64>,
    },
    CubicGrad { dim: usize, radius: f64 },
    ScalarCubed { dim: usize, radius: f64 },
    StrongMonoCubic { dim: usize, mu: f64, radius: f64 },
}

/// Default condition number of the random bilinear coupling matrix.
pub const DEFAULT_BILINEAR_COND: f64 = 30.0;

impl ProblemDescriptor {
    /// Random monotone affine instance: `S` is a uniform matrix antisymmetrized,
    /// `M = G^T G / |G^T G|` scaled to spectral norm `psd_bound`.
    pub fn random_affine_monotone(dim: usize, psd_bound: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = linalg::uniform_matrix(&mut rng, dim, dim);
        let skew = (&u - u.transpose()) * 0.5;
        let g = linalg::uniform_matrix(&mut rng, dim, dim);
        let gtg = g.transpose() * &g;
        let scale = linalg::op_norm(&gtg);
        let psd = if scale > 0.0 { gtg * (psd_bound / scale) } else { gtg };
        let b = linalg::uniform_vector(&mut rng, dim);
        ProblemDescriptor::AffineMonotone { skew, psd, b }
    }

    /// Random bilinear saddle in even dimension `dim`. The coupling is
    /// `Q1 diag(sigma) Q2^T` with singular values spaced geometrically from 1
    /// down to `1/cond`; the solution is uniform in `[-1, 1]^dim`.
    pub fn random_bilinear(dim: usize, cond: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Construction(format!(
                "bilinear problems need an even dimension, got {dim}"
            )));
        }
        if !(cond >= 1.0 && cond.is_finite()) {
            return Err(Error::Construction(format!(
                "condition number must be >= 1, got {cond}"
            )));
        }
        let n = dim / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = linalg::random_orthogonal(&mut rng, n);
        let q2 = linalg::random_orthogonal(&mut rng, n);
        let sigma = DVector::from_fn(n, |i, _| {
            if n == 1 {
                1.0
            } else {
                cond.powf(-(i as f64) / (n - 1) as f64)
            }
        });
        let coupling = &q1 * DMatrix::from_diagonal(&sigma) * q2.transpose();
        let x_star = linalg::uniform_vector(&mut rng, dim);
        let b = -(skew_block(&coupling) * x_star);
        Ok(ProblemDescriptor::BilinearSaddle { coupling, b })
    }

    pub fn random_strongly_monotone_affine(dim: usize, mu: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = linalg::uniform_matrix(&mut rng, dim, dim);
        let skew = (&u - u.transpose()) * 0.5;
        let b = linalg::uniform_vector(&mut rng, dim);
        ProblemDescriptor::StronglyMonotoneAffine {
            mu,
            skew: Some(skew),
            b,
        }
    }
}

fn skew_block(coupling: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = coupling.shape();
    let mut k = DMatrix::zeros(m + n, m + n);
    k.view_mut((0, m), (m, n)).copy_from(coupling);
    k.view_mut((m, 0), (n, m)).copy_from(&(-coupling.transpose()));
    k
}

fn check_skew(s: &DMatrix<f64>) -> Result<()> {
    let asym = (s + s.transpose()).norm();
    if asym > 1e-12 * (1.0 + s.norm()) {
        return Err(Error::Construction(format!(
            "skew part is not antisymmetric (|S + S^T| = {asym:e})"
        )));
    }
    Ok(())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Construction(format!(
            "region radius must be positive, got {radius}"
        )));
    }
    Ok(())
}

fn affine_problem(name: &str, a: DMatrix<f64>, b: DVector<f64>, order: usize) -> Result<Problem> {
    let lipschitz = linalg::op_norm(&a);
    if lipschitz == 0.0 {
        return Err(Error::Construction("affine operator with zero matrix".into()));
    }
    let solution = linalg::solve(a.clone(), &(-&b));
    let op = AffineOperator::new(a, b)?;
    let problem = Problem::new(name, Arc::new(op), order, lipschitz)?;
    match solution {
        Some(x) => {
            let x = Point::from_vector(x)?;
            // ill-conditioned instances may miss the residue check; keep them
            // usable without a reference solution
            match problem.clone().with_solution(x) {
                Ok(p) => Ok(p),
                Err(_) => Ok(problem),
            }
        }
        None => Ok(problem),
    }
}

/// Builds the problem and the constant `L` for order `order`.
///
/// For affine operators all derivatives beyond the first vanish, so any
/// positive `L` is admissible for `p >= 2`; the operator norm `|A|` is used for
/// every order so that constants are comparable across orders. For the cubic
/// operators the constant is local to `|x - x*| <= radius` and the radius is
/// recorded on the problem.
pub fn make_problem(desc: &ProblemDescriptor, order: usize) -> Result<Problem> {
    if order == 0 {
        return Err(Error::Construction("order p must be at least 1".into()));
    }
    match desc {
        ProblemDescriptor::AffineMonotone { skew, psd, b } => {
            check_skew(skew)?;
            if psd.shape() != skew.shape() || !psd.is_square() {
                return Err(Error::Construction("S and M must be square and equal size".into()));
            }
            let sym_err = (psd - psd.transpose()).norm();
            if sym_err > 1e-12 * (1.0 + psd.norm()) {
                return Err(Error::Construction("M is not symmetric".into()));
            }
            let min_eig = linalg::min_sym_eigenvalue(psd);
            if min_eig < -1e-12 * (1.0 + linalg::op_norm(psd)) {
                return Err(Error::Construction(format!(
                    "M is not positive semidefinite (min eigenvalue {min_eig:e})"
                )));
            }
            affine_problem("affine", skew + psd, b.clone(), order)
        }
        ProblemDescriptor::BilinearSaddle { coupling, b } => {
            let k = skew_block(coupling);
            if k.nrows() != b.len() {
                return Err(Error::Construction(format!(
                    "offset has length {}, expected {}",
                    b.len(),
                    k.nrows()
                )));
            }
            let mut problem = affine_problem("bilinear", k, b.clone(), order)?;
            if problem.solution().is_none() && b.iter().all(|c| *c == 0.0) {
                problem = problem.with_solution(Point::zeros(b.len()))?;
            }
            Ok(problem)
        }
        ProblemDescriptor::StronglyMonotoneAffine { mu, skew, b } => {
            if !(*mu > 0.0) {
                return Err(Error::Construction(format!(
                    "strong monotonicity modulus must be positive, got {mu}"
                )));
            }
            let n = b.len();
            let mut a = DMatrix::identity(n, n) * *mu;
            if let Some(s) = skew {
                check_skew(s)?;
                if s.shape() != (n, n) {
                    return Err(Error::Construction("skew part has wrong shape".into()));
                }
                a += s;
            }
            Ok(affine_problem("strongmono-affine", a, b.clone(), order)?
                .with_strong_monotonicity(*mu))
        }
        ProblemDescriptor::CubicGrad { dim, radius } => {
            check_radius(*radius)?;
            cubic_problem("cubic-grad", *dim, 0.0, *radius, order)
        }
        ProblemDescriptor::StrongMonoCubic { dim, mu, radius } => {
            check_radius(*radius)?;
            if !(*mu > 0.0) {
                return Err(Error::Construction(format!(
                    "strong monotonicity modulus must be positive, got {mu}"
                )));
            }
            Ok(cubic_problem("strongmono-cubic", *dim, *mu, *radius, order)?
                .with_strong_monotonicity(*mu))
        }
        ProblemDescriptor::ScalarCubed { dim, radius } => {
            check_radius(*radius)?;
            if *dim == 0 {
                return Err(Error::Construction("dimension must be positive".into()));
            }
            // |3x^2 - 3y^2| <= 6R |x - y| coordinatewise on the region
            let lipschitz = match order {
                1 => 3.0 * radius * radius,
                2 => 6.0 * radius,
                _ => 6.0,
            };
            let op = ScalarCubedOperator { dim: *dim };
            Ok(Problem::new("scalar-cubed", Arc::new(op), order, lipschitz)?
                .with_solution(Point::zeros(*dim))?
                .with_region(*radius))
        }
    }
}

fn cubic_problem(name: &str, dim: usize, mu: f64, radius: f64, order: usize) -> Result<Problem> {
    if dim == 0 {
        return Err(Error::Construction("dimension must be positive".into()));
    }
    // |J(x)| <= mu + 3R^2, |DJ| <= 6R, |D^2 J| <= 6 on |x| <= R
    let lipschitz = match order {
        1 => mu + 3.0 * radius * radius,
        2 => 6.0 * radius,
        _ => 6.0,
    };
    let op = CubicGradOperator { dim, mu };
    Ok(Problem::new(name, Arc::new(op), order, lipschitz)?
        .with_solution(Point::zeros(dim))?
        .with_region(radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{jacobian, monotonicity_margin, JacobianOracle};

    #[test]
    fn unit_bilinear_is_rotation() {
        let desc = ProblemDescriptor::BilinearSaddle {
            coupling: DMatrix::from_element(1, 1, 1.0),
            b: DVector::zeros(2),
        };
        let p = make_problem(&desc, 1).unwrap();
        let f = p.eval(&Point::new(vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(f.coords(), &[4.0, -3.0]);
        assert_eq!(p.solution().unwrap().coords(), &[0.0, 0.0]);
    }

    #[test]
    fn strongly_monotone_affine_shift() {
        let desc = ProblemDescriptor::StronglyMonotoneAffine {
            mu: 1.0,
            skew: None,
            b: DVector::from_vec(vec![-1.0]),
        };
        let p = make_problem(&desc, 1).unwrap();
        assert_eq!(p.solution().unwrap().coords(), &[1.0]);
        assert_eq!(p.eval(&Point::new(vec![3.0]).unwrap()).unwrap().coords(), &[2.0]);
    }

    #[test]
    fn scalar_cubed_constant_for_order_two() {
        let p = make_problem(&ProblemDescriptor::ScalarCubed { dim: 1, radius: 2.0 }, 2).unwrap();
        assert_eq!(p.lipschitz(), 12.0);
        assert_eq!(p.region_radius(), Some(2.0));
        assert_eq!(p.solution().unwrap().coords(), &[0.0]);
    }

    #[test]
    fn non_psd_part_is_rejected() {
        let desc = ProblemDescriptor::AffineMonotone {
            skew: DMatrix::zeros(2, 2),
            psd: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5])),
            b: DVector::zeros(2),
        };
        assert!(matches!(make_problem(&desc, 1), Err(Error::Construction(_))));
    }

    #[test]
    fn non_skew_part_is_rejected() {
        let desc = ProblemDescriptor::AffineMonotone {
            skew: DMatrix::identity(2, 2),
            psd: DMatrix::identity(2, 2),
            b: DVector::zeros(2),
        };
        assert!(make_problem(&desc, 1).is_err());
    }

    #[test]
    fn odd_bilinear_dimension_is_rejected() {
        assert!(ProblemDescriptor::random_bilinear(3, 10.0, 0).is_err());
    }

    #[test]
    fn random_generation_is_deterministic() {
        let a = ProblemDescriptor::random_bilinear(10, DEFAULT_BILINEAR_COND, 42).unwrap();
        let b = ProblemDescriptor::random_bilinear(10, DEFAULT_BILINEAR_COND, 42).unwrap();
        let (ProblemDescriptor::BilinearSaddle { coupling: c1, b: b1 }, ProblemDescriptor::BilinearSaddle { coupling: c2, b: b2 }) = (a, b) else {
            panic!("wrong variant");
        };
        assert_eq!(c1, c2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn bilinear_spectrum_matches_condition_number() {
        let desc = ProblemDescriptor::random_bilinear(10, 30.0, 7).unwrap();
        let ProblemDescriptor::BilinearSaddle { coupling, .. } = &desc else {
            unreachable!()
        };
        let sv = coupling.singular_values();
        assert!((sv.max() - 1.0).abs() < 1e-12);
        assert!((sv.min() - 1.0 / 30.0).abs() < 1e-12);
        let p = make_problem(&desc, 2).unwrap();
        assert!(p.solution().is_some());
    }

    fn zoo(order: usize) -> Vec<Problem> {
        vec![
            make_problem(&ProblemDescriptor::random_affine_monotone(6, 1.0, 1), order).unwrap(),
            make_problem(&ProblemDescriptor::random_bilinear(6, 30.0, 2).unwrap(), order).unwrap(),
            make_problem(&ProblemDescriptor::random_strongly_monotone_affine(5, 0.5, 3), order)
                .unwrap(),
            make_problem(&ProblemDescriptor::CubicGrad { dim: 4, radius: 10.0 }, order).unwrap(),
            make_problem(&ProblemDescriptor::ScalarCubed { dim: 3, radius: 10.0 }, order).unwrap(),
            make_problem(
                &ProblemDescriptor::StrongMonoCubic { dim: 3, mu: 1.0, radius: 10.0 },
                order,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn zoo_is_monotone() {
        for p in zoo(1) {
            let margin = monotonicity_margin(&p, 10.0, 100, 11);
            assert!(margin >= -1e-10, "{}: {margin}", p.name());
        }
    }

    #[test]
    fn zoo_finite_differences_match_analytic() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in zoo(2) {
            for _ in 0..20 {
                let x = Point::from_vector(linalg::sample_ball(&mut rng, p.dim(), 10.0)).unwrap();
                let ja = jacobian(&p, &x, JacobianOracle::analytic()).unwrap();
                let jf = jacobian(&p, &x, JacobianOracle::finite_difference()).unwrap();
                for (a, f) in ja.iter().zip(jf.iter()) {
                    assert!((a - f).abs() <= 1e-6 * (1.0 + a.abs()), "{}: {a} vs {f}", p.name());
                }
            }
        }
    }

    #[test]
    fn order_two_constants_bound_jacobian_variation() {
        use crate::operator::jacobian_lipschitz_estimate;
        for p in zoo(2) {
            let radius = p.region_radius().unwrap_or(10.0);
            let center = p.solution().map(|s| s.as_vector().clone()).unwrap_or_else(|| DVector::zeros(p.dim()));
            let est = jacobian_lipschitz_estimate(&p, &center, radius, 200, 9);
            assert!(est <= p.lipschitz() + 1e-8, "{}: {est} > {}", p.name(), p.lipschitz());
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ProblemKind::ALL {
            assert_eq!(kind.name().parse::<ProblemKind>().unwrap(), kind);
        }
        assert!("nope".parse::<ProblemKind>().is_err());
    }

    #[test]
    fn taylor_tails_match_finite_expansion() {
        // F(v + d) = F(v) + J d + tail(d) exactly for cubic operators at p = 4
        let ops: Vec<Box<dyn Operator>> = vec![
            Box::new(CubicGradOperator { dim: 3, mu: 0.5 }),
            Box::new(ScalarCubedOperator { dim: 3 }),
        ];
        let v = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let d = DVector::from_vec(vec![-0.4, 0.25, 1.1]);
        for op in ops {
            let (tail, _) = op.taylor_tail(&v, &d, 4).unwrap();
            let lhs = op.eval(&(&v + &d));
            let rhs = op.eval(&v) + op.jacobian(&v).unwrap() * &d + tail;
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
