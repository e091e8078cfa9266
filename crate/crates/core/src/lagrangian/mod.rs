//! 1-periodic Lagrangians on the flat torus T^N = R^N / Z^N.
//!
//! Every family is written once against [`Real`]; first and second partials
//! come from hyper-dual evaluation, so they carry no truncation error.

mod class;
mod legendre;
mod modification;

pub use class::{verify_class, ClassReport, GridSpec};
pub use legendre::{c_of_l, dual_hamiltonian, inverse_legendre, legendre};
pub use modification::{make_modification, ModifiedLagrangian, OuterExtension};

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{HyperDual, Jet2, Real};
use crate::HyperDual64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    FiberwiseQuadratic,
    Mechanical,
    QuarticTonelli,
    Custom,
}

/// `coef · cos(2π k·q + q_phase) · cos(2π m t + t_phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coef: f64,
    pub q_freq: Vec<f64>,
    #[serde(default)]
    pub q_phase: f64,
    #[serde(default)]
    pub t_freq: f64,
    #[serde(default)]
    pub t_phase: f64,
}

impl TrigTerm {
    fn eval<S: Real>(&self, t: S, q: &[S]) -> S {
        let mut arg = S::from_f64(self.q_phase);
        for (k, qi) in self.q_freq.iter().zip(q) {
            if *k != 0.0 {
                arg += qi.scale(2.0 * PI * k);
            }
        }
        let mut val = arg.cos().scale(self.coef);
        if self.t_freq != 0.0 || self.t_phase != 0.0 {
            val = val * (t.scale(2.0 * PI * self.t_freq) + S::from_f64(self.t_phase)).cos();
        }
        val
    }
}

/// Potential `V(t, q)` as a finite sum of [`TrigTerm`]s.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl Potential {
    pub fn eval<S: Real>(&self, t: S, q: &[S]) -> S {
        let mut acc = S::zero();
        for term in &self.terms {
            acc += term.eval(t, q);
        }
        acc
    }

    fn autonomous(&self) -> bool {
        self.terms.iter().all(|term| term.t_freq == 0.0)
    }
}

/// `matrix · cos(2π k·q + q_phase)`, one summand of a position-dependent metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTerm {
    pub matrix: Vec<Vec<f64>>,
    pub q_freq: Vec<f64>,
    #[serde(default)]
    pub q_phase: f64,
}

/// `A(q) = constant + Σ terms`, required symmetric positive definite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub constant: Vec<Vec<f64>>,
    #[serde(default)]
    pub terms: Vec<MetricTerm>,
}

impl Metric {
    fn quadratic<S: Real>(&self, q: &[S], v: &[S]) -> S {
        let n = v.len();
        let mut acc = S::zero();
        for i in 0..n {
            for j in 0..n {
                let c = self.constant[i][j];
                if c != 0.0 {
                    acc += (v[i] * v[j]).scale(c);
                }
            }
        }
        for term in &self.terms {
            let mut arg = S::from_f64(term.q_phase);
            for (k, qi) in term.q_freq.iter().zip(q) {
                if *k != 0.0 {
                    arg += qi.scale(2.0 * PI * k);
                }
            }
            let w = arg.cos();
            let mut form = S::zero();
            for i in 0..n {
                for j in 0..n {
                    let c = term.matrix[i][j];
                    if c != 0.0 {
                        form += (v[i] * v[j]).scale(c);
                    }
                }
            }
            acc += w * form;
        }
        acc
    }

    pub fn at(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.constant.len();
        let mut a = DMatrix::from_fn(n, n, |i, j| self.constant[i][j]);
        for term in &self.terms {
            let arg: f64 = term.q_phase
                + term.q_freq.iter().zip(q).map(|(k, x)| 2.0 * PI * k * x).sum::<f64>();
            a += DMatrix::from_fn(n, n, |i, j| term.matrix[i][j]) * arg.cos();
        }
        a
    }
}

/// Parameters of the built-in families; this is also the config-file shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyParams {
    /// `L = ⟨A(q)v, v⟩ − V(t, q)`.
    FiberwiseQuadratic {
        dim: usize,
        metric: Metric,
        #[serde(default)]
        potential: Potential,
    },
    /// `L = ½|v|² − V(t, q)`.
    Mechanical {
        dim: usize,
        #[serde(default)]
        potential: Potential,
    },
    /// `L = (β/4)(1 + |v|²)² − V(t, q)`.
    QuarticTonelli {
        dim: usize,
        #[serde(default = "one")]
        stiffness: f64,
        #[serde(default)]
        potential: Potential,
    },
}

fn one() -> f64 {
    1.0
}

impl FamilyParams {
    pub fn dim(&self) -> usize {
        match self {
            FamilyParams::FiberwiseQuadratic { dim, .. }
            | FamilyParams::Mechanical { dim, .. }
            | FamilyParams::QuarticTonelli { dim, .. } => *dim,
        }
    }

    pub fn tag(&self) -> FamilyTag {
        match self {
            FamilyParams::FiberwiseQuadratic { .. } => FamilyTag::FiberwiseQuadratic,
            FamilyParams::Mechanical { .. } => FamilyTag::Mechanical,
            FamilyParams::QuarticTonelli { .. } => FamilyTag::QuarticTonelli,
        }
    }

    pub fn free_particle(dim: usize) -> Self {
        FamilyParams::Mechanical { dim, potential: Potential::default() }
    }

    /// `V = −¼ cos(2πq)`, so `L = v²/2 + ¼ cos(2πq)`.
    pub fn pendulum() -> Self {
        FamilyParams::Mechanical {
            dim: 1,
            potential: Potential { terms: vec![cos_term(-0.25, 0.0)] },
        }
    }

    /// `V = −¼ cos(2πq)(1 + ½ cos(2πt))`.
    pub fn forced_pendulum() -> Self {
        FamilyParams::Mechanical {
            dim: 1,
            potential: Potential { terms: vec![cos_term(-0.25, 0.0), cos_term(-0.125, 1.0)] },
        }
    }

    /// Quartic kinetic part over the pendulum potential.
    pub fn quartic_pendulum(stiffness: f64) -> Self {
        FamilyParams::QuarticTonelli {
            dim: 1,
            stiffness,
            potential: Potential { terms: vec![cos_term(-0.25, 0.0)] },
        }
    }
}

fn cos_term(coef: f64, t_freq: f64) -> TrigTerm {
    TrigTerm { coef, q_freq: vec![1.0], q_phase: 0.0, t_freq, t_phase: 0.0 }
}

/// A user Lagrangian written generically over the scalar type.
pub trait ScalarLagrangian: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn eval<S: Real>(&self, t: S, q: &[S], v: &[S]) -> S;
    fn autonomous(&self) -> bool {
        false
    }
}

/// Object-safe view of a [`ScalarLagrangian`] at the scalar types the
/// library evaluates with.
pub trait CustomLagrangian: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn autonomous(&self) -> bool;
    fn eval_f64(&self, t: f64, q: &[f64], v: &[f64]) -> f64;
    fn eval_hd(&self, t: HyperDual64, q: &[HyperDual64], v: &[HyperDual64]) -> HyperDual64;
    fn eval_jet(&self, t: Jet2<f64>, q: &[Jet2<f64>], v: &[Jet2<f64>]) -> Jet2<f64>;
    fn eval_jet_hd(
        &self,
        t: Jet2<HyperDual64>,
        q: &[Jet2<HyperDual64>],
        v: &[Jet2<HyperDual64>],
    ) -> Jet2<HyperDual64>;
}

impl<T: ScalarLagrangian> CustomLagrangian for T {
    fn dim(&self) -> usize {
        ScalarLagrangian::dim(self)
    }
    fn autonomous(&self) -> bool {
        ScalarLagrangian::autonomous(self)
    }
    fn eval_f64(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        self.eval(t, q, v)
    }
    fn eval_hd(&self, t: HyperDual64, q: &[HyperDual64], v: &[HyperDual64]) -> HyperDual64 {
        self.eval(t, q, v)
    }
    fn eval_jet(&self, t: Jet2<f64>, q: &[Jet2<f64>], v: &[Jet2<f64>]) -> Jet2<f64> {
        self.eval(t, q, v)
    }
    fn eval_jet_hd(
        &self,
        t: Jet2<HyperDual64>,
        q: &[Jet2<HyperDual64>],
        v: &[Jet2<HyperDual64>],
    ) -> Jet2<HyperDual64> {
        self.eval(t, q, v)
    }
}

/// Scalars a [`LagrangianSpec`] can be evaluated at, custom specs included.
pub trait EvalScalar: Real {
    fn eval_custom(model: &dyn CustomLagrangian, t: Self, q: &[Self], v: &[Self]) -> Self;
}

impl EvalScalar for f64 {
    fn eval_custom(model: &dyn CustomLagrangian, t: Self, q: &[Self], v: &[Self]) -> Self {
        model.eval_f64(t, q, v)
    }
}

impl EvalScalar for HyperDual64 {
    fn eval_custom(model: &dyn CustomLagrangian, t: Self, q: &[Self], v: &[Self]) -> Self {
        model.eval_hd(t, q, v)
    }
}

impl EvalScalar for Jet2<f64> {
    fn eval_custom(model: &dyn CustomLagrangian, t: Self, q: &[Self], v: &[Self]) -> Self {
        model.eval_jet(t, q, v)
    }
}

impl EvalScalar for Jet2<HyperDual64> {
    fn eval_custom(model: &dyn CustomLagrangian, t: Self, q: &[Self], v: &[Self]) -> Self {
        model.eval_jet_hd(t, q, v)
    }
}

/// Scalars at which a modified Lagrangian can be evaluated: the radial
/// Taylor data needs one more derivative level on top of `Self`.
pub trait ModScalar: EvalScalar {
    type Jet: EvalScalar;
    fn jet(v: Self, d1: Self) -> Self::Jet;
    fn lift(x: Self) -> Self::Jet;
    fn parts(j: Self::Jet) -> (Self, Self, Self);
}

macro_rules! impl_mod_scalar {
    ($t:ty) => {
        impl ModScalar for $t {
            type Jet = Jet2<$t>;
            fn jet(v: Self, d1: Self) -> Self::Jet {
                Jet2 { v, d1, d2: <$t as Real>::zero() }
            }
            fn lift(x: Self) -> Self::Jet {
                Jet2::constant(x)
            }
            fn parts(j: Self::Jet) -> (Self, Self, Self) {
                (j.v, j.d1, j.d2)
            }
        }
    };
}

impl_mod_scalar!(f64);
impl_mod_scalar!(HyperDual64);

#[derive(Clone, Debug)]
enum Base {
    Quadratic { metric: Metric, potential: Potential },
    Mechanical { potential: Potential },
    Quartic { stiffness: f64, potential: Potential },
    Custom(Arc<dyn CustomLagrangian>),
}

impl Base {
    fn eval<S: EvalScalar>(&self, t: S, q: &[S], v: &[S]) -> S {
        match self {
            Base::Quadratic { metric, potential } => metric.quadratic(q, v) - potential.eval(t, q),
            Base::Mechanical { potential } => {
                let mut k = S::zero();
                for vi in v {
                    k += *vi * *vi;
                }
                k.scale(0.5) - potential.eval(t, q)
            }
            Base::Quartic { stiffness, potential } => {
                let mut s = S::one();
                for vi in v {
                    s += *vi * *vi;
                }
                (s * s).scale(0.25 * stiffness) - potential.eval(t, q)
            }
            Base::Custom(model) => S::eval_custom(model.as_ref(), t, q, v),
        }
    }

    fn autonomous(&self) -> bool {
        match self {
            Base::Quadratic { potential, .. }
            | Base::Mechanical { potential }
            | Base::Quartic { potential, .. } => potential.autonomous(),
            Base::Custom(model) => model.autonomous(),
        }
    }
}

#[derive(Clone, Debug)]
enum Model {
    Plain(Base),
    /// Radial second-order Taylor extension of the base beyond |v| = radius.
    Modified { base: Base, radius: f64 },
}

/// A 1-periodic Lagrangian on T^N with exact derivative maps.
#[derive(Clone, Debug)]
pub struct LagrangianSpec {
    dim: usize,
    tag: FamilyTag,
    model: Model,
    params: Option<FamilyParams>,
}

/// Value and all first and second partials at one point.
#[derive(Clone, Debug)]
pub struct Derivs {
    pub value: f64,
    pub d_v: DVector<f64>,
    pub d_q: DVector<f64>,
    pub d_vv: DMatrix<f64>,
    /// Entry (i, j) is ∂²L/∂v_i∂q_j.
    pub d_vq: DMatrix<f64>,
    pub d_qq: DMatrix<f64>,
    pub d_vt: DVector<f64>,
}

/// Build a spec from family parameters, checking the metric and periodicity.
pub fn build_family(params: &FamilyParams) -> Result<LagrangianSpec> {
    LagrangianSpec::build(params)
}

impl LagrangianSpec {
    pub fn build(params: &FamilyParams) -> Result<Self> {
        let dim = params.dim();
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        let check_potential = |p: &Potential| -> Result<()> {
            for term in &p.terms {
                if term.q_freq.len() != dim {
                    return Err(Error::InvalidParams(format!(
                        "potential term has {} frequencies for dimension {dim}",
                        term.q_freq.len()
                    )));
                }
                if !term.coef.is_finite() {
                    return Err(Error::InvalidParams("non-finite potential coefficient".into()));
                }
            }
            Ok(())
        };
        let base = match params {
            FamilyParams::FiberwiseQuadratic { metric, potential, .. } => {
                check_potential(potential)?;
                check_metric(metric, dim)?;
                Base::Quadratic { metric: metric.clone(), potential: potential.clone() }
            }
            FamilyParams::Mechanical { potential, .. } => {
                check_potential(potential)?;
                Base::Mechanical { potential: potential.clone() }
            }
            FamilyParams::QuarticTonelli { stiffness, potential, .. } => {
                check_potential(potential)?;
                if !(*stiffness > 0.0) {
                    return Err(Error::InvalidParams("quartic stiffness must be positive".into()));
                }
                Base::Quartic { stiffness: *stiffness, potential: potential.clone() }
            }
        };
        let spec =
            LagrangianSpec { dim, tag: params.tag(), model: Model::Plain(base), params: Some(params.clone()) };
        spec.check_periodic()?;
        Ok(spec)
    }

    pub fn custom(model: Arc<dyn CustomLagrangian>) -> Result<Self> {
        let dim = model.dim();
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        let spec = LagrangianSpec { dim, tag: FamilyTag::Custom, model: Model::Plain(Base::Custom(model)), params: None };
        spec.check_periodic()?;
        Ok(spec)
    }

    pub fn free_particle(dim: usize) -> Self {
        Self::build(&FamilyParams::free_particle(dim)).expect("free particle is valid")
    }

    pub fn pendulum() -> Self {
        Self::build(&FamilyParams::pendulum()).expect("pendulum is valid")
    }

    pub fn forced_pendulum() -> Self {
        Self::build(&FamilyParams::forced_pendulum()).expect("forced pendulum is valid")
    }

    pub(crate) fn modified(&self, radius: f64) -> Result<Self> {
        match &self.model {
            Model::Plain(base) => Ok(LagrangianSpec {
                dim: self.dim,
                tag: self.tag,
                model: Model::Modified { base: base.clone(), radius },
                params: None,
            }),
            Model::Modified { .. } => Err(Error::InvalidParams("spec is already modified".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family_tag(&self) -> FamilyTag {
        self.tag
    }

    pub fn params(&self) -> Option<&FamilyParams> {
        self.params.as_ref()
    }

    /// Radius of the R-modification this spec carries, if any.
    pub fn modification_radius(&self) -> Option<f64> {
        match self.model {
            Model::Modified { radius, .. } => Some(radius),
            Model::Plain(_) => None,
        }
    }

    pub fn is_autonomous(&self) -> bool {
        match &self.model {
            Model::Plain(b) | Model::Modified { base: b, .. } => b.autonomous(),
        }
    }

    pub fn eval<S: ModScalar>(&self, t: S, q: &[S], v: &[S]) -> S {
        match &self.model {
            Model::Plain(base) => base.eval(t, q, v),
            Model::Modified { base, radius } => {
                let mut r2 = S::zero();
                for vi in v {
                    r2 += *vi * *vi;
                }
                if r2.re() <= radius * radius {
                    return base.eval(t, q, v);
                }
                let r = r2.sqrt();
                let tj = S::lift(t);
                let qj: Vec<S::Jet> = q.iter().map(|x| S::lift(*x)).collect();
                let vj: Vec<S::Jet> = v
                    .iter()
                    .map(|x| {
                        let u = *x / r;
                        S::jet(u.scale(*radius), u)
                    })
                    .collect();
                let (f0, f1, f2) = S::parts(base.eval(tj, &qj, &vj));
                let d = r - S::from_f64(*radius);
                f0 + d * f1 + (d * d * f2).scale(0.5)
            }
        }
    }

    pub fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        self.eval(t, q, v)
    }

    /// Hyper-dual evaluation with ε₁ on variable `a` and ε₂ on variable `b`;
    /// variables are indexed t = 0, q = 1..=N, v = N+1..=2N.
    fn probe(&self, t: f64, q: &[f64], v: &[f64], a: usize, b: usize) -> HyperDual64 {
        let seed = |idx: usize, x: f64| HyperDual::seeded(x, idx == a, idx == b);
        let n = self.dim;
        let th = seed(0, t);
        let qh: Vec<HyperDual64> = (0..n).map(|i| seed(1 + i, q[i])).collect();
        let vh: Vec<HyperDual64> = (0..n).map(|i| seed(1 + n + i, v[i])).collect();
        self.eval(th, &qh, &vh)
    }

    pub fn derivs(&self, t: f64, q: &[f64], v: &[f64]) -> Derivs {
        let n = self.dim;
        let (qi, vi) = (|i: usize| 1 + i, |i: usize| 1 + n + i);
        let mut d_v = DVector::zeros(n);
        let mut d_q = DVector::zeros(n);
        let mut d_vv = DMatrix::zeros(n, n);
        let mut d_vq = DMatrix::zeros(n, n);
        let mut d_qq = DMatrix::zeros(n, n);
        let mut d_vt = DVector::zeros(n);
        let mut value = 0.0;
        for i in 0..n {
            for j in i..n {
                let h = self.probe(t, q, v, vi(i), vi(j));
                d_vv[(i, j)] = h.e12;
                d_vv[(j, i)] = h.e12;
                d_v[i] = h.e1;
                d_v[j] = h.e2;
                value = h.re;
                let h = self.probe(t, q, v, qi(i), qi(j));
                d_qq[(i, j)] = h.e12;
                d_qq[(j, i)] = h.e12;
                d_q[i] = h.e1;
                d_q[j] = h.e2;
            }
            for j in 0..n {
                d_vq[(i, j)] = self.probe(t, q, v, vi(i), qi(j)).e12;
            }
            d_vt[i] = self.probe(t, q, v, vi(i), 0).e12;
        }
        Derivs { value, d_v, d_q, d_vv, d_vq, d_qq, d_vt }
    }

    /// Value, momentum and fiber Hessian; cheaper than [`Self::derivs`].
    pub fn fiber_data(&self, t: f64, q: &[f64], v: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.dim;
        let mut d_v = DVector::zeros(n);
        let mut d_vv = DMatrix::zeros(n, n);
        let mut value = 0.0;
        for i in 0..n {
            for j in i..n {
                let h = self.probe(t, q, v, 1 + n + i, 1 + n + j);
                d_vv[(i, j)] = h.e12;
                d_vv[(j, i)] = h.e12;
                d_v[i] = h.e1;
                d_v[j] = h.e2;
                value = h.re;
            }
        }
        (value, d_v, d_vv)
    }

    pub fn d_v(&self, t: f64, q: &[f64], v: &[f64]) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |i, _| self.probe(t, q, v, 1 + n + i, usize::MAX).e1)
    }

    pub fn d_q(&self, t: f64, q: &[f64], v: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.probe(t, q, v, 1 + i, usize::MAX).e1)
    }

    pub fn d_vv(&self, t: f64, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        self.fiber_data(t, q, v).2
    }

    pub fn d_vq(&self, t: f64, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, j| self.probe(t, q, v, 1 + n + i, 1 + j).e12)
    }

    pub fn d_qq(&self, t: f64, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, j| self.probe(t, q, v, 1 + i, 1 + j).e12)
    }

    /// Sampling certificate for 1-periodicity in t and in every q-coordinate.
    fn check_periodic(&self) -> Result<()> {
        let n = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(0x7065_7269_6f64);
        for _ in 0..64 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let base = self.value(t, &q, &v);
            if !base.is_finite() {
                return Err(Error::InvalidParams(format!("non-finite value at t = {t}, q = {q:?}")));
            }
            let tol = 1e-9 * (1.0 + base.abs());
            let shifted = self.value(t + 1.0, &q, &v);
            if (shifted - base).abs() > tol {
                return Err(Error::NonPeriodic(format!(
                    "L(t+1) - L(t) = {:e} at t = {t}, q = {q:?}",
                    shifted - base
                )));
            }
            for i in 0..n {
                let mut qs = q.clone();
                qs[i] += 1.0;
                let shifted = self.value(t, &qs, &v);
                if (shifted - base).abs() > tol {
                    return Err(Error::NonPeriodic(format!(
                        "L(q + e_{i}) - L(q) = {:e} at q = {q:?}",
                        shifted - base
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_metric(metric: &Metric, dim: usize) -> Result<()> {
    let square = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|row| row.len() == dim);
    if !square(&metric.constant) || metric.terms.iter().any(|t| !square(&t.matrix) || t.q_freq.len() != dim) {
        return Err(Error::InvalidParams(format!("metric blocks must be {dim}x{dim}")));
    }
    let sym = |m: &Vec<Vec<f64>>| (0..dim).all(|i| (0..dim).all(|j| (m[i][j] - m[j][i]).abs() <= 1e-14 * (1.0 + m[i][j].abs())));
    if !sym(&metric.constant) || metric.terms.iter().any(|t| !sym(&t.matrix)) {
        return Err(Error::InvalidParams("metric blocks must be symmetric".into()));
    }
    let per = GridSpec::default_for(dim).q_points.max(8);
    let total = per.pow(dim as u32);
    for idx in 0..total {
        let mut rem = idx;
        let q: Vec<f64> = (0..dim)
            .map(|_| {
                let c = rem % per;
                rem /= per;
                c as f64 / per as f64
            })
            .collect();
        let eig = metric.at(&q).symmetric_eigenvalues().min();
        if !(eig > 0.0) {
            return Err(Error::MetricNotPositive { q, eigenvalue: eig });
        }
    }
    Ok(())
}
