//! Shortening deformation onto broken loops, and the Bangert homotopy for
//! one-parameter families of loops.
//!
//! Loops here are piecewise linear in lifted coordinates with arbitrary
//! knots, so that concatenation and reparametrization are exact.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::broken::{minimal_image, BrokenLoop};
use crate::error::{Error, Result};
use crate::lagrangian::LagrangianSpec;
use crate::flow::{integrate_el, PhaseState};
use crate::segment::{minimize_segment, Segment, UniquenessRadii};

const GAUSS: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// ∫_a^b L along a piecewise-linear curve, three-point Gauss per piece.
fn pl_integral(spec: &LagrangianSpec, times: &[f64], points: &[DVector<f64>], a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len().saturating_sub(1) {
        let (t0, t1) = (times[i], times[i + 1]);
        let (lo, hi) = (t0.max(a), t1.min(b));
        if t1 <= t0 || hi <= lo {
            continue;
        }
        let v = (&points[i + 1] - &points[i]) / (t1 - t0);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in GAUSS {
            let t = mid + half * x;
            let q = &points[i] + &v * (t - t0);
            total += w * half * spec.value(t, q.as_slice(), v.as_slice());
        }
    }
    total
}

/// Knots and lifted points of a piecewise-linear curve.
#[derive(Clone, Debug)]
struct Curve {
    times: Vec<f64>,
    points: Vec<DVector<f64>>,
}

impl Curve {
    fn eval(&self, t: f64) -> DVector<f64> {
        let last = self.times.len() - 1;
        let i = self.times.partition_point(|&s| s <= t).clamp(1, last);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        if t1 <= t0 {
            return self.points[i].clone();
        }
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        &self.points[i - 1] * (1.0 - w) + &self.points[i] * w
    }

    fn length(&self) -> f64 {
        self.points.windows(2).map(|p| (&p[1] - &p[0]).norm()).sum()
    }

    fn max_speed(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 1..self.times.len() {
            let dt = self.times[i] - self.times[i - 1];
            if dt > 0.0 {
                best = best.max((&self.points[i] - &self.points[i - 1]).norm() / dt);
            }
        }
        best
    }
}

/// A closed loop of integer period, piecewise linear between knots.
#[derive(Clone, Debug)]
pub struct SampledLoop {
    pub period: usize,
    /// Knot times, non-decreasing from 0 to `period`.
    pub times: Vec<f64>,
    /// Lifted positions at the knots. The last point is the first plus the
    /// winding translation.
    pub points: Vec<DVector<f64>>,
    /// Mean action (1/τ)∫L.
    pub action: f64,
}

impl SampledLoop {
    /// Uniform samples at times i·τ/m, lifted by minimal-image steps.
    pub fn from_samples(spec: &LagrangianSpec, period: usize, samples: &[DVector<f64>]) -> Result<Self> {
        let m = samples.len();
        if period == 0 || m < 2 {
            return Err(Error::InvalidParams("a sampled loop needs a positive period and at least two samples".into()));
        }
        let mut points = vec![samples[0].clone()];
        for i in 1..=m {
            let prev = &points[i - 1];
            let step = minimal_image(&(&samples[i % m] - prev));
            points.push(prev + step);
        }
        let times = (0..=m).map(|i| period as f64 * i as f64 / m as f64).collect();
        Self::from_knots(spec, period, times, points)
    }

    /// Samples f at m uniform times on [0, τ).
    pub fn from_fn(spec: &LagrangianSpec, period: usize, m: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let samples: Vec<_> = (0..m).map(|i| f(period as f64 * i as f64 / m as f64)).collect();
        Self::from_samples(spec, period, &samples)
    }

    pub fn from_knots(spec: &LagrangianSpec, period: usize, times: Vec<f64>, points: Vec<DVector<f64>>) -> Result<Self> {
        let tau = period as f64;
        if times.len() != points.len() || times.len() < 2 {
            return Err(Error::InvalidParams("knot times and points must match and number at least two".into()));
        }
        if times[0] != 0.0 || (times[times.len() - 1] - tau).abs() > 1e-12 * tau.max(1.0) {
            return Err(Error::InvalidParams(format!("knots must run from 0 to the period {period}")));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParams("knot times must be non-decreasing".into()));
        }
        if points.iter().any(|p| p.len() != spec.dim()) {
            return Err(Error::InvalidParams("loop dimension does not match the Lagrangian".into()));
        }
        let action = pl_integral(spec, &times, &points, 0.0, tau) / tau;
        if !action.is_finite() {
            return Err(Error::InvalidParams("loop action is not finite".into()));
        }
        Ok(SampledLoop { period, times, points, action })
    }

    /// The broken curve resampled densely, carrying its exact action.
    pub fn from_broken(loop_: &BrokenLoop) -> Result<Self> {
        let mut times = vec![0.0];
        let mut points = vec![loop_.nodes[0].clone()];
        for seg in &loop_.segments {
            let offset = &points[points.len() - 1] - &seg.q0;
            for (t, q) in dense_samples(loop_.spec(), seg)?.into_iter().skip(1) {
                times.push(t);
                points.push(q + &offset);
            }
        }
        *times.last_mut().expect("nonempty") = loop_.period as f64;
        // The glued curve closes up to the winding translation.
        let shift = DVector::from_iterator(loop_.dim(), loop_.winding.iter().map(|&w| w as f64));
        let closing = &points[0] + shift;
        *points.last_mut().expect("nonempty") = closing;
        Ok(SampledLoop { period: loop_.period, times, points, action: loop_.mean_action })
    }

    fn curve(&self) -> Curve {
        Curve { times: self.times.clone(), points: self.points.clone() }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn winding(&self) -> Vec<i64> {
        (&self.points[self.points.len() - 1] - &self.points[0]).iter().map(|x| x.round() as i64).collect()
    }

    pub fn is_contractible(&self) -> bool {
        self.winding().iter().all(|&w| w == 0)
    }

    /// Position at time t ∈ [0, τ] (lifted).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        Curve { times: self.times.clone(), points: self.points.clone() }.eval(t)
    }

    pub fn max_speed(&self) -> f64 {
        self.curve().max_speed()
    }

    /// Total action ∫_0^τ L.
    pub fn total_action(&self) -> f64 {
        self.action * self.period as f64
    }

    /// n copies end to end, period nτ. For 1-periodic L the mean action is
    /// unchanged.
    pub fn iterate(&self, n: usize) -> Self {
        let c = iterate_curve(&self.curve(), self.period as f64, n);
        SampledLoop { period: self.period * n, times: c.times, points: c.points, action: self.action }
    }
}

/// Knots per segment when a minimizer is embedded in a sampled loop.
const DENSE_STEPS: usize = 128;

fn dense_samples(spec: &LagrangianSpec, seg: &Segment) -> Result<Vec<(f64, DVector<f64>)>> {
    let start = PhaseState { q: seg.q0.clone(), v: seg.v0.clone() };
    let tr = integrate_el(spec, &start, seg.t0, seg.t1, DENSE_STEPS)?;
    let mut out: Vec<_> = tr.samples.into_iter().map(|(t, s)| (t, s.q)).collect();
    // Pin the end to the prescribed node.
    if let Some(last) = out.last_mut() {
        last.1 = seg.q1.clone();
    }
    Ok(out)
}

fn iterate_curve(c: &Curve, tau: f64, n: usize) -> Curve {
    let mut chain = Chain::new(c.points[0].clone());
    let piece = Piece::from_loop(c, tau);
    for _ in 0..n {
        chain.append(&piece, tau);
    }
    chain.finish(n as f64 * tau)
}

/// Node positions at h/k, lifted along the loop, h = 0..=τk.
fn lifted_nodes(loop_: &SampledLoop, k: usize) -> Vec<DVector<f64>> {
    (0..=loop_.period * k).map(|h| loop_.eval(h as f64 / k as f64)).collect()
}

fn check_spacing(radii: &UniquenessRadii, loop_: &SampledLoop, k: usize, lifted: &[DVector<f64>]) -> Result<()> {
    let m = lifted.len() - 1;
    for h in 0..m {
        let d = (&lifted[h + 1] - &lifted[h]).norm();
        if d >= radii.rho0 {
            let fallback = (k as f64 * d / radii.rho0).floor() as usize + 1;
            return Err(Error::Spacing {
                index: h,
                next: (h + 1) % m,
                distance: d,
                bound: radii.rho0,
                required_k: radii.required_k(loop_.total_action(), loop_.period).or(Some(fallback)),
            });
        }
    }
    Ok(())
}

/// The retraction onto broken loops: minimizers between the samples at h/k.
pub fn shorten(spec: &LagrangianSpec, radii: &UniquenessRadii, loop_: &SampledLoop, k: usize) -> Result<BrokenLoop> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be positive".into()));
    }
    let mut lifted = lifted_nodes(loop_, k);
    check_spacing(radii, loop_, k, &lifted)?;
    lifted.pop();
    BrokenLoop::from_nodes(spec, radii, loop_.period, k, lifted)
}

/// R(s, ζ): minimizers up to the last node time before sτ, a minimizer from
/// there to ζ(sτ), then ζ itself. The reported action sums the segment
/// actions and the integral of L along the untouched tail.
pub fn shorten_homotopy(
    spec: &LagrangianSpec,
    radii: &UniquenessRadii,
    loop_: &SampledLoop,
    k: usize,
    s: f64,
) -> Result<SampledLoop> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be positive".into()));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParams(format!("homotopy parameter {s} not in [0, 1]")));
    }
    let lifted = lifted_nodes(loop_, k);
    check_spacing(radii, loop_, k, &lifted)?;
    if s == 0.0 {
        return Ok(loop_.clone());
    }
    let tau = loop_.period as f64;
    let m = loop_.period * k;
    let kf = k as f64;
    let ts = s * tau;
    let z = ts * kf;
    let full = if (z - z.round()).abs() < 1e-9 { z.round() as usize } else { z.floor() as usize }.min(m);
    let mut segments = (0..full)
        .into_par_iter()
        .map(|h| minimize_segment(spec, h as f64 / kf, (h + 1) as f64 / kf, &lifted[h], &lifted[h + 1], radii))
        .collect::<Result<Vec<_>>>()?;
    let start = full as f64 / kf;
    if full < m && ts - start > 1e-12 {
        segments.push(minimize_segment(spec, start, ts, &lifted[full], &loop_.eval(ts), radii)?);
    }
    let end = segments.last().map_or(0.0, |s| s.t1);
    let mut times = vec![0.0];
    let mut points = vec![lifted[0].clone()];
    for seg in &segments {
        for (t, q) in dense_samples(spec, seg)?.into_iter().skip(1) {
            times.push(t);
            points.push(q);
        }
    }
    let mut integral: f64 = segments.iter().map(|s| s.action).sum();
    if end < tau {
        // The last segment ends at ζ(end); continue along ζ.
        *points.last_mut().expect("nonempty") = loop_.eval(end);
        for (t, p) in loop_.times.iter().zip(&loop_.points) {
            if *t > end {
                times.push(*t);
                points.push(p.clone());
            }
        }
        integral += pl_integral(spec, &loop_.times, &loop_.points, end, tau);
    }
    *times.last_mut().expect("nonempty") = tau;
    Ok(SampledLoop { period: loop_.period, times, points, action: integral / tau })
}

/// A continuous family θ: [x0, x1] → loops, sampled on a uniform x-grid.
/// Loops are deck-shifted so that their initial points move continuously.
#[derive(Clone, Debug)]
pub struct LoopPath {
    pub x0: f64,
    pub x1: f64,
    pub samples: Vec<SampledLoop>,
}

impl LoopPath {
    pub fn new(x0: f64, x1: f64, mut samples: Vec<SampledLoop>) -> Result<Self> {
        if !(x1 > x0) || samples.len() < 2 {
            return Err(Error::InvalidParams("a loop path needs x1 > x0 and at least two samples".into()));
        }
        let period = samples[0].period;
        if samples.iter().any(|l| l.period != period) {
            return Err(Error::InvalidParams("loops along a path must share one period".into()));
        }
        if samples.iter().any(|l| !l.is_contractible()) {
            return Err(Error::Bangert("only contractible loops are supported".into()));
        }
        for i in 1..samples.len() {
            let prev = samples[i - 1].points[0].clone();
            let here = &samples[i].points[0];
            let target = &prev + minimal_image(&(here - &prev));
            let shift = (target - here).map(|x| x.round());
            samples[i].points.iter_mut().for_each(|p| *p += &shift);
        }
        Ok(LoopPath { x0, x1, samples })
    }

    /// θ(x)(t) = f(x, t) on `cells + 1` grid points with m samples per loop.
    pub fn from_fn(
        spec: &LagrangianSpec,
        x0: f64,
        x1: f64,
        cells: usize,
        period: usize,
        m: usize,
        f: impl Fn(f64, f64) -> DVector<f64> + Sync,
    ) -> Result<Self> {
        let samples = (0..=cells)
            .into_par_iter()
            .map(|i| {
                let x = x0 + (x1 - x0) * i as f64 / cells.max(1) as f64;
                SampledLoop::from_fn(spec, period, m, |t| f(x, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x0, x1, samples)
    }

    pub fn period(&self) -> usize {
        self.samples[0].period
    }

    pub fn cells(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.cells()).map(|i| self.grid_x(i)).collect()
    }

    fn grid_x(&self, i: usize) -> f64 {
        self.x0 + (self.x1 - self.x0) * i as f64 / self.cells() as f64
    }

    fn spacing(&self) -> f64 {
        (self.x1 - self.x0) / self.cells() as f64
    }

    pub fn endpoint_actions(&self) -> (f64, f64) {
        (self.samples[0].action, self.samples[self.cells()].action)
    }

    /// Cell index and weight for x.
    fn locate(&self, x: f64) -> (usize, f64) {
        let z = ((x - self.x0) / self.spacing()).clamp(0.0, self.cells() as f64);
        let i = (z.floor() as usize).min(self.cells() - 1);
        (i, z - i as f64)
    }

    /// θ(x), linear in x between grid loops.
    fn curve_at(&self, x: f64) -> Curve {
        let (i, w) = self.locate(x);
        if w < 1e-12 {
            return self.samples[i].curve();
        }
        if w > 1.0 - 1e-12 {
            return self.samples[i + 1].curve();
        }
        let (a, b) = (self.samples[i].curve(), self.samples[i + 1].curve());
        let mut times: Vec<f64> = a.times.iter().chain(&b.times).cloned().collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
        let points = times.iter().map(|&t| a.eval(t) * (1.0 - w) + b.eval(t) * w).collect();
        Curve { times, points }
    }

    pub fn loop_at(&self, spec: &LagrangianSpec, x: f64) -> Result<SampledLoop> {
        let c = self.curve_at(x);
        SampledLoop::from_knots(spec, self.period(), c.times, c.points)
    }

    /// Initial point θ(x)(0), lifted.
    fn start_at(&self, x: f64) -> DVector<f64> {
        let (i, w) = self.locate(x);
        &self.samples[i].points[0] * (1.0 - w) + &self.samples[i + 1].points[0] * w
    }

    /// Largest number of grid cells between breakpoints of the horizontal
    /// broken geodesics: every chord over that many cells stays below the
    /// injectivity radius ½ of the flat torus.
    fn breakpoint_stride(&self) -> Result<usize> {
        let starts: Vec<_> = self.samples.iter().map(|l| &l.points[0]).collect();
        for i in 0..self.cells() {
            let d = (starts[i + 1] - starts[i]).norm();
            if d >= 0.25 {
                return Err(Error::Bangert(format!(
                    "initial points move {d:.3} between x = {:.6} and x = {:.6}; sample the path more finely",
                    self.grid_x(i),
                    self.grid_x(i + 1)
                )));
            }
        }
        let mut stride = 1;
        'grow: while stride < self.cells() {
            let r = stride + 1;
            for i in 0..=self.cells() - r {
                if (starts[i + r] - starts[i]).norm() >= 0.5 {
                    break 'grow;
                }
            }
            stride = r;
        }
        Ok(stride)
    }

    /// Broken geodesic of initial points from xa to xb (xa ≤ xb), broken at
    /// grid points that are multiples of the stride.
    fn horizontal(&self, stride: usize, xa: f64, xb: f64) -> Vec<DVector<f64>> {
        let mut pts = vec![self.start_at(xa)];
        let tol = 1e-12 * self.spacing();
        for i in (0..=self.cells()).step_by(stride) {
            let x = self.grid_x(i);
            if x > xa + tol && x < xb - tol {
                pts.push(self.samples[i].points[0].clone());
            }
        }
        if xb > xa {
            pts.push(self.start_at(xb));
        }
        pts
    }
}

/// A moving part: a curve parametrized on [0, 1].
#[derive(Clone, Debug)]
struct Piece {
    rel: Vec<f64>,
    points: Vec<DVector<f64>>,
    length: f64,
    is_loop: bool,
}

impl Piece {
    fn from_loop(c: &Curve, tau: f64) -> Self {
        Piece { rel: c.times.iter().map(|t| t / tau).collect(), points: c.points.clone(), length: c.length(), is_loop: true }
    }

    /// Constant-speed polyline.
    fn from_path(points: Vec<DVector<f64>>) -> Self {
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            cum.push(cum[cum.len() - 1] + (&w[1] - &w[0]).norm());
        }
        let length = cum[cum.len() - 1];
        let n = points.len();
        let rel =
            if length > 0.0 { cum.iter().map(|c| c / length).collect() } else { (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect() };
        Piece { rel, points, length, is_loop: false }
    }

    fn reversed(&self) -> Self {
        Piece {
            rel: self.rel.iter().rev().map(|r| 1.0 - r).collect(),
            points: self.points.iter().rev().cloned().collect(),
            length: self.length,
            is_loop: self.is_loop,
        }
    }
}

struct Chain {
    times: Vec<f64>,
    points: Vec<DVector<f64>>,
}

impl Chain {
    fn new(start: DVector<f64>) -> Self {
        Chain { times: vec![0.0], points: vec![start] }
    }

    fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn append(&mut self, piece: &Piece, duration: f64) {
        if duration <= 0.0 {
            return;
        }
        let t0 = self.end();
        for (r, p) in piece.rel.iter().zip(&piece.points).skip(1) {
            let t = t0 + r * duration;
            if t > self.end() {
                self.times.push(t);
                self.points.push(p.clone());
            }
        }
    }

    fn finish(mut self, total: f64) -> Curve {
        *self.times.last_mut().expect("nonempty") = total;
        Curve { times: self.times, points: self.points }
    }
}

/// The three shapes of θ^((n)) along the phases j = 0, 1..n−2, n−1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    First,
    Middle,
    Last,
}

impl Phase {
    fn of(j: usize, n: usize) -> Self {
        if j == 0 {
            Phase::First
        } else if j + 1 == n {
            Phase::Last
        } else {
            Phase::Middle
        }
    }
}

enum Item {
    Start,
    End,
    Moving(usize),
}

/// Moving parts share the time τ in proportion to their arclength; if they
/// are all points, the traveling loop keeps the whole τ.
fn allocate(pieces: &[Piece], tau: f64) -> Vec<f64> {
    let total: f64 = pieces.iter().map(|p| p.length).sum();
    if total > 1e-14 {
        pieces.iter().map(|p| tau * p.length / total).collect()
    } else {
        let loops = pieces.iter().filter(|p| p.is_loop).count().max(1) as f64;
        pieces.iter().map(|p| if p.is_loop { tau / loops } else { 0.0 }).collect()
    }
}

/// Construction data for θ restricted to [x0, xe].
struct Builder<'a> {
    path: &'a LoopPath,
    stride: usize,
    xe: f64,
}

impl Builder<'_> {
    fn tau(&self) -> f64 {
        self.path.period() as f64
    }

    fn moving(&self, phase: Phase, xu: f64) -> Vec<Piece> {
        let (p, x0, xe, r) = (self.path, self.path.x0, self.xe, self.stride);
        let traveling = Piece::from_loop(&p.curve_at(xu), self.tau());
        match phase {
            Phase::First => {
                let g = Piece::from_path(p.horizontal(r, x0, xu));
                vec![g.clone(), traveling, g.reversed()]
            }
            Phase::Middle => vec![
                Piece::from_path(p.horizontal(r, x0, xu)),
                traveling,
                Piece::from_path(p.horizontal(r, xu, xe)),
                Piece::from_path(p.horizontal(r, x0, xe)).reversed(),
            ],
            Phase::Last => {
                let g = Piece::from_path(p.horizontal(r, xu, xe));
                vec![traveling, g.clone(), g.reversed()]
            }
        }
    }

    fn layout(phase: Phase, n: usize, j: usize) -> Vec<Item> {
        let mut items = Vec::new();
        match phase {
            Phase::First => {
                items.extend((0..n - 1).map(|_| Item::Start));
                items.extend((0..3).map(Item::Moving));
            }
            Phase::Middle => {
                items.extend((0..n - j - 1).map(|_| Item::Start));
                items.extend((0..3).map(Item::Moving));
                items.extend((0..j).map(|_| Item::End));
                items.push(Item::Moving(3));
            }
            Phase::Last => {
                items.extend((0..2).map(Item::Moving));
                items.extend((0..n - 1).map(|_| Item::End));
                items.push(Item::Moving(2));
            }
        }
        items
    }

    /// θ^((n)) at phase j with traveling parameter u ∈ [0, xe − x0].
    fn construct(&self, n: usize, j: usize, u: f64) -> Curve {
        let tau = self.tau();
        let phase = Phase::of(j, n);
        let moving = self.moving(phase, self.path.x0 + u);
        let durations = allocate(&moving, tau);
        let start = Piece::from_loop(&self.path.curve_at(self.path.x0), tau);
        let end = Piece::from_loop(&self.path.curve_at(self.xe), tau);
        let items = Self::layout(phase, n, j);
        let first = match items[0] {
            Item::Start => start.points[0].clone(),
            Item::End => end.points[0].clone(),
            Item::Moving(i) => moving[i].points[0].clone(),
        };
        let mut chain = Chain::new(first);
        for item in &items {
            match item {
                Item::Start => chain.append(&start, tau),
                Item::End => chain.append(&end, tau),
                Item::Moving(i) => chain.append(&moving[*i], durations[*i]),
            }
        }
        chain.finish(n as f64 * tau)
    }

    /// The pulling loop: the moving parts alone, on [0, τ].
    fn pulling(&self, phase: Phase, u: f64) -> Curve {
        let tau = self.tau();
        let moving = self.moving(phase, self.path.x0 + u);
        let durations = allocate(&moving, tau);
        let mut chain = Chain::new(moving[0].points[0].clone());
        for (p, d) in moving.iter().zip(&durations) {
            chain.append(p, *d);
        }
        chain.finish(tau)
    }
}

#[derive(Clone, Debug)]
pub struct BangertRow {
    pub x: f64,
    pub phase: Phase,
    pub u: f64,
    /// Mean action of θ^((n))(x) over its period nτ.
    pub action: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Clone, Debug)]
pub struct BangertResult {
    pub n: usize,
    pub path: LoopPath,
    /// max over pulling loops of their mean action.
    pub c_theta: f64,
    pub max_endpoint_action: f64,
    /// min over x of (max endpoint action + C(θ)/n − A^n(θ^((n))(x))).
    pub bound_slack: f64,
    pub rows: Vec<BangertRow>,
    /// Distance in x between breakpoints of the horizontal broken geodesics.
    pub rho: f64,
    /// How moving parts share their time.
    pub allocation: &'static str,
    spec: LagrangianSpec,
    stride: usize,
}

/// Samples (x, j, u) of the slice at xe = x0 + sD: every phase at the grid
/// offsets, then the grid points beyond xe (where B is the plain iterate).
fn slice_samples(path: &LoopPath, n: usize, s: f64) -> Vec<(f64, Option<(usize, f64)>)> {
    let de = s * (path.x1 - path.x0);
    let g = path.cells();
    let mut out = Vec::new();
    if de > 0.0 && n > 1 {
        for j in 0..n {
            for i in usize::from(j > 0)..=g {
                let u = de * i as f64 / g as f64;
                out.push((path.x0 + (j as f64 * de + u) / n as f64, Some((j, u))));
            }
        }
    } else {
        out.push((path.x0, None));
    }
    let xe = path.x0 + de;
    for x in path.grid() {
        if x > xe + 1e-12 * path.spacing() || (n == 1 && x > path.x0) {
            out.push((x, None));
        }
    }
    out
}

impl BangertResult {
    fn builder(&self, s: f64) -> Builder<'_> {
        Builder { path: &self.path, stride: self.stride, xe: self.path.x0 + s * (self.path.x1 - self.path.x0) }
    }

    fn slice_curve(&self, s: f64, x: f64, ju: Option<(usize, f64)>) -> Curve {
        let tau = self.path.period() as f64;
        match ju {
            Some((j, u)) => self.builder(s).construct(self.n, j, u),
            None => iterate_curve(&self.path.curve_at(x), tau, self.n),
        }
    }

    /// B(s, x): θ^((n)) built on [x0, x0 + sD] where x lies in it, the n-fold
    /// iterate θ(x)^n elsewhere.
    pub fn eval(&self, s: f64, x: f64) -> Result<SampledLoop> {
        if !(0.0..=1.0).contains(&s) || x < self.path.x0 || x > self.path.x1 {
            return Err(Error::InvalidParams(format!("(s, x) = ({s}, {x}) outside the homotopy domain")));
        }
        let de = s * (self.path.x1 - self.path.x0);
        let ju = if self.n > 1 && de > 0.0 && x < self.path.x0 + de {
            let z = self.n as f64 * (x - self.path.x0);
            let j = ((z / de).floor() as usize).min(self.n - 1);
            Some((j, (z - j as f64 * de).clamp(0.0, de)))
        } else {
            None
        };
        let c = self.slice_curve(s, x, ju);
        SampledLoop::from_knots(&self.spec, self.n * self.path.period(), c.times, c.points)
    }

    /// The x-samples used for the slice at s, with each slice loop.
    pub fn slice(&self, s: f64) -> Result<Vec<(f64, SampledLoop)>> {
        let period = self.n * self.path.period();
        slice_samples(&self.path, self.n, s)
            .into_par_iter()
            .map(|(x, ju)| {
                let c = self.slice_curve(s, x, ju);
                Ok((x, SampledLoop::from_knots(&self.spec, period, c.times, c.points)?))
            })
            .collect()
    }

    /// CSV rows s,x,t,q_1..q_N for the slices at `s_values`.
    pub fn write_csv<W: Write>(&self, s_values: &[f64], mut out: W) -> std::io::Result<()> {
        let dim = self.path.samples[0].dim();
        let header: Vec<String> =
            ["s".to_string(), "x".into(), "t".into()].into_iter().chain((1..=dim).map(|i| format!("q_{i}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for &s in s_values {
            for (x, ju) in slice_samples(&self.path, self.n, s) {
                let c = self.slice_curve(s, x, ju);
                for (t, p) in c.times.iter().zip(&c.points) {
                    let q: Vec<String> = p.iter().map(|v| format!("{v:.10}")).collect();
                    writeln!(out, "{s},{x:.10},{t:.10},{}", q.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// Bangert's construction θ^((n)) for a path of loops, with the action
/// estimate A^n(θ^((n))(x)) ≤ max{A(θ(x0)), A(θ(x1))} + C(θ)/n evaluated on
/// every x-sample.
///
/// The estimate relies on the fixed copies and the pulling loop having the
/// same action wherever they sit in time, which holds for autonomous L, and
/// on the endpoint maximum being non-negative.
pub fn bangert(spec: &LagrangianSpec, path: &LoopPath, n: usize) -> Result<BangertResult> {
    if n == 0 {
        return Err(Error::InvalidParams("iteration order must be at least 1".into()));
    }
    if path.samples[0].dim() != spec.dim() {
        return Err(Error::InvalidParams("path dimension does not match the Lagrangian".into()));
    }
    let stride = path.breakpoint_stride()?;
    let period = path.period();
    let tau = period as f64;
    let (a0, a1) = path.endpoint_actions();
    let max_endpoint_action = a0.max(a1);
    let d = path.x1 - path.x0;
    let full = Builder { path, stride, xe: path.x1 };
    let g = path.cells();
    let pulls: Vec<(Phase, f64)> = [Phase::First, Phase::Middle, Phase::Last]
        .into_iter()
        .flat_map(|ph| (0..=g).map(move |i| (ph, d * i as f64 / g as f64)))
        .collect();
    let c_theta = pulls
        .into_par_iter()
        .map(|(ph, u)| {
            let c = full.pulling(ph, u);
            pl_integral(spec, &c.times, &c.points, 0.0, tau) / tau
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let bound = max_endpoint_action + c_theta / n as f64;
    let rows = slice_samples(path, n, 1.0)
        .into_par_iter()
        .map(|(x, ju)| {
            let c = match ju {
                Some((j, u)) => full.construct(n, j, u),
                None => iterate_curve(&path.curve_at(x), tau, n),
            };
            let action = pl_integral(spec, &c.times, &c.points, 0.0, n as f64 * tau) / (n as f64 * tau);
            let (phase, u) = ju.map_or((Phase::First, 0.0), |(j, u)| (Phase::of(j, n), u));
            BangertRow { x, phase, u, action, bound, slack: bound - action }
        })
        .collect::<Vec<_>>();
    let bound_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    Ok(BangertResult {
        n,
        path: path.clone(),
        c_theta,
        max_endpoint_action,
        bound_slack,
        rows,
        rho: stride as f64 * path.spacing(),
        allocation: "arclength",
        spec: spec.clone(),
        stride,
    })
}

/// Max speed over the slices s ∈ {0, ¼, ½, ¾, 1} and their x-samples.
pub fn w1inf_bound(result: &BangertResult) -> f64 {
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .into_par_iter()
        .flat_map(|s| slice_samples(&result.path, result.n, s).into_par_iter().map(move |(x, ju)| (s, x, ju)))
        .map(|(s, x, ju)| result.slice_curve(s, x, ju).max_speed())
        .reduce(|| 0.0, f64::max)
}

/// θ(x) ≡ γ.
pub fn constant_path(gamma: &SampledLoop, cells: usize) -> Result<LoopPath> {
    LoopPath::new(0.0, 1.0, vec![gamma.clone(); cells + 1])
}

/// Constant loops at a point moving `distance` along the first axis.
pub fn moving_point_path(spec: &LagrangianSpec, distance: f64, cells: usize) -> Result<LoopPath> {
    let n = spec.dim();
    LoopPath::from_fn(spec, 0.0, 1.0, cells, 1, 16, |x, _| {
        let mut q = DVector::zeros(n);
        q[0] = distance * x;
        q
    })
}

/// θ(x)(t) = (0.15x + 0.1x sin 2πt) e1: from the constant loop at 0 to a
/// displaced oscillating loop.
pub fn sinusoidal_path(spec: &LagrangianSpec, cells: usize) -> Result<LoopPath> {
    let n = spec.dim();
    LoopPath::from_fn(spec, 0.0, 1.0, cells, 1, 64, |x, t| {
        let mut q = DVector::zeros(n);
        q[0] = 0.15 * x + 0.1 * x * (std::f64::consts::TAU * t).sin();
        q
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn one(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn sinusoid(spec: &LagrangianSpec, m: usize) -> SampledLoop {
        SampledLoop::from_fn(spec, 1, m, |t| one(0.1 * (TAU * t).sin())).unwrap()
    }

    #[test]
    fn sampled_loop_action_and_lift() {
        let spec = LagrangianSpec::free_particle(1);
        // q = 0.9 t wraps once per period when sampled mod 1.
        let samples: Vec<_> = (0..20).map(|i| one((0.9 * i as f64 / 20.0 + 0.95) % 1.0)).collect();
        let l = SampledLoop::from_samples(&spec, 1, &samples).unwrap();
        assert_eq!(l.winding(), vec![1]);
        // A 64-gon inscribed in the sinusoid: ½ Σ |Δq|²·m.
        let l = sinusoid(&spec, 64);
        let chord: f64 = (0..64)
            .map(|i| {
                let d = 0.1 * ((TAU * (i + 1) as f64 / 64.0).sin() - (TAU * i as f64 / 64.0).sin());
                0.5 * d * d * 64.0
            })
            .sum();
        assert!((l.action - chord).abs() < 1e-13);
        assert!(l.action < 0.5 * (0.2 * PI).powi(2) * 0.5);
        assert!((l.iterate(3).action - l.action).abs() < 1e-15);
    }

    #[test]
    fn shorten_free_particle_sinusoid() {
        let spec = LagrangianSpec::free_particle(1);
        let radii = UniquenessRadii::working(0.25, 0.25);
        let l = sinusoid(&spec, 64);
        let b = shorten(&spec, &radii, &l, 8).unwrap();
        // Straight chords between the eight nodes.
        let chord: f64 = (0..8)
            .map(|h| {
                let d = 0.1 * ((TAU * (h + 1) as f64 / 8.0).sin() - (TAU * h as f64 / 8.0).sin());
                0.5 * d * d * 8.0
            })
            .sum();
        assert!((b.mean_action - chord).abs() < 1e-10);
        assert!(b.mean_action < l.action);
    }

    #[test]
    fn shorten_noisy_constant_pendulum() {
        let spec = LagrangianSpec::pendulum();
        let radii = UniquenessRadii::working(0.125, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..64).map(|_| one(0.3 + rng.gen_range(-0.02..0.02))).collect();
        let l = SampledLoop::from_samples(&spec, 1, &samples).unwrap();
        let b = shorten(&spec, &radii, &l, 8).unwrap();
        assert!(b.mean_action < l.action);
        // Each segment beats the sampled loop between the same nodes.
        for (h, seg) in b.segments.iter().enumerate() {
            let piece = pl_integral(&spec, &l.times, &l.points, h as f64 / 8.0, (h + 1) as f64 / 8.0);
            assert!(seg.action <= piece + 1e-12);
        }
        let tr = b.glued_trajectory();
        assert!(tr.samples.iter().all(|(_, s)| (s.q[0] - 0.3).abs() < 0.03));
    }

    #[test]
    fn shorten_is_idempotent_on_broken_loops() {
        let spec = LagrangianSpec::pendulum();
        let radii = UniquenessRadii::working(0.125, 0.25);
        let nodes: Vec<_> = (0..8).map(|h| one(0.2 + 0.05 * (TAU * h as f64 / 8.0).cos())).collect();
        let b = BrokenLoop::from_nodes(&spec, &radii, 1, 8, nodes).unwrap();
        let again = shorten(&spec, &radii, &SampledLoop::from_broken(&b).unwrap(), 8).unwrap();
        assert!((again.mean_action - b.mean_action).abs() < 1e-9);
        for (a, c) in again.nodes.iter().zip(&b.nodes) {
            assert!((a - c).norm() < 1e-12);
        }
        // R(s, ·) fixes broken loops.
        let sl = SampledLoop::from_broken(&b).unwrap();
        for s in [0.3, 0.55, 1.0] {
            let r = shorten_homotopy(&spec, &radii, &sl, 8, s).unwrap();
            assert!((r.action - b.mean_action).abs() < 1e-7, "s = {s}: {}", r.action - b.mean_action);
        }
    }

    #[test]
    fn spacing_error_reports_required_k() {
        let spec = LagrangianSpec::free_particle(1);
        let radii = crate::segment::estimate_radii(&spec).unwrap();
        let l = SampledLoop::from_fn(&spec, 1, 64, |t| one(0.2 * (TAU * t).sin())).unwrap();
        match shorten(&spec, &radii, &l, 20) {
            Err(Error::Spacing { required_k: Some(k), .. }) => {
                let c = l.total_action();
                let cons = radii.constants_used.as_ref().unwrap();
                let expected = ((c + cons.shift) / (radii.rho0 * radii.rho0 * cons.lower)).ceil() as usize;
                assert_eq!(k, expected.max(radii.min_k()));
                assert!(shorten(&spec, &radii, &l, k).is_ok());
            }
            other => panic!("expected a spacing error, got {other:?}"),
        }
    }

    #[test]
    fn homotopy_endpoints_and_monotonicity() {
        for spec in [LagrangianSpec::free_particle(1), LagrangianSpec::pendulum()] {
            let radii = UniquenessRadii::working(0.125, 0.25);
            let l = sinusoid(&spec, 64);
            let r0 = shorten_homotopy(&spec, &radii, &l, 8, 0.0).unwrap();
            assert_eq!(r0.points, l.points);
            let r1 = shorten_homotopy(&spec, &radii, &l, 8, 1.0).unwrap();
            let b = SampledLoop::from_broken(&shorten(&spec, &radii, &l, 8).unwrap()).unwrap();
            assert!((r1.action - b.action).abs() < 1e-12);
            assert_eq!(r1.points.len(), b.points.len());
            assert!(r1.points.iter().zip(&b.points).all(|(p, q)| (p - q).norm() < 1e-12));
            let mut prev = l.action;
            for i in 1..=8 {
                let r = shorten_homotopy(&spec, &radii, &l, 8, i as f64 / 8.0).unwrap();
                assert!(r.action <= prev + 1e-12, "s = {}/8: {} > {}", i, r.action, prev);
                prev = r.action;
            }
        }
    }

    #[test]
    fn homotopy_never_increases_action_off_grid() {
        let spec = LagrangianSpec::pendulum();
        let radii = UniquenessRadii::working(0.125, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (a, b, c) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(0.0..1.0));
            let l = SampledLoop::from_fn(&spec, 1, 96, |t| one(c + a * (TAU * t).sin() + b * (2.0 * TAU * t).cos())).unwrap();
            let s = rng.gen_range(0.0..1.0);
            let r = shorten_homotopy(&spec, &radii, &l, 8, s).unwrap();
            assert!(r.action <= l.action + 1e-12);
        }
    }

    fn pendulum_gamma() -> (LagrangianSpec, SampledLoop) {
        let spec = LagrangianSpec::pendulum();
        let g = SampledLoop::from_fn(&spec, 1, 32, |t| one(0.1 * (TAU * t).sin())).unwrap();
        (spec, g)
    }

    #[test]
    fn bangert_constant_path() {
        let (spec, g) = pendulum_gamma();
        assert!(g.action > 0.0);
        let path = constant_path(&g, 8).unwrap();
        for n in [2, 3, 5] {
            let r = bangert(&spec, &path, n).unwrap();
            assert!((r.c_theta - g.action).abs() < 1e-12);
            assert!((r.bound_slack - g.action / n as f64).abs() < 1e-12);
            assert!((w1inf_bound(&r) - g.max_speed()).abs() < 1e-12);
            let iterate = g.iterate(n);
            for (_, l) in r.slice(0.0).unwrap() {
                assert!((l.action - iterate.action).abs() < 1e-12);
                assert!(l.points.iter().zip(&iterate.points).all(|(p, q)| (p - q).norm() < 1e-14));
            }
        }
    }

    #[test]
    fn bangert_endpoints_fixed() {
        let spec = LagrangianSpec::pendulum();
        let path = sinusoidal_path(&spec, 8).unwrap();
        let r = bangert(&spec, &path, 4).unwrap();
        for x in [path.x0, path.x1] {
            let reference = r.eval(0.0, x).unwrap();
            for s in [0.2, 0.5, 0.9, 1.0] {
                let l = r.eval(s, x).unwrap();
                assert_eq!(l.times, reference.times, "s = {s}, x = {x}");
                assert_eq!(l.points, reference.points);
            }
        }
    }

    #[test]
    fn bangert_moving_point_bound() {
        let spec = LagrangianSpec::pendulum();
        let path = moving_point_path(&spec, 0.2, 16).unwrap();
        // Every pulling loop travels 0.2 out and back in unit time.
        let expected_c = 0.5 * 0.4f64.powi(2) + 0.25 * (0.4 * PI).sin() / (0.4 * PI);
        let mut points = Vec::new();
        for n in [2, 4, 8, 16, 32] {
            let r = bangert(&spec, &path, n).unwrap();
            assert!((r.c_theta - expected_c).abs() < 1e-5, "C = {}", r.c_theta);
            assert!(r.bound_slack >= -1e-9, "n = {n}: slack {}", r.bound_slack);
            assert!((w1inf_bound(&r) - 0.4).abs() < 1e-9);
            let excess = r.rows.iter().map(|row| (row.action - r.max_endpoint_action).max(0.0)).fold(0.0, f64::max);
            points.push((1.0 / n as f64, excess));
        }
        // Least-squares slope of the excess against 1/n.
        let k = points.len() as f64;
        let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / k, points.iter().map(|p| p.1).sum::<f64>() / k);
        let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!(slope >= 0.0 && slope <= 1.1 * expected_c, "slope {slope}");
    }

    #[test]
    fn bangert_sinusoidal_path() {
        let spec = LagrangianSpec::pendulum();
        let path = sinusoidal_path(&spec, 16).unwrap();
        let speeds: Vec<f64> = [2, 4, 8, 16]
            .iter()
            .map(|&n| {
                let r = bangert(&spec, &path, n).unwrap();
                assert!(r.bound_slack >= -1e-9);
                w1inf_bound(&r)
            })
            .collect();
        assert!(speeds.iter().all(|s| s.is_finite()));
        let (lo, hi) = speeds.iter().fold((f64::MAX, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(hi <= 1.05 * lo, "{speeds:?}");
    }

    #[test]
    fn coarse_path_is_rejected() {
        let spec = LagrangianSpec::pendulum();
        let path = moving_point_path(&spec, 0.9, 2).unwrap();
        assert!(matches!(bangert(&spec, &path, 2), Err(Error::Bangert(_))));
    }
}
