//! Domain geometry: balls, boundary charts, chart boxes, sphere partitions,
//! and deterministic probe-point constructions.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("ball radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("point lies outside the chart range |y~| < {range}, got |y~| = {got}")]
    OutOfChart { range: f64, got: f64 },
    #[error("chart base point must lie on the sphere: |Q - center| = {got}, radius = {radius}")]
    BaseNotOnSphere { got: f64, radius: f64 },
    #[error("dimension must be at least 3, got {0}")]
    BadDimension(usize),
}

// ---------------------------------------------------------------------------
// Small vector helpers. Dimensions are tiny (d = 3 typically), so plain
// slice loops are both clearest and fastest here.
// ---------------------------------------------------------------------------

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Point on the segment `a + t (b - a)` for `t` in `[0, 1]`.
pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

// ---------------------------------------------------------------------------
// Exit domains
// ---------------------------------------------------------------------------

/// A bounded open region a path can exit from.
///
/// `boundary_distance` must be a *lower bound* on the Euclidean distance to
/// the boundary for interior points (used to shorten diffusion steps near the
/// boundary), and nonpositive outside. `project_exit` resolves a detected
/// crossing on the segment `a -> b` (`a` inside, `b` outside or on the
/// boundary) to a point of the boundary together with the segment fraction.
pub trait ExitDomain: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, x: &[f64]) -> bool;
    fn boundary_distance(&self, x: &[f64]) -> f64;
    fn project_exit(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, f64);

    /// Unit direction of the nearest boundary piece at `x` (sign
    /// irrelevant), when the domain has one in closed form. Path samplers
    /// fall back to a spectral bound on the diffusion matrix when this is
    /// `None`.
    fn boundary_normal(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// A boundary point near the closest one to `x` (exact for spheres,
    /// face projection for chart boxes). Used to place within-step exits.
    fn nearest_boundary_point(&self, x: &[f64]) -> Vec<f64>;
}

/// Open ball `B(center, radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallDomain {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallDomain {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self, GeomError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeomError::BadRadius(radius));
        }
        if center.len() < 3 {
            return Err(GeomError::BadDimension(center.len()));
        }
        Ok(Self { center, radius })
    }

    /// `δ_B(x) = radius − |x − center|` (negative outside).
    #[inline]
    pub fn delta(&self, x: &[f64]) -> f64 {
        self.radius - dist(x, &self.center)
    }

    /// Radial projection of `x ≠ center` onto the sphere `∂B`.
    pub fn project_to_sphere(&self, x: &[f64]) -> Vec<f64> {
        let r = dist(x, &self.center);
        if r == 0.0 {
            let mut p = self.center.clone();
            p[0] += self.radius;
            return p;
        }
        let s = self.radius / r;
        self.center
            .iter()
            .zip(x)
            .map(|(c, xi)| c + s * (xi - c))
            .collect()
    }

    /// First intersection of the segment `a -> b` (`|a| < R ≤ |b|` relative
    /// to the center) with the sphere, as `(point, t)`.
    pub fn segment_sphere_crossing(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        // Solve |a + t (b - a) - c|^2 = R^2 for the root in (0, 1].
        let ac = sub(a, &self.center);
        let ab = sub(b, a);
        let aa = norm2(&ab);
        if aa == 0.0 {
            return (self.project_to_sphere(b), 1.0);
        }
        let bb = dot(&ac, &ab);
        let cc = norm2(&ac) - self.radius * self.radius;
        let disc = (bb * bb - aa * cc).max(0.0);
        let t = ((-bb + disc.sqrt()) / aa).clamp(0.0, 1.0);
        let p = lerp(a, b, t);
        (self.project_to_sphere(&p), t)
    }
}

impl ExitDomain for BallDomain {
    fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    fn contains(&self, x: &[f64]) -> bool {
        dist2(x, &self.center) < self.radius * self.radius
    }

    #[inline]
    fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.delta(x)
    }

    fn project_exit(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        self.segment_sphere_crossing(a, b)
    }

    fn boundary_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = dist(x, &self.center);
        if r < 1e-300 {
            return None;
        }
        Some(x.iter().zip(&self.center).map(|(xi, c)| (xi - c) / r).collect())
    }

    fn nearest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        self.project_to_sphere(x)
    }
}

/// Intersection `B1 ∩ B2` of two open balls (used for boundary Harnack
/// geometries `B ∩ B(Q, r)`).
#[derive(Debug, Clone)]
pub struct BallIntersection {
    pub outer: BallDomain,
    pub inner: BallDomain,
}

impl BallIntersection {
    fn nearer_sphere(&self, x: &[f64]) -> &BallDomain {
        if self.outer.delta(x) <= self.inner.delta(x) {
            &self.outer
        } else {
            &self.inner
        }
    }
}

impl ExitDomain for BallIntersection {
    fn dim(&self) -> usize {
        self.outer.dim()
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.outer.contains(x) && self.inner.contains(x)
    }

    fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.outer.delta(x).min(self.inner.delta(x))
    }

    fn project_exit(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for ball in [&self.outer, &self.inner] {
            if !ball.contains(b) {
                let (p, t) = ball.segment_sphere_crossing(a, b);
                if best.as_ref().map(|(_, bt)| t < *bt).unwrap_or(true) {
                    best = Some((p, t));
                }
            }
        }
        best.unwrap_or_else(|| (b.to_vec(), 1.0))
    }

    fn boundary_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.nearer_sphere(x).boundary_normal(x)
    }

    fn nearest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        self.nearer_sphere(x).project_to_sphere(x)
    }
}

// ---------------------------------------------------------------------------
// Boundary charts
// ---------------------------------------------------------------------------

/// Local coordinate system at a boundary point `Q ∈ ∂B`.
///
/// The last coordinate axis is the inward normal at `Q`; the boundary is the
/// graph `y_d = φ(ỹ)` with `φ(ỹ) = R − sqrt(R² − |ỹ|²)`, so `φ(0) = 0` and
/// `∇φ(0) = 0`. The vertical distance
///
/// ```text
///   ρ_Q(y) = y_d − φ(ỹ)
/// ```
///
/// is comparable to `δ_B(y)`: `δ_B ≤ ρ_Q ≤ sqrt(1 + M₁²) · δ_B`, where `M₁`
/// bounds the Lipschitz constant of `∇φ` on the chart range `{|ỹ| < R₁}`.
/// For a sphere the sharp value is `M₁ = R² / (R² − R₁²)^{3/2}`, which this
/// constructor uses; the associated box scale is `r₀ = R₁ / (4 (1 + M₁²))`.
#[derive(Debug, Clone)]
pub struct BoundaryChart {
    pub ball: BallDomain,
    /// Base point `Q` on the sphere.
    pub base: Vec<f64>,
    /// Inward unit normal at `Q` (the chart's last axis).
    pub normal: Vec<f64>,
    /// Orthonormal tangent frame (d − 1 vectors).
    pub tangent: Vec<Vec<f64>>,
    /// Horizontal chart range `R₁`.
    pub r1: f64,
    /// Lipschitz bound for `∇φ` on the chart range.
    pub m1: f64,
    /// Box scale `r₀ = R₁ / (4 (1 + M₁²))`.
    pub r0: f64,
}

impl BoundaryChart {
    /// Build the chart at `q` with the default horizontal range `R₁ = R/8`.
    pub fn new(ball: &BallDomain, q: &[f64]) -> Result<Self, GeomError> {
        Self::with_range(ball, q, ball.radius / 8.0)
    }

    pub fn with_range(ball: &BallDomain, q: &[f64], r1: f64) -> Result<Self, GeomError> {
        let r = ball.radius;
        let on_sphere = dist(q, &ball.center);
        if (on_sphere - r).abs() > 1e-9 * r {
            return Err(GeomError::BaseNotOnSphere {
                got: on_sphere,
                radius: r,
            });
        }
        if !(r1 > 0.0 && r1 < r) {
            return Err(GeomError::BadRadius(r1));
        }
        let d = ball.center.len();
        let mut normal: Vec<f64> = ball
            .center
            .iter()
            .zip(q)
            .map(|(c, qi)| (c - qi) / on_sphere)
            .collect();
        let nn = norm(&normal);
        for v in normal.iter_mut() {
            *v /= nn;
        }
        // Deterministic tangent frame: Gram-Schmidt the coordinate axes,
        // skipping the axis most parallel to the normal.
        let skip = (0..d)
            .max_by(|&i, &j| normal[i].abs().partial_cmp(&normal[j].abs()).unwrap())
            .unwrap();
        let mut tangent: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
        for axis in 0..d {
            if axis == skip {
                continue;
            }
            let mut v = vec![0.0; d];
            v[axis] = 1.0;
            let vn = dot(&v, &normal);
            for i in 0..d {
                v[i] -= vn * normal[i];
            }
            for t in &tangent {
                let vt = dot(&v, t);
                for i in 0..d {
                    v[i] -= vt * t[i];
                }
            }
            let vn = norm(&v);
            for x in v.iter_mut() {
                *x /= vn;
            }
            tangent.push(v);
        }
        // Sharp Lipschitz constant of ∇φ for a sphere graph over {|ỹ| ≤ R₁}:
        // the largest Hessian eigenvalue, R² / (R² − R₁²)^{3/2}.
        let m1 = r * r / (r * r - r1 * r1).powf(1.5);
        let r0 = r1 / (4.0 * (1.0 + m1 * m1));
        Ok(Self {
            ball: ball.clone(),
            base: q.to_vec(),
            normal,
            tangent,
            r1,
            m1,
            r0,
        })
    }

    /// Chart coordinates `(ỹ, y_d)` of a global point.
    pub fn to_chart(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let rel = sub(y, &self.base);
        let tilde = self.tangent.iter().map(|t| dot(&rel, t)).collect();
        (tilde, dot(&rel, &self.normal))
    }

    /// Global point from chart coordinates.
    pub fn from_chart(&self, tilde: &[f64], yd: f64) -> Vec<f64> {
        let d = self.base.len();
        let mut y = self.base.clone();
        for i in 0..d {
            y[i] += yd * self.normal[i];
            for (k, t) in self.tangent.iter().enumerate() {
                y[i] += tilde[k] * t[i];
            }
        }
        y
    }

    /// Boundary graph height `φ(ỹ) = R − sqrt(R² − |ỹ|²)`.
    #[inline]
    pub fn phi(&self, tilde_norm2: f64) -> f64 {
        let r = self.ball.radius;
        r - (r * r - tilde_norm2).max(0.0).sqrt()
    }

    /// Vertical boundary distance `ρ_Q(y) = y_d − φ(ỹ)`.
    ///
    /// Errors with `OutOfChart` when `|ỹ| ≥ R₁`.
    pub fn rho(&self, y: &[f64]) -> Result<f64, GeomError> {
        let (tilde, yd) = self.to_chart(y);
        let t2 = norm2(&tilde);
        if t2 >= self.r1 * self.r1 {
            return Err(GeomError::OutOfChart {
                range: self.r1,
                got: t2.sqrt(),
            });
        }
        Ok(yd - self.phi(t2))
    }

    /// Upper bound for `|∇φ|` on the chart range.
    #[inline]
    pub fn grad_bound(&self) -> f64 {
        let r = self.ball.radius;
        self.r1 / (r * r - self.r1 * self.r1).sqrt()
    }

    /// Point on the inward normal with `ρ_Q = depth` (i.e. `Q + depth·n`).
    pub fn normal_point(&self, depth: f64) -> Vec<f64> {
        add_scaled(&self.base, depth, &self.normal)
    }

    /// The box `D_Q(r1, r2) = { y ∈ B : 0 < ρ_Q(y) < r1, |ỹ| < r2 }`.
    pub fn boxed(&self, height: f64, width: f64) -> ChartBox<'_> {
        ChartBox {
            chart: self,
            height,
            width,
        }
    }
}

/// Chart box `D_Q(height, width)`; see [`BoundaryChart::boxed`].
#[derive(Debug, Clone)]
pub struct ChartBox<'a> {
    pub chart: &'a BoundaryChart,
    pub height: f64,
    pub width: f64,
}

impl ChartBox<'_> {
    /// Membership that also works for points outside the chart range.
    fn classify(&self, x: &[f64]) -> Option<(f64, f64)> {
        let (tilde, yd) = self.chart.to_chart(x);
        let t2 = norm2(&tilde);
        if t2 >= self.chart.r1 * self.chart.r1 {
            return None;
        }
        Some((t2.sqrt(), yd - self.chart.phi(t2)))
    }
}

impl ExitDomain for ChartBox<'_> {
    fn dim(&self) -> usize {
        self.chart.base.len()
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self.classify(x) {
            Some((tn, rho)) => {
                rho > 0.0 && rho < self.height && tn < self.width && self.chart.ball.contains(x)
            }
            None => false,
        }
    }

    fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self.classify(x) {
            Some((tn, rho)) => {
                // Vertical gaps shrink by the graph slope factor; the side
                // cylinder distance is exact in the tangent projection.
                let s = (1.0 + self.chart.grad_bound().powi(2)).sqrt();
                (rho / s)
                    .min((self.height - rho) / s)
                    .min(self.width - tn)
            }
            None => -1.0,
        }
    }

    fn project_exit(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        // Bisect the crossing time; the box faces are smooth surfaces so a
        // fixed number of bisections resolves the exit ray far below the
        // other numerical tolerances in play.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.contains(&lerp(a, b, mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 {
                break;
            }
        }
        (lerp(a, b, hi), hi)
    }

    fn nearest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        let (tilde, yd) = self.chart.to_chart(x);
        let t2 = norm2(&tilde);
        let tn = t2.sqrt();
        if tn >= self.chart.r1 {
            return self.chart.ball.project_to_sphere(x);
        }
        let phi = self.chart.phi(t2);
        let rho = yd - phi;
        let s = (1.0 + self.chart.grad_bound().powi(2)).sqrt();
        let gaps = [rho / s, (self.height - rho) / s, self.width - tn];
        let face = (0..3)
            .min_by(|&i, &j| gaps[i].partial_cmp(&gaps[j]).unwrap())
            .unwrap();
        match face {
            0 => self.chart.from_chart(&tilde, phi),
            1 => self.chart.from_chart(&tilde, phi + self.height),
            _ => {
                let scale = if tn > 0.0 { self.width / tn } else { 1.0 };
                let side: Vec<f64> = tilde.iter().map(|t| t * scale).collect();
                self.chart.from_chart(&side, yd)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic probe points
// ---------------------------------------------------------------------------

/// Van der Corput radical inverse in the given base (Halton component).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `count` low-discrepancy points in the open ball, deterministic in `salt`.
pub fn halton_points_in_ball(ball: &BallDomain, count: usize, salt: u64) -> Vec<Vec<f64>> {
    let d = ball.center.len();
    assert!(d <= HALTON_BASES.len(), "probe construction supports d <= 8");
    let mut out = Vec::with_capacity(count);
    // distinct salts jump to far-apart stretches of the sequence, so the
    // point sets they draw are disjoint rather than shifted copies
    let mut idx = salt * (1 << 24) + 1;
    while out.len() < count {
        let p: Vec<f64> = (0..d)
            .map(|k| {
                ball.center[k] + ball.radius * (2.0 * radical_inverse(idx, HALTON_BASES[k]) - 1.0)
            })
            .collect();
        idx += 1;
        if dist(&p, &ball.center) < ball.radius * 0.999 {
            out.push(p);
        }
    }
    out
}

/// All points of the axis lattice `center + spacing·Z^d` within the *closed*
/// ball; covers `B̄` with cells of side `spacing`.
pub fn lattice_in_ball(ball: &BallDomain, spacing: f64) -> Vec<Vec<f64>> {
    let d = ball.center.len();
    let m = (ball.radius / spacing).ceil() as i64;
    let mut idx = vec![-m; d];
    let mut out = Vec::new();
    loop {
        let p: Vec<f64> = (0..d)
            .map(|k| ball.center[k] + spacing * idx[k] as f64)
            .collect();
        if dist(&p, &ball.center) <= ball.radius {
            out.push(p);
        }
        // odometer increment
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] <= m {
                break;
            }
            idx[k] = -m;
            k += 1;
            if k == d {
                return out;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Equal-solid-angle sphere partition
// ---------------------------------------------------------------------------

/// Partition of the unit sphere `S^{d−1}` into `bands × sectors` cells of
/// equal solid angle. Bands slice the last coordinate `t = x_d/|x|` at
/// equal-measure quantiles (uniform in `t` for d = 3); sectors split the
/// azimuth of the first two coordinates and require `d = 3`.
#[derive(Debug, Clone)]
pub struct SpherePartition {
    pub d: usize,
    pub bands: usize,
    pub sectors: usize,
    /// Quantile edges of the last coordinate, length `bands + 1`, from −1 to 1.
    pub band_edges: Vec<f64>,
}

impl SpherePartition {
    pub fn new(d: usize, bands: usize, sectors: usize) -> Self {
        assert!(bands >= 1 && sectors >= 1);
        assert!(
            sectors == 1 || d == 3,
            "azimuthal sectors are only defined for d = 3"
        );
        let band_edges = if d == 3 {
            // marginal of t on S² is uniform
            (0..=bands)
                .map(|i| -1.0 + 2.0 * i as f64 / bands as f64)
                .collect()
        } else {
            // marginal density ∝ (1 − t²)^{(d−3)/2}; invert its CDF by bisection
            let dens = |t: f64| (1.0 - t * t).max(0.0).powf((d as f64 - 3.0) / 2.0);
            let total = crate::quad::adaptive_simpson(&dens, -1.0, 1.0, 1e-12, 40);
            (0..=bands)
                .map(|i| {
                    if i == 0 {
                        return -1.0;
                    }
                    if i == bands {
                        return 1.0;
                    }
                    let target = total * i as f64 / bands as f64;
                    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if crate::quad::adaptive_simpson(&dens, -1.0, mid, 1e-12, 40) < target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                })
                .collect()
        };
        Self {
            d,
            bands,
            sectors,
            band_edges,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.bands * self.sectors
    }

    /// Cell index of a nonzero direction vector.
    pub fn cell_of(&self, v: &[f64]) -> usize {
        let t = v[self.d - 1] / norm(v);
        let mut band = self.bands - 1;
        for i in 0..self.bands {
            if t < self.band_edges[i + 1] {
                band = i;
                break;
            }
        }
        let sector = if self.sectors == 1 {
            0
        } else {
            let az = v[1].atan2(v[0]); // in (−π, π]
            let frac = (az + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            ((frac * self.sectors as f64) as usize).min(self.sectors - 1)
        };
        band * self.sectors + sector
    }

    /// `m × m` equal-area stratified directions inside a cell: midpoints
    /// of an `m × m` equal-area split of its band/sector rectangle. For
    /// `d = 3` the surface measure is exactly `dt·dφ`, so the points get
    /// equal weights; with `m = 1` this is the representative. Falls back
    /// to the representative alone when there is no azimuthal structure.
    pub fn stratified_directions(&self, cell: usize, m: usize) -> Vec<Vec<f64>> {
        if self.d != 3 || self.sectors == 1 || m == 1 {
            return vec![self.representative(cell)];
        }
        let band = cell / self.sectors;
        let sector = cell % self.sectors;
        let (t0, t1) = (self.band_edges[band], self.band_edges[band + 1]);
        let az0 = -std::f64::consts::PI
            + 2.0 * std::f64::consts::PI * sector as f64 / self.sectors as f64;
        let daz = 2.0 * std::f64::consts::PI / self.sectors as f64;
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            let t = t0 + (t1 - t0) * (2 * i + 1) as f64 / (2 * m) as f64;
            let s = (1.0 - t * t).max(0.0).sqrt();
            for j in 0..m {
                let az = az0 + daz * (2 * j + 1) as f64 / (2 * m) as f64;
                out.push(vec![s * az.cos(), s * az.sin(), t]);
            }
        }
        out
    }

    /// Representative unit vector of a cell (band/sector midpoint).
    pub fn representative(&self, cell: usize) -> Vec<f64> {
        let band = cell / self.sectors;
        let sector = cell % self.sectors;
        let t = 0.5 * (self.band_edges[band] + self.band_edges[band + 1]);
        let mut v = vec![0.0; self.d];
        let s = (1.0 - t * t).max(0.0).sqrt();
        if self.d == 3 {
            let az = -std::f64::consts::PI
                + 2.0 * std::f64::consts::PI * (sector as f64 + 0.5) / self.sectors as f64;
            v[0] = s * az.cos();
            v[1] = s * az.sin();
        } else {
            v[0] = s;
        }
        v[self.d - 1] = t;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_delta_and_projection() {
        let b = BallDomain::new(vec![1.0, 0.0, 0.0], 2.0).unwrap();
        assert!((b.delta(&[1.0, 0.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((b.delta(&[2.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        let p = b.project_to_sphere(&[1.0, 0.5, 0.0]);
        assert!((dist(&p, &b.center) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_boundary_point_and_normal() {
        let ball = BallDomain::new(vec![0.0; 3], 0.4).unwrap();
        let x = [0.3, 0.0, 0.0];
        let nb = ball.nearest_boundary_point(&x);
        assert!(dist(&nb, &[0.4, 0.0, 0.0]) < 1e-12);
        let n = ball.boundary_normal(&x).unwrap();
        assert!((n[0] - 1.0).abs() < 1e-12 && n[1].abs() < 1e-15);

        // lens: point closer to the inner sphere projects onto it
        let lens = BallIntersection {
            outer: ball.clone(),
            inner: BallDomain::new(vec![0.35, 0.0, 0.0], 0.2).unwrap(),
        };
        let y = [0.25, 0.02, 0.0];
        let nb = lens.nearest_boundary_point(&y);
        assert!((dist(&nb, &lens.inner.center) - 0.2).abs() < 1e-12);

        // chart box: a point just above the graph face lands back on it
        let chart = BoundaryChart::new(&ball, &[0.0, 0.0, -0.4]).unwrap();
        let boxed = chart.boxed(chart.r0, chart.r0);
        let inner_pt = chart.from_chart(&[0.0004, -0.0003], chart.phi(2.5e-7) + 1e-4);
        assert!(boxed.contains(&inner_pt));
        let nb = boxed.nearest_boundary_point(&inner_pt);
        assert!(!boxed.contains(&nb));
        assert!(dist(&nb, &inner_pt) < 3e-4);
        assert!((dist(&nb, &ball.center) - 0.4).abs() < 1e-9, "bottom face is the sphere");
    }

    #[test]
    fn segment_crossing_lands_on_sphere() {
        let b = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let a = [0.2, 0.1, 0.0];
        let c = [1.5, 0.3, 0.0];
        let (p, t) = b.segment_sphere_crossing(&a, &c);
        assert!((norm(&p) - 1.0).abs() < 1e-12);
        assert!(t > 0.0 && t < 1.0);
        // the crossing point is on the segment
        let q = lerp(&a, &c, t);
        assert!(dist(&p, &q) < 1e-9);
    }

    #[test]
    fn chart_rho_matches_explicit_sphere_graph() {
        // Unit ball, base point Q = (0, 0, −1); a point with chart
        // coordinates ỹ = (0.1, 0) at Euclidean depth δ_B = 0.05.
        let b = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let chart = BoundaryChart::new(&b, &[0.0, 0.0, -1.0]).unwrap();
        let zd = -(0.95f64 * 0.95 - 0.01).sqrt();
        let y = [0.1, 0.0, zd];
        assert!((b.delta(&y) - 0.05).abs() < 1e-12);
        let rho = chart.rho(&y).unwrap();
        let expect = (zd + 1.0) - (1.0 - (1.0f64 - 0.01).sqrt());
        assert!((rho - expect).abs() < 1e-12, "rho {rho} vs {expect}");
    }

    #[test]
    fn rho_is_comparable_to_delta() {
        // δ_B ≤ ρ_Q ≤ sqrt(1 + M₁²)·δ_B on the chart range.
        let b = BallDomain::new(vec![0.0; 3], 0.4).unwrap();
        let q = [0.4, 0.0, 0.0];
        let chart = BoundaryChart::new(&b, &q).unwrap();
        let s = (1.0 + chart.m1 * chart.m1).sqrt();
        for i in 0..200 {
            let tx = (radical_inverse(i + 1, 2) - 0.5) * 2.0 * chart.r1 * 0.95;
            let ty = (radical_inverse(i + 1, 3) - 0.5) * 2.0 * chart.r1 * 0.95;
            if tx * tx + ty * ty >= (0.95 * chart.r1).powi(2) {
                continue;
            }
            let depth = radical_inverse(i + 1, 5) * 0.05 + 1e-4;
            let y = chart.from_chart(&[tx, ty], chart.phi(tx * tx + ty * ty) + depth);
            if !b.contains(&y) {
                continue;
            }
            let rho = chart.rho(&y).unwrap();
            let delta = b.delta(&y);
            assert!(rho >= delta - 1e-12, "rho {rho} < delta {delta}");
            assert!(rho <= s * delta + 1e-12, "rho {rho} > {s}·delta {delta}");
        }
    }

    #[test]
    fn gradient_lipschitz_bound_holds_at_sampled_pairs() {
        let b = BallDomain::new(vec![0.0; 3], 0.4).unwrap();
        let chart = BoundaryChart::new(&b, &[0.0, 0.0, -0.4]).unwrap();
        let grad = |t: &[f64]| {
            let t2 = norm2(t);
            let s = (b.radius * b.radius - t2).sqrt();
            [t[0] / s, t[1] / s]
        };
        for i in 0..200u64 {
            let r1 = chart.r1 * 0.999;
            let u = [
                (radical_inverse(i + 1, 2) - 0.5) * r1,
                (radical_inverse(i + 1, 3) - 0.5) * r1,
            ];
            let v = [
                (radical_inverse(i + 7, 5) - 0.5) * r1,
                (radical_inverse(i + 7, 7) - 0.5) * r1,
            ];
            if norm2(&u) >= r1 * r1 || norm2(&v) >= r1 * r1 {
                continue;
            }
            let gu = grad(&u);
            let gv = grad(&v);
            let dg = ((gu[0] - gv[0]).powi(2) + (gu[1] - gv[1]).powi(2)).sqrt();
            let duv = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
            assert!(dg <= chart.m1 * duv + 1e-12);
        }
    }

    #[test]
    fn chart_rejects_out_of_range_points() {
        let b = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let chart = BoundaryChart::new(&b, &[0.0, 0.0, -1.0]).unwrap();
        let y = [0.5, 0.0, -0.7];
        assert!(matches!(chart.rho(&y), Err(GeomError::OutOfChart { .. })));
    }

    #[test]
    fn chart_box_membership_and_distance() {
        let b = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let chart = BoundaryChart::new(&b, &[0.0, 0.0, -1.0]).unwrap();
        let bx = chart.boxed(0.02, 0.05);
        let inside = chart.normal_point(0.01);
        assert!(bx.contains(&inside));
        assert!(bx.boundary_distance(&inside) > 0.0);
        assert!(!bx.contains(&chart.normal_point(0.03)));
        assert!(!bx.contains(&chart.from_chart(&[0.06, 0.0], 0.01)));
        // exit projection ends on the box boundary
        let out = chart.normal_point(0.05);
        let (p, t) = bx.project_exit(&inside, &out);
        assert!(t > 0.0 && t <= 1.0);
        let rho = chart.rho(&p).unwrap();
        assert!((rho - 0.02).abs() < 1e-6, "exit rho {rho}");
    }

    #[test]
    fn sphere_partition_equal_area_d3() {
        let p = SpherePartition::new(3, 3, 4);
        assert_eq!(p.n_cells(), 12);
        // representatives land in their own cells
        for c in 0..12 {
            let v = p.representative(c);
            assert_eq!(p.cell_of(&v), c);
        }
    }

    #[test]
    fn lattice_covers_closed_ball() {
        let b = BallDomain::new(vec![0.0; 3], 0.25).unwrap();
        let pts = lattice_in_ball(&b, 0.25 / 4.0);
        assert!(pts.iter().any(|p| norm(p) == 0.0));
        for p in &pts {
            assert!(norm(p) <= 0.25 + 1e-12);
        }
        // spacing r/4 over B̄(0, r): every point of the ball is within
        // (spacing·sqrt(3)/2) of some lattice node
        assert!(pts.len() > 250);
    }
}
