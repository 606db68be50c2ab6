//! Closed-form Gaussian-slit recursions: per-plane iterates, coupling vectors
//! and the quadratic-form matrix, plus the kernel and LCT bookkeeping.

use rug::ops::Pow;
use rug::{Complex, Float};

use crate::error::{QpcError, Result};
use crate::numerics::{pi, pow10};
use crate::setup::{derive_schedule, PhysicalConstants, SetupGeometry};

pub type CMatrix = Vec<Vec<Complex>>;
pub type RMatrix = Vec<Vec<Float>>;

/// Free-particle kernel `sqrt(m / (2 pi i hbar dt)) exp(i m dx^2 / (2 hbar dt))`.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub delta_t: Float,
    pub prefactor: Complex,
    pub phase_scale: Float,
}

impl KernelParams {
    pub fn new(consts: &PhysicalConstants, delta_t: &Float) -> Result<Self> {
        if *delta_t <= 0 {
            return Err(QpcError::Invariant("kernel time step must be positive".into()));
        }
        let prec = delta_t.prec();
        let ht = Float::with_val(prec, &consts.hbar * delta_t);
        let denom = Complex::with_val(prec, (0, Float::with_val(prec, &ht * pi(prec)) * 2u32));
        let prefactor = Complex::with_val(prec, &consts.mass / &denom).sqrt();
        let phase_scale = Float::with_val(prec, &consts.mass / &ht) / 2u32;
        Ok(Self {
            delta_t: delta_t.clone(),
            prefactor,
            phase_scale,
        })
    }

    pub fn evaluate(&self, dx: &Float) -> Complex {
        let prec = self.delta_t.prec();
        let phase = Float::with_val(prec, dx.square_ref()) * &self.phase_scale;
        let arg = Complex::with_val(prec, (0, phase));
        Complex::with_val(prec, &self.prefactor * arg.exp())
    }
}

/// Linear canonical transform entries for a chirp-type transform.
#[derive(Debug, Clone)]
pub struct LctParams {
    pub a: Float,
    pub b: Float,
    pub c: Float,
    pub d: Float,
    pub alpha: Float,
    pub gamma: Float,
    pub eta: Float,
}

impl LctParams {
    pub fn from_transform(alpha: Float, gamma: Float, eta: Float) -> Self {
        let prec = alpha.prec();
        let a = Float::with_val(prec, &gamma / &eta);
        let b = Float::with_val(prec, eta.recip_ref());
        let c = (Float::with_val(prec, &alpha * &gamma) - Float::with_val(prec, eta.square_ref())) / &eta;
        let d = Float::with_val(prec, &alpha / &eta);
        Self {
            a,
            b,
            c,
            d,
            alpha,
            gamma,
            eta,
        }
    }

    /// Free propagation over `delta_t`: `alpha = gamma = eta = m / (2 pi hbar dt)`.
    pub fn free_propagation(consts: &PhysicalConstants, delta_t: &Float) -> Self {
        let prec = delta_t.prec();
        let v = Float::with_val(prec, &consts.mass / (Float::with_val(prec, &consts.hbar * delta_t) * pi(prec)))
            / 2u32;
        Self::from_transform(v.clone(), v.clone(), v)
    }

    pub fn unimodularity_defect(&self) -> Float {
        let prec = self.a.prec();
        let det = Float::with_val(prec, &self.a * &self.d) - Float::with_val(prec, &self.b * &self.c);
        (det - 1u32).abs()
    }
}

#[derive(Debug, Clone)]
pub struct InitialIterates {
    pub a0: Float,
    pub b0: Float,
    pub chi0: Complex,
}

/// Source wave packet of width `sigma_0` freely propagated to the first plane.
pub fn initial_iterates(consts: &PhysicalConstants, sigma_0: &Float, t_01: &Float) -> InitialIterates {
    let prec = sigma_0.prec();
    let m = &consts.mass;
    let hb = &consts.hbar;
    let s2 = Float::with_val(prec, sigma_0.square_ref());
    let ht = Float::with_val(prec, hb * t_01);
    let ms2 = Float::with_val(prec, m * &s2);
    let den = (Float::with_val(prec, ht.square_ref()) + Float::with_val(prec, ms2.square_ref())) * 2u32;
    let a0 = -Float::with_val(prec, &ms2 * m) / &den;
    let b0 = Float::with_val(prec, &ht * m) / &den;
    let ratio = Complex::with_val(prec, Float::with_val(prec, m * sigma_0)) / Complex::with_val(prec, (&ms2, &ht));
    let quarter_root_pi = pi(prec).pow(Float::with_val(prec, -0.25));
    let chi0 = ratio.sqrt() * quarter_root_pi;
    InitialIterates { a0, b0, chi0 }
}

/// Recursion state at one slit plane, independent of any trajectory.
#[derive(Debug, Clone)]
pub struct PlaneIterate {
    pub beta: Float,
    /// Time of flight to the next plane, `t_{j,j+1}`.
    pub t: Float,
    pub a: Float,
    pub b: Float,
    pub varsigma: Complex,
    pub xi: Complex,
    pub sqrt_xi: Complex,
    pub varrho: Float,
    pub zeta: Float,
    pub zeta_c: Float,
    pub zeta_d: Float,
    pub p1: Complex,
    pub p2: Complex,
    pub p3: Complex,
    pub p4: Float,
    pub p5: Float,
}

#[derive(Debug, Clone)]
pub struct PlaneIterates {
    pub initial: InitialIterates,
    pub planes: Vec<PlaneIterate>,
}

fn degeneracy_threshold(prec: u32) -> Float {
    let digits = (prec as f64 / std::f64::consts::LOG2_10).floor() as i32;
    pow10(prec, -(digits / 2))
}

/// Gaussian window of half-width `beta` followed by free flight over `t`.
pub fn propagate_plane(
    a_prev: &Float,
    b_prev: &Float,
    beta: &Float,
    t: &Float,
    consts: &PhysicalConstants,
) -> Result<PlaneIterate> {
    let prec = beta.prec();
    let m = &consts.mass;
    let hb = &consts.hbar;
    let b2 = Float::with_val(prec, beta.square_ref());
    let b4 = Float::with_val(prec, b2.square_ref());
    let ht = Float::with_val(prec, hb * t);
    let hmt = Float::with_val(prec, &ht * m);
    let b2m = Float::with_val(prec, &b2 * m);
    let m2 = Float::with_val(prec, m.square_ref());
    let two_a_b2 = Float::with_val(prec, a_prev * &b2) * 2u32;

    let vs_re = Float::with_val(prec, &b2m + Float::with_val(prec, &ht * b_prev) * &b2 * 2u32);
    let vs_im = Float::with_val(prec, &ht * (Float::with_val(prec, 1u32) - &two_a_b2));
    let varsigma = Complex::with_val(prec, (vs_re, vs_im));
    let xi = Complex::with_val(prec, &b2m / &varsigma);

    let ab2 = Float::with_val(prec, a_prev.square_ref()) + Float::with_val(prec, b_prev.square_ref());
    let varrho = Float::with_val(prec, &b4 * ab2) * 4u32 - Float::with_val(prec, a_prev * &b2) * 4u32 + 1u32;
    let zeta = Float::with_val(prec, &b4 * &hmt) * b_prev * 4u32
        + Float::with_val(prec, &b4 * &m2)
        + Float::with_val(prec, ht.square_ref()) * &varrho;
    let zeta = Float::with_val(prec, zeta);

    let thr = degeneracy_threshold(prec);
    let zeta_scale = Float::with_val(prec, &b4 * &m2) * &thr;
    if Float::with_val(prec, zeta.abs_ref()) < zeta_scale {
        return Err(QpcError::Singular(format!("zeta vanishes for beta = {:e} m", beta.to_f64())));
    }
    if Float::with_val(prec, varsigma.abs_ref()) < Float::with_val(prec, &b2m * &thr) {
        return Err(QpcError::Singular(format!("varsigma vanishes for beta = {:e} m", beta.to_f64())));
    }

    let zeta_c = (Float::with_val(prec, &hmt * b_prev) * &b2 * 2u32 + Float::with_val(prec, &b2 * &m2)) / &zeta;
    let two_a_b2_m1 = Float::with_val(prec, &two_a_b2 - 1u32);
    let zeta_d = Float::with_val(prec, &hmt * &two_a_b2_m1) / &zeta;

    let two_i_vs = Complex::with_val(prec, &varsigma * Complex::with_val(prec, (0, 2)));
    let num1 = Complex::with_val(
        prec,
        (
            Float::with_val(prec, &ht * a_prev) * 2u32,
            Float::with_val(prec, &ht * b_prev) * 2u32 + m,
        ),
    );
    let p1 = -(num1 / &two_i_vs);
    let p2 = -(Complex::with_val(prec, Float::with_val(prec, &b2 * &ht)) / &two_i_vs);
    let i_vs = Complex::with_val(prec, &varsigma * Complex::with_val(prec, (0, 1)));
    let p3 = -(Complex::with_val(prec, &ht) / &i_vs);

    let a = Float::with_val(prec, &b2 * &m2) * &two_a_b2_m1 / (Float::with_val(prec, &zeta * 2u32));
    let b = (Float::with_val(prec, &b4 * &m2) * b_prev * 2u32 + Float::with_val(prec, &hmt * &varrho))
        / Float::with_val(prec, &zeta * 2u32);
    let p4 = Float::with_val(prec, &b2 * &zeta_c);
    let p5 = -(Float::with_val(prec, &ht * &a) * 2u32 / m);

    if a >= 0 {
        return Err(QpcError::Invariant(format!(
            "envelope coefficient A is non-negative after the slit plane with beta = {:e} m",
            beta.to_f64()
        )));
    }
    let sqrt_xi = Complex::with_val(prec, xi.sqrt_ref());
    Ok(PlaneIterate {
        beta: beta.clone(),
        t: t.clone(),
        a,
        b,
        varsigma,
        xi,
        sqrt_xi,
        varrho,
        zeta,
        zeta_c,
        zeta_d,
        p1,
        p2,
        p3,
        p4,
        p5,
    })
}

/// Runs the recursion through every slit plane of the geometry.
pub fn iterate_all(geom: &SetupGeometry, consts: &PhysicalConstants) -> Result<PlaneIterates> {
    geom.validate()?;
    let schedule = derive_schedule(geom, consts);
    let initial = initial_iterates(consts, &geom.source_width, &schedule.steps[0]);
    let mut planes: Vec<PlaneIterate> = Vec::with_capacity(geom.planes.len());
    for (idx, plane) in geom.planes.iter().enumerate() {
        let (a, b) = match planes.last() {
            Some(p) => (&p.a, &p.b),
            None => (&initial.a0, &initial.b0),
        };
        let next = propagate_plane(a, b, &plane.half_width, &schedule.steps[idx + 1], consts)?;
        planes.push(next);
    }
    Ok(PlaneIterates { initial, planes })
}

/// Quadratic-plus-linear exponent through which slit positions reach the
/// detector.
#[derive(Debug, Clone)]
pub struct CouplingModel {
    pub prec: u32,
    /// `c_j` for every plane `j = 1..N-1`; the last one is `c_{N-1}`.
    pub c_rows: Vec<Vec<Float>>,
    pub d_rows: Vec<Vec<Float>>,
    pub c_vec: Vec<Float>,
    pub d_vec: Vec<Float>,
    /// `v[j-1][k] = v_{k,j}`.
    pub v_blocks: Vec<Vec<[Float; 2]>>,
    pub v_l: RMatrix,
    pub e1: RMatrix,
    pub e2: CMatrix,
    pub g: CMatrix,
    pub p1: Vec<Complex>,
    pub p2: Vec<Complex>,
    pub p3: Vec<Complex>,
    pub h: CMatrix,
    pub a_last: Float,
    pub b_last: Float,
    pub prefactor: Complex,
    pub lambda: Float,
}

impl CouplingModel {
    /// Number of slit planes, `N - 1`.
    pub fn dim(&self) -> usize {
        self.c_vec.len()
    }

    pub fn h_real(&self) -> RMatrix {
        self.h.iter().map(|r| r.iter().map(|z| z.real().clone()).collect()).collect()
    }

    pub fn h_imag(&self) -> RMatrix {
        self.h.iter().map(|r| r.iter().map(|z| z.imag().clone()).collect()).collect()
    }

    /// Replaces `d` by externally supplied values for analysis-only runs.
    pub fn with_d_override(mut self, d: &[Float]) -> Result<Self> {
        if d.len() != self.dim() {
            return Err(QpcError::Invariant(format!(
                "d override has {} entries, expected {}",
                d.len(),
                self.dim()
            )));
        }
        self.d_vec = d.iter().map(|x| Float::with_val(self.prec, x)).collect();
        Ok(self)
    }
}

fn rotation_times(p4: &Float, p5: &Float, v: &[Float; 2], prec: u32) -> [Float; 2] {
    [
        Float::with_val(prec, p4 * &v[0]) + Float::with_val(prec, p5 * &v[1]),
        Float::with_val(prec, p4 * &v[1]) - Float::with_val(prec, p5 * &v[0]),
    ]
}

fn mat2_mul(a: &[[Float; 2]; 2], b: &[[Float; 2]; 2], prec: u32) -> [[Float; 2]; 2] {
    let e = |i: usize, j: usize| Float::with_val(prec, &a[i][0] * &b[0][j]) + Float::with_val(prec, &a[i][1] * &b[1][j]);
    [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
}

fn rotation(p: &PlaneIterate) -> [[Float; 2]; 2] {
    [
        [p.p4.clone(), p.p5.clone()],
        [-p.p5.clone(), p.p4.clone()],
    ]
}

/// `v_{k,j} = P_j P_{j-1} ... P_{k+2} zeta_{k+1}` with the product taken left to right.
pub fn v_block(iterates: &PlaneIterates, k: usize, j: usize) -> [Float; 2] {
    let planes = &iterates.planes;
    let prec = planes[0].beta.prec();
    let src = &planes[k];
    let zeta = [src.zeta_c.clone(), src.zeta_d.clone()];
    if j == k + 1 {
        return zeta;
    }
    let mut acc = rotation(&planes[j - 1]);
    for i in 2..j - k {
        acc = mat2_mul(&acc, &rotation(&planes[j - i]), prec);
    }
    let e = |r: usize| Float::with_val(prec, &acc[r][0] * &zeta[0]) + Float::with_val(prec, &acc[r][1] * &zeta[1]);
    [e(0), e(1)]
}

fn zero_c(prec: u32, rows: usize, cols: usize) -> CMatrix {
    vec![vec![Complex::new(prec); cols]; rows]
}

fn zero_r(prec: u32, rows: usize, cols: usize) -> RMatrix {
    vec![vec![Float::new(prec); cols]; rows]
}

pub fn build_coupling(iterates: &PlaneIterates, geom: &SetupGeometry) -> Result<CouplingModel> {
    let nm1 = iterates.planes.len();
    if nm1 == 0 || geom.planes.len() != nm1 {
        return Err(QpcError::Invariant(format!(
            "coupling needs matching plane counts, found {} iterates and {} planes",
            nm1,
            geom.planes.len()
        )));
    }
    let prec = geom.prec();
    let planes = &iterates.planes;

    let v_blocks: Vec<Vec<[Float; 2]>> = (1..=nm1)
        .map(|j| (0..j).map(|k| v_block(iterates, k, j)).collect())
        .collect();
    let c_rows: Vec<Vec<Float>> = v_blocks.iter().map(|r| r.iter().map(|v| v[0].clone()).collect()).collect();
    let d_rows: Vec<Vec<Float>> = v_blocks.iter().map(|r| r.iter().map(|v| v[1].clone()).collect()).collect();

    let inner = nm1 - 1;
    let mut v_l = zero_r(prec, 2 * inner, inner);
    for j in 1..=inner {
        for k in 0..j {
            v_l[2 * (j - 1)][k] = v_blocks[j - 1][k][0].clone();
            v_l[2 * (j - 1) + 1][k] = v_blocks[j - 1][k][1].clone();
        }
    }
    let mut e2 = zero_c(prec, inner, 2 * inner);
    for r in 0..inner {
        e2[r][2 * r] = Complex::with_val(prec, (1, 0));
        e2[r][2 * r + 1] = Complex::with_val(prec, (0, 1));
    }
    let mut g = zero_c(prec, nm1, nm1);
    for r in 0..inner {
        for c in 0..inner {
            let terms: Vec<Complex> = (0..2 * inner)
                .map(|q| Complex::with_val(prec, &e2[r][q] * &v_l[q][c]))
                .collect();
            g[r][c] = crate::numerics::compensated_complex_sum(&terms, prec);
        }
    }
    let mut e1 = zero_r(prec, nm1, nm1);
    for r in 0..inner {
        e1[r][r + 1] = Float::with_val(prec, 1);
    }

    let p1: Vec<Complex> = planes.iter().map(|p| p.p1.clone()).collect();
    let mut p2: Vec<Complex> = planes.iter().skip(1).map(|p| p.p2.clone()).collect();
    let mut p3: Vec<Complex> = planes.iter().skip(1).map(|p| p.p3.clone()).collect();
    p2.push(Complex::new(prec));
    p3.push(Complex::new(prec));

    // H = diag(p1) + G^T diag(p2) G + E1^T diag(p3) G
    let mut h = zero_c(prec, nm1, nm1);
    for r in 0..nm1 {
        for c in 0..nm1 {
            let mut terms = Vec::with_capacity(2 * nm1 + 1);
            if r == c {
                terms.push(p1[r].clone());
            }
            for q in 0..nm1 {
                terms.push(Complex::with_val(prec, &g[q][r] * &p2[q]) * &g[q][c]);
                terms.push(Complex::with_val(prec, &p3[q] * &g[q][c]) * &e1[q][r]);
            }
            h[r][c] = crate::numerics::compensated_complex_sum(&terms, prec);
        }
    }

    let mut prefactor = iterates.initial.chi0.clone();
    for p in planes {
        prefactor *= &p.sqrt_xi;
    }
    let lambda = Float::with_val(prec, prefactor.norm_ref());
    let last = planes.last().expect("non-empty");
    Ok(CouplingModel {
        prec,
        c_vec: c_rows[nm1 - 1].clone(),
        d_vec: d_rows[nm1 - 1].clone(),
        c_rows,
        d_rows,
        v_blocks,
        v_l,
        e1,
        e2,
        g,
        p1,
        p2,
        p3,
        h,
        a_last: last.a.clone(),
        b_last: last.b.clone(),
        prefactor,
        lambda,
    })
}

/// Convenience pipeline from geometry to coupling model.
pub fn coupling_for(geom: &SetupGeometry, consts: &PhysicalConstants) -> Result<(PlaneIterates, CouplingModel)> {
    let iterates = iterate_all(geom, consts)?;
    let coupling = build_coupling(&iterates, geom)?;
    Ok((iterates, coupling))
}

/// `x^T H x` with a plain (non-conjugating) transpose.
pub fn quadratic_form(h: &CMatrix, x: &[Float]) -> Complex {
    let prec = x.first().map(|v| v.prec()).unwrap_or(64);
    let mut terms = Vec::with_capacity(x.len() * x.len());
    for (r, xr) in x.iter().enumerate() {
        for (c, xc) in x.iter().enumerate() {
            let w = Float::with_val(prec, xr * xc);
            terms.push(Complex::with_val(prec, &h[r][c] * &w));
        }
    }
    crate::numerics::compensated_complex_sum(&terms, prec)
}

/// `sum_k p_k^T ((M1_k x) .* (M2_k x))`, the factored form of [`quadratic_form`].
pub fn structured_form(coupling: &CouplingModel, x: &[Float]) -> Complex {
    let prec = coupling.prec;
    let gx: Vec<Complex> = coupling
        .g
        .iter()
        .map(|row| {
            let t: Vec<Complex> = row.iter().zip(x).map(|(g, v)| Complex::with_val(prec, g * v)).collect();
            crate::numerics::compensated_complex_sum(&t, prec)
        })
        .collect();
    let e1x: Vec<Float> = coupling
        .e1
        .iter()
        .map(|row| {
            let t: Vec<Float> = row.iter().zip(x).map(|(e, v)| Float::with_val(prec, e * v)).collect();
            crate::numerics::real_sum(&t, prec)
        })
        .collect();
    let mut terms = Vec::new();
    for i in 0..x.len() {
        terms.push(Complex::with_val(prec, &coupling.p1[i] * Float::with_val(prec, x[i].square_ref())));
        terms.push(Complex::with_val(prec, &coupling.p2[i] * Complex::with_val(prec, gx[i].square_ref())));
        terms.push(Complex::with_val(prec, &coupling.p3[i] * &gx[i]) * &e1x[i]);
    }
    crate::numerics::compensated_complex_sum(&terms, prec)
}

/// Scalar recursion for `(C_{n,j}, D_{n,j})` along one trajectory.
pub fn scalar_cd(iterates: &PlaneIterates, x: &[Float]) -> Vec<(Float, Float)> {
    let prec = iterates.planes[0].beta.prec();
    let mut c = Float::new(prec);
    let mut d = Float::new(prec);
    let mut out = Vec::with_capacity(x.len());
    for (p, xj) in iterates.planes.iter().zip(x) {
        let rot = rotation_times(&p.p4, &p.p5, &[c, d], prec);
        c = Float::with_val(prec, &p.zeta_c * xj) + &rot[0];
        d = Float::with_val(prec, &p.zeta_d * xj) + &rot[1];
        out.push((c.clone(), d.clone()));
    }
    out
}

/// Path exponent from the per-plane product of Gaussian factors, without the
/// matrix assembly.
pub fn scalar_exponent(iterates: &PlaneIterates, x: &[Float]) -> Complex {
    let prec = iterates.planes[0].beta.prec();
    let cd = scalar_cd(iterates, x);
    let mut terms = Vec::new();
    for (j, p) in iterates.planes.iter().enumerate() {
        terms.push(Complex::with_val(prec, &p.p1 * Float::with_val(prec, x[j].square_ref())));
        if j > 0 {
            let g = Complex::with_val(prec, (&cd[j - 1].0, &cd[j - 1].1));
            terms.push(Complex::with_val(prec, &p.p2 * Complex::with_val(prec, g.square_ref())));
            terms.push(Complex::with_val(prec, &p.p3 * &g) * &x[j]);
        }
    }
    crate::numerics::compensated_complex_sum(&terms, prec)
}

/// `psi(x) = exp(log_amp + quad x^2 + lin x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub log_amp: Complex,
    pub quad: Complex,
    pub lin: Complex,
}

impl GaussianState {
    pub fn prec(&self) -> u32 {
        self.quad.prec().0
    }

    /// State at the first plane built from the initial iterates.
    pub fn from_initial(init: &InitialIterates) -> Self {
        let prec = init.a0.prec();
        Self {
            log_amp: Complex::with_val(prec, init.chi0.ln_ref()),
            quad: Complex::with_val(prec, (&init.a0, &init.b0)),
            lin: Complex::new(prec),
        }
    }

    /// Multiplies by `exp(-(x - center)^2 / (2 beta^2))`.
    pub fn window(&mut self, beta: &Float, center: &Float) {
        let prec = self.prec();
        let inv = Float::with_val(prec, beta.square_ref()).recip();
        let half_inv = Float::with_val(prec, &inv / 2u32);
        self.log_amp -= Float::with_val(prec, center.square_ref()) * &half_inv;
        self.quad -= &half_inv;
        self.lin += Float::with_val(prec, center * &inv);
    }

    /// Convolves with the free kernel over `t`.
    pub fn propagate(&mut self, consts: &PhysicalConstants, t: &Float) {
        let prec = self.prec();
        let kappa_im = Float::with_val(prec, &consts.mass / Float::with_val(prec, &consts.hbar * t)) / 2u32;
        let kappa = Complex::with_val(prec, (0, kappa_im));
        let p = Complex::with_val(prec, &self.quad + &kappa);
        let xi = Complex::with_val(prec, &kappa / &p);
        let shift = Complex::with_val(prec, self.lin.square_ref()) / (Complex::with_val(prec, &p * 4u32));
        self.log_amp += Complex::with_val(prec, xi.ln_ref()) / 2u32;
        self.log_amp -= shift;
        self.quad = Complex::with_val(prec, &kappa * &self.quad) / &p;
        self.lin *= &xi;
    }

    pub fn evaluate(&self, x: &Float) -> Complex {
        let prec = self.prec();
        let e = Complex::with_val(prec, &self.quad * Float::with_val(prec, x.square_ref()))
            + Complex::with_val(prec, &self.lin * x)
            + &self.log_amp;
        Complex::with_val(prec, e).exp()
    }
}
