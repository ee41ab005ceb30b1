//! Hamiltonian flows on the cylinder, the rescaling conjugation and time averaging.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{central_diff, sample_hamiltonian, Analytic, HamiltonianField, MomentumGrid, TimeDependentField, TorusGrid};
use crate::error::{Error, Result};

/// Newton tolerance of the implicit midpoint solve (max-norm of the residual).
pub const NEWTON_TOL: f64 = 1e-12;
/// Newton iteration cap of the implicit midpoint solve.
pub const NEWTON_MAX_ITER: usize = 50;
/// Target step of the default step selection.
pub const DEFAULT_DT: f64 = 1e-3;
/// Endpoint change below which halving the step is accepted as converged.
pub const HALVING_TOL: f64 = 1e-7;

/// Triple-jump weights making a symmetric second-order step fourth order.
const TRIPLE_JUMP: [f64; 3] = {
    // w1 = 1 / (2 - 2^(1/3)), w0 = 1 - 2 w1
    let w1 = 1.351_207_191_959_657_8;
    [w1, 1.0 - 2.0 * w1, w1]
};

/// A point of the cylinder together with the continuous lift of its angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
    pub lift_q: f64,
}

impl PhasePoint {
    /// Point whose lift is `q` itself.
    pub fn new(q: f64, p: f64) -> Self {
        Self::from_lift(q, p)
    }

    pub fn from_lift(lift_q: f64, p: f64) -> Self {
        Self { q: lift_q.rem_euclid(1.0), p, lift_q }
    }
}

/// A (possibly time-dependent) Hamiltonian the integrators can evaluate.
pub trait PhaseHamiltonian: Send + Sync {
    fn value(&self, t: f64, q: f64, p: f64) -> f64;
    /// `(dH/dq, dH/dp)`.
    fn gradient(&self, t: f64, q: f64, p: f64) -> (f64, f64);
    fn is_autonomous(&self) -> bool;
    /// True when `H = h(t,p) + v(t,q)`.
    fn is_separable(&self) -> bool;
    /// Momentum range inside which the Hamiltonian is sampled.
    fn p_range(&self) -> (f64, f64);
    fn id(&self) -> String;
}

impl PhaseHamiltonian for HamiltonianField {
    fn value(&self, _t: f64, q: f64, p: f64) -> f64 {
        HamiltonianField::value(self, q, p)
    }

    fn gradient(&self, _t: f64, q: f64, p: f64) -> (f64, f64) {
        HamiltonianField::gradient(self, q, p)
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    fn is_separable(&self) -> bool {
        self.flags().is_separable
    }

    fn p_range(&self) -> (f64, f64) {
        (self.pgrid().p_min(), self.pgrid().p_max())
    }

    fn id(&self) -> String {
        self.name().to_string()
    }
}

impl PhaseHamiltonian for TimeDependentField {
    fn value(&self, t: f64, q: f64, p: f64) -> f64 {
        TimeDependentField::value(self, t, q, p)
    }

    fn gradient(&self, t: f64, q: f64, p: f64) -> (f64, f64) {
        let h = 1e-4;
        (
            central_diff(|s| TimeDependentField::value(self, t, s, p), q, h),
            central_diff(|s| TimeDependentField::value(self, t, q, s), p, h),
        )
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    fn is_separable(&self) -> bool {
        false
    }

    fn p_range(&self) -> (f64, f64) {
        (self.pgrid().p_min(), self.pgrid().p_max())
    }

    fn id(&self) -> String {
        self.name().to_string()
    }
}

/// Integrator output: one phase point per step, starting with the initial point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub energies: Vec<f64>,
    pub dt: f64,
    pub scheme: Scheme,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Triple-jump composition of Stoermer-Verlet (separable H).
    VerletTripleJump,
    /// Triple-jump composition of the implicit midpoint rule.
    MidpointTripleJump,
}

impl Trajectory {
    pub fn last(&self) -> PhasePoint {
        *self.points.last().expect("trajectory holds the initial point")
    }

    /// `max |H(z(t)) - H(z(0))|` along the stored points.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().fold(0.0_f64, |m, e| m.max((e - e0).abs()))
    }

    /// CSV dump with columns `t, q, lift_q, p, H`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["t", "q", "lift_q", "p", "H"])?;
        for ((t, z), e) in self.times.iter().zip(&self.points).zip(&self.energies) {
            cw.write_record(&[t.to_string(), z.q.to_string(), z.lift_q.to_string(), z.p.to_string(), e.to_string()])?;
        }
        cw.flush()?;
        Ok(())
    }
}

fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("need dt > 0 and t >= 0, got t = {t}, dt = {dt}")));
    }
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidInput(format!("t = {t} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

fn verlet(h: &dyn PhaseHamiltonian, q: &mut f64, p: &mut f64, dt: f64) {
    *p -= 0.5 * dt * h.gradient(0.0, *q, *p).0;
    *q += dt * h.gradient(0.0, *q, *p).1;
    *p -= 0.5 * dt * h.gradient(0.0, *q, *p).0;
}

fn midpoint(h: &dyn PhaseHamiltonian, t: f64, q: &mut f64, p: &mut f64, dt: f64) -> Result<()> {
    let tm = t + 0.5 * dt;
    let (q0, p0) = (*q, *p);
    let (gq, gp) = h.gradient(tm, q0, p0);
    let (mut qn, mut pn) = (q0 + dt * gp, p0 - dt * gq);
    let d = 1e-6;
    for _ in 0..NEWTON_MAX_ITER {
        let (mq, mp) = (0.5 * (q0 + qn), 0.5 * (p0 + pn));
        let (hq, hp) = h.gradient(tm, mq, mp);
        let r0 = qn - q0 - dt * hp;
        let r1 = pn - p0 + dt * hq;
        if r0.abs().max(r1.abs()) <= NEWTON_TOL {
            *q = qn;
            *p = pn;
            return Ok(());
        }
        let (a_q, a_p) = h.gradient(tm, mq + d, mp);
        let (b_q, b_p) = h.gradient(tm, mq - d, mp);
        let (c_q, c_p) = h.gradient(tm, mq, mp + d);
        let (e_q, e_p) = h.gradient(tm, mq, mp - d);
        let hqq = (a_q - b_q) / (2.0 * d);
        let hpq = (a_p - b_p) / (2.0 * d);
        let hqp = (c_q - e_q) / (2.0 * d);
        let hpp = (c_p - e_p) / (2.0 * d);
        // Jacobian of the residual in (qn, pn).
        let j00 = 1.0 - 0.5 * dt * hpq;
        let j01 = -0.5 * dt * hpp;
        let j10 = 0.5 * dt * hqq;
        let j11 = 1.0 + 0.5 * dt * hqp;
        let det = j00 * j11 - j01 * j10;
        qn -= (j11 * r0 - j01 * r1) / det;
        pn -= (-j10 * r0 + j00 * r1) / det;
    }
    let (mq, mp) = (0.5 * (q0 + qn), 0.5 * (p0 + pn));
    let (hq, hp) = h.gradient(tm, mq, mp);
    let residual = (qn - q0 - dt * hp).abs().max((pn - p0 + dt * hq).abs());
    Err(Error::NewtonDivergence { t, residual })
}

/// Integrates the flow of `h` from `z0` over `[0, t]` with step `dt`.
///
/// Separable autonomous Hamiltonians use a fourth-order triple-jump composition of
/// Stoermer-Verlet; all others use the same composition of the implicit midpoint rule.
/// Both are symplectic. The angle is advanced on its lift.
pub fn integrate(h: &dyn PhaseHamiltonian, z0: PhasePoint, t: f64, dt: f64) -> Result<Trajectory> {
    integrate_from(h, z0, 0.0, t, dt)
}

/// As [`integrate`], starting at time `t0` (relevant for time-dependent Hamiltonians).
pub fn integrate_from(h: &dyn PhaseHamiltonian, z0: PhasePoint, t0: f64, t: f64, dt: f64) -> Result<Trajectory> {
    let n = step_count(t, dt)?;
    let scheme = if h.is_autonomous() && h.is_separable() {
        Scheme::VerletTripleJump
    } else {
        Scheme::MidpointTripleJump
    };
    let (p_min, p_max) = h.p_range();
    let (mut q, mut p) = (z0.lift_q, z0.p);
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    let mut energies = Vec::with_capacity(n + 1);
    times.push(t0);
    points.push(PhasePoint::from_lift(q, p));
    energies.push(h.value(t0, q, p));
    for i in 0..n {
        let ti = t0 + i as f64 * dt;
        let mut tau = ti;
        for w in TRIPLE_JUMP {
            match scheme {
                Scheme::VerletTripleJump => verlet(h, &mut q, &mut p, w * dt),
                Scheme::MidpointTripleJump => midpoint(h, tau, &mut q, &mut p, w * dt)?,
            }
            tau += w * dt;
        }
        let tn = t0 + (i + 1) as f64 * dt;
        if !(p >= p_min && p <= p_max) {
            return Err(Error::OutOfDomain { t: tn, p, p_min, p_max });
        }
        times.push(tn);
        points.push(PhasePoint::from_lift(q, p));
        energies.push(h.value(tn, q, p));
    }
    Ok(Trajectory { times, points, energies, dt, scheme })
}

/// Default step `t / ceil(t / 1e-3)`, halved until the endpoint moves less than `1e-7`.
pub fn integrate_auto(h: &dyn PhaseHamiltonian, z0: PhasePoint, t: f64) -> Result<Trajectory> {
    if t == 0.0 {
        return integrate(h, z0, 0.0, DEFAULT_DT);
    }
    let mut dt = t / (t / DEFAULT_DT).ceil();
    let mut coarse = integrate(h, z0, t, dt)?;
    for _ in 0..8 {
        dt *= 0.5;
        let fine = integrate(h, z0, t, dt)?;
        let (a, b) = (coarse.last(), fine.last());
        if (a.lift_q - b.lift_q).abs().max((a.p - b.p).abs()) < HALVING_TOL {
            return Ok(fine);
        }
        coarse = fine;
    }
    Ok(coarse)
}

/// `rho_k^{-1} phi^{kt} rho_k (z0)` with `rho_k(q,p) = (kq, p)`, divided on the lift.
pub fn rescale_conjugate(h: &dyn PhaseHamiltonian, k: usize, z0: PhasePoint, t: f64, dt: f64) -> Result<PhasePoint> {
    if k == 0 {
        return Err(Error::InvalidInput("rescaling factor k must be positive".into()));
    }
    let kf = k as f64;
    let start = PhasePoint::from_lift(kf * z0.lift_q, z0.p);
    let end = integrate(h, start, kf * t, dt)?.last();
    Ok(PhasePoint::from_lift(end.lift_q / kf, end.p))
}

/// Time-t map sampled on a phase grid, with per-node Jacobian determinants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowMap {
    pub qgrid: TorusGrid,
    pub pgrid: MomentumGrid,
    pub t: f64,
    pub source: String,
    /// Lifted image angle, row-major with q slow.
    pub q_lift: Vec<f64>,
    pub p_image: Vec<f64>,
    pub det_jacobian: Vec<f64>,
}

impl FlowMap {
    /// Samples `phi^t` at every grid node; Jacobians use central differences of step `1e-5`.
    pub fn build(h: &dyn PhaseHamiltonian, qgrid: TorusGrid, pgrid: MomentumGrid, t: f64, dt: f64) -> Result<Self> {
        let nodes: Vec<(f64, f64)> = (0..qgrid.len())
            .flat_map(|iq| (0..pgrid.len()).map(move |ip| (iq, ip)))
            .map(|(iq, ip)| (qgrid.node(iq), pgrid.node(ip)))
            .collect();
        let delta = 1e-5;
        let rows: Vec<Result<(f64, f64, f64)>> = nodes
            .par_iter()
            .map(|&(q, p)| {
                let run = |q: f64, p: f64| integrate(h, PhasePoint::new(q, p), t, dt).map(|tr| tr.last());
                let c = run(q, p)?;
                let (qp, qm) = (run(q + delta, p)?, run(q - delta, p)?);
                let (pp, pm) = (run(q, p + delta)?, run(q, p - delta)?);
                let dqdq = (qp.lift_q - qm.lift_q) / (2.0 * delta);
                let dpdq = (qp.p - qm.p) / (2.0 * delta);
                let dqdp = (pp.lift_q - pm.lift_q) / (2.0 * delta);
                let dpdp = (pp.p - pm.p) / (2.0 * delta);
                Ok((c.lift_q, c.p, dqdq * dpdp - dqdp * dpdq))
            })
            .collect();
        let mut q_lift = Vec::with_capacity(nodes.len());
        let mut p_image = Vec::with_capacity(nodes.len());
        let mut det_jacobian = Vec::with_capacity(nodes.len());
        for r in rows {
            let (a, b, c) = r?;
            q_lift.push(a);
            p_image.push(b);
            det_jacobian.push(c);
        }
        Ok(Self { qgrid, pgrid, t, source: h.id(), q_lift, p_image, det_jacobian })
    }

    pub fn max_symplectic_defect(&self) -> f64 {
        self.det_jacobian.iter().fold(0.0_f64, |m, d| m.max((d - 1.0).abs()))
    }
}

/// Average of a 1-periodic Hamiltonian over one period (periodic trapezoidal rule).
pub fn time_average(h: &TimeDependentField, period: f64) -> Result<HamiltonianField> {
    if (period - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "time-dependent fields are sampled with period 1, got period {period}"
        )));
    }
    let slices = h.slices();
    let m = slices.len();
    let (qgrid, pgrid) = (h.qgrid(), h.pgrid());
    let name = format!("{}|avg", h.name());
    match h.closure() {
        Some(c) => {
            let avg = Analytic::new(move |q, p| (0..m).map(|j| c(j as f64 / m as f64, q, p)).sum::<f64>() / m as f64);
            sample_hamiltonian(name, avg, qgrid, pgrid)
        }
        None => {
            let n = slices[0].values().len();
            let mut values = vec![0.0; n];
            for s in slices {
                for (acc, v) in values.iter_mut().zip(s.values()) {
                    *acc += v;
                }
            }
            values.iter_mut().for_each(|v| *v /= m as f64);
            HamiltonianField::from_table(name, qgrid, pgrid, values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{free, pendulum, sample_hamiltonian, Analytic, PresetCatalog};
    use std::f64::consts::PI;

    fn grids() -> (TorusGrid, MomentumGrid) {
        (TorusGrid::new(64).unwrap(), MomentumGrid::new(-4.0, 4.0, 129).unwrap())
    }

    fn field(a: Analytic) -> HamiltonianField {
        let (qg, pg) = grids();
        sample_hamiltonian("h", a, qg, pg).unwrap()
    }

    #[test]
    fn triple_jump_weights_sum_to_one() {
        let s: f64 = TRIPLE_JUMP.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let w1 = 1.0 / (2.0 - 2.0_f64.powf(1.0 / 3.0));
        assert!((TRIPLE_JUMP[0] - w1).abs() < 1e-15);
    }

    #[test]
    fn free_motion() {
        let h = field(free(0.0));
        let tr = integrate(&h, PhasePoint::new(0.0, 1.0), 1.0, 1e-3).unwrap();
        let z = tr.last();
        assert!((z.lift_q - 1.0).abs() < 1e-12);
        assert!(z.q.min(1.0 - z.q) < 1e-12);
        assert_eq!(z.p, 1.0);
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let h = field(Analytic::new(|_, _| 0.0).with_gradient(|_, _| (0.0, 0.0)));
        let z0 = PhasePoint::new(0.3, -0.7);
        let z = integrate(&h, z0, 2.5, 1e-2).unwrap().last();
        assert_eq!(z, z0);
    }

    #[test]
    fn pendulum_energy_drift_and_halving() {
        let h = field(pendulum(1.0));
        let z0 = PhasePoint::new(0.25, 0.0);
        let a = integrate(&h, z0, 1.0, 1e-3).unwrap();
        let b = integrate(&h, z0, 1.0, 5e-4).unwrap();
        assert!(a.energy_drift() <= 1e-8, "{}", a.energy_drift());
        let (za, zb) = (a.last(), b.last());
        assert!((za.lift_q - zb.lift_q).abs() < HALVING_TOL && (za.p - zb.p).abs() < HALVING_TOL);
    }

    #[test]
    fn long_run_energy_for_presets() {
        for name in ["pendulum", "free_shifted", "pendulum_sheared"] {
            let (qg, pg) = grids();
            let h = PresetCatalog::field(name, &Default::default(), qg, pg).unwrap();
            let tr = integrate(&h, PhasePoint::new(0.1, 0.8), 10.0, 1e-3).unwrap();
            assert!(tr.energy_drift() <= 1e-6, "{name}: {}", tr.energy_drift());
        }
    }

    #[test]
    fn midpoint_matches_verlet_on_separable_field() {
        let h = field(pendulum(1.0));
        let z0 = PhasePoint::new(0.1, 0.9);
        let a = integrate(&h, z0, 1.0, 1e-2).unwrap();
        struct Opaque<'a>(&'a HamiltonianField);
        impl PhaseHamiltonian for Opaque<'_> {
            fn value(&self, t: f64, q: f64, p: f64) -> f64 {
                PhaseHamiltonian::value(self.0, t, q, p)
            }
            fn gradient(&self, t: f64, q: f64, p: f64) -> (f64, f64) {
                PhaseHamiltonian::gradient(self.0, t, q, p)
            }
            fn is_autonomous(&self) -> bool {
                true
            }
            fn is_separable(&self) -> bool {
                false
            }
            fn p_range(&self) -> (f64, f64) {
                self.0.p_range()
            }
            fn id(&self) -> String {
                "opaque".into()
            }
        }
        let b = integrate(&Opaque(&h), z0, 1.0, 1e-2).unwrap();
        assert_eq!(b.scheme, Scheme::MidpointTripleJump);
        let (za, zb) = (a.last(), b.last());
        assert!((za.lift_q - zb.lift_q).abs() < 1e-6 && (za.p - zb.p).abs() < 1e-6, "{za:?} {zb:?}");
    }

    #[test]
    fn leaving_the_momentum_grid_is_an_error() {
        let (qg, _) = grids();
        let h = sample_hamiltonian("tilt", Analytic::new(|q, _p| -(2.0 * PI * q).sin()), qg, MomentumGrid::new(-1.0, 1.0, 9).unwrap()).unwrap();
        // dp/dt = 2 pi cos(2 pi q) at q = 0 pushes p out of [-1, 1].
        let e = integrate(&h, PhasePoint::new(0.0, 0.9), 2.0, 1e-2).err();
        assert!(matches!(e, Some(Error::OutOfDomain { .. })));
    }

    #[test]
    fn rescaling_is_k_independent_for_p_only() {
        let h = field(crate::domain::p_only_wave(0.05));
        let z0 = PhasePoint::new(0.2, 0.6);
        let reference = rescale_conjugate(&h, 1, z0, 1.0, 1e-3).unwrap();
        for k in 2..=5 {
            let z = rescale_conjugate(&h, k, z0, 1.0, 1e-3).unwrap();
            assert!((z.lift_q - reference.lift_q).abs() < 1e-8 && (z.p - reference.p).abs() < 1e-8, "k = {k}");
        }
        let hp = 0.6 - 2.0 * PI * 0.05 * (2.0 * PI * 0.6).sin();
        assert!((reference.lift_q - (0.2 + hp)).abs() < 1e-10);
    }

    #[test]
    fn rescaled_pendulum_momentum_bound() {
        let h = field(pendulum(1.0));
        let k = 4;
        let z = rescale_conjugate(&h, k, PhasePoint::new(0.0, 1.5), 1.0, 1e-3).unwrap();
        // dp/dt of the rescaled flow is -k H_q(kq, p).
        assert!((z.p - 1.5).abs() <= k as f64 * h.sup_abs_dq() * 1.0);
        assert!((z.lift_q - 0.0).abs() <= 1.0 * h.sup_abs_dp());
    }

    #[test]
    fn flow_map_is_symplectic() {
        let h = field(pendulum(1.0));
        let qg = TorusGrid::new(6).unwrap();
        let pg = MomentumGrid::new(-1.5, 1.5, 5).unwrap();
        let m = FlowMap::build(&h, qg, pg, 0.5, 1e-3).unwrap();
        assert!(m.max_symplectic_defect() <= 1e-6, "{}", m.max_symplectic_defect());
        let sheared = field(PresetCatalog::analytic("pendulum_sheared", &Default::default()).unwrap());
        let m = FlowMap::build(&sheared, qg, pg, 0.5, 1e-2).unwrap();
        assert!(m.max_symplectic_defect() <= 1e-6, "{}", m.max_symplectic_defect());
    }

    #[test]
    fn time_average_examples() {
        let (qg, pg) = (TorusGrid::new(16).unwrap(), MomentumGrid::new(-2.0, 2.0, 17).unwrap());
        let zero_mean = TimeDependentField::sample("s", |t, q, p| (2.0 * PI * t).sin() * (p * p + (2.0 * PI * q).cos()), 8, qg, pg).unwrap();
        assert!(time_average(&zero_mean, 1.0).unwrap().values().iter().all(|v| v.abs() < 1e-14));
        let pulsed = PresetCatalog::time_dependent("pulsed_free", 8, qg, pg).unwrap();
        let avg = time_average(&pulsed, 1.0).unwrap();
        for ip in 0..pg.len() {
            let p = pg.node(ip);
            assert!((avg.at(5, ip) - 0.5 * p * p).abs() < 1e-14);
        }
        let pend = sample_hamiltonian("p", pendulum(1.0), qg, pg).unwrap();
        let auto = TimeDependentField::autonomous(&pend, 8).unwrap();
        let back = time_average(&auto, 1.0).unwrap();
        for (a, b) in back.values().iter().zip(pend.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(TimeDependentField::sample("few", |_, _, _| 0.0, 4, qg, pg).is_err());
    }

    #[test]
    fn time_dependent_flow_matches_closed_form() {
        let (qg, pg) = (TorusGrid::new(16).unwrap(), MomentumGrid::new(-2.0, 2.0, 17).unwrap());
        let pulsed = PresetCatalog::time_dependent("pulsed_free", 8, qg, pg).unwrap();
        // q(1) = q0 + p0 * int_0^1 (1 + cos 2 pi t) dt = q0 + p0.
        let z = integrate(&pulsed, PhasePoint::new(0.1, 0.7), 1.0, 1e-2).unwrap().last();
        assert!((z.lift_q - 0.8).abs() < 1e-8, "{}", z.lift_q);
        assert!((z.p - 0.7).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_expected_columns() {
        let h = field(free(0.0));
        let tr = integrate(&h, PhasePoint::new(0.0, 1.0), 0.01, 1e-3).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,q,lift_q,p,H\n"));
        assert_eq!(text.lines().count(), 12);
    }
}
