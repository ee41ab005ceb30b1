//! Grids, sampled Hamiltonian fields, analytic presets and structural predicates.

mod field;
mod grid;
mod presets;

pub use field::{
    central_diff, plateau_cutoff, read_field, sample_hamiltonian, shear_conjugate, truncate_coercive, write_field,
    Analytic, FieldFlags, HamiltonianField, Interpolation, Payload, PeriodicFn, PhaseFn, PhaseGrad,
    TimeDependentField, CONVEXITY_SLACK, ROW_TOL, SEPARABLE_TOL, SUPPORT_TOL,
};
pub use grid::{MomentumGrid, TorusGrid};
pub use presets::{bump, bump_deriv, bump_in_p, cos_bump, free, modulated_bump, p_only_wave, pendulum, PresetCatalog, PresetInfo};

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g64() -> (TorusGrid, MomentumGrid) {
        (TorusGrid::new(64).unwrap(), MomentumGrid::new(-2.0, 2.0, 129).unwrap())
    }

    #[test]
    fn free_field_flags() {
        let (qg, pg) = g64();
        let f = sample_hamiltonian("free", free(0.0), qg, pg).unwrap();
        assert!(f.is_p_only());
        assert!(f.is_convex_in_p());
        assert!(!f.is_compactly_supported());
    }

    #[test]
    fn pendulum_flags() {
        let (qg, pg) = g64();
        let f = sample_hamiltonian("pendulum", pendulum(1.0), qg, pg).unwrap();
        assert!(!f.is_p_only());
        assert!(f.is_convex_in_p());
        assert!(f.flags().is_separable);
    }

    #[test]
    fn cos_bump_is_nonconvex() {
        let (qg, pg) = g64();
        let f = sample_hamiltonian("cb", cos_bump(1.0), qg, pg).unwrap();
        assert!(!f.is_convex_in_p());
        assert!(f.is_p_only());
        assert!(f.is_compactly_supported());
    }

    #[test]
    fn non_periodic_closure_rejected() {
        let (qg, pg) = g64();
        let e = sample_hamiltonian("bad", Analytic::new(|q, p| q + p), qg, pg).unwrap_err();
        assert!(matches!(e, crate::Error::NonPeriodic { .. }));
        let e = sample_hamiltonian("nan", Analytic::new(|_, p| if p > 1.0 { f64::NAN } else { 0.0 }), qg, pg).unwrap_err();
        assert!(matches!(e, crate::Error::InvalidField(_)));
    }

    #[test]
    fn interpolation_matches_closure_at_nodes_and_converges_between() {
        let (qg, pg) = g64();
        let a = pendulum(1.0);
        let f = sample_hamiltonian("pendulum", a.clone(), qg, pg).unwrap();
        for iq in 0..qg.len() {
            for ip in 0..pg.len() {
                let (q, p) = (qg.node(iq), pg.node(ip));
                assert_eq!(f.interpolate(q, p), a.eval(q, p));
            }
        }
        let err = |f: &HamiltonianField| {
            let mut m = 0.0_f64;
            for i in 0..97 {
                let (q, p) = (0.0103 * i as f64, -1.9 + 0.039 * i as f64);
                m = m.max((f.interpolate(q, p) - a.eval(q, p)).abs());
            }
            m
        };
        let coarse = sample_hamiltonian("c", a.clone(), TorusGrid::new(32).unwrap(), MomentumGrid::new(-2.0, 2.0, 65).unwrap()).unwrap();
        let (e_coarse, e_fine) = (err(&coarse), err(&f));
        // Bilinear error bound: (hq^2 sup|H_qq| + hp^2 sup|H_pp|) / 8.
        let bound = ((1.0 / 64.0_f64).powi(2) * 2.0 * PI * PI + pg.spacing().powi(2)) / 8.0;
        assert!(e_fine <= bound * 1.01, "{e_fine} vs {bound}");
        assert!(e_coarse / e_fine > 3.0, "{e_coarse} {e_fine}");
        let cubic = f.clone().with_interpolation(Interpolation::Bicubic);
        let cubic_coarse = coarse.with_interpolation(Interpolation::Bicubic);
        let (c1, c2) = (err(&cubic_coarse), err(&cubic));
        assert!(c2 < e_fine / 10.0, "{c2} vs {e_fine}");
        assert!(c1 / c2 > 10.0, "{c1} {c2}");
    }

    #[test]
    fn truncation_examples() {
        let qg = TorusGrid::new(16).unwrap();
        let pg = MomentumGrid::new(-3.0, 3.0, 121).unwrap();
        let h = sample_hamiltonian("free", free(0.0), qg, pg).unwrap();
        let t = truncate_coercive(&h, 1.0).unwrap();
        assert!(t.is_compactly_supported());
        for ip in 0..pg.len() {
            let p = pg.node(ip);
            if p.abs() <= 1.0 {
                assert_eq!(t.at(3, ip), 0.5 * p * p);
            }
            if p.abs() >= 2.0 {
                assert_eq!(t.at(3, ip), 0.0);
            }
        }
        let again = truncate_coercive(&t, 1.0).unwrap();
        assert_eq!(again.values(), t.values());
        let zero = sample_hamiltonian("zero", Analytic::new(|_, _| 0.0), qg, pg).unwrap();
        assert!(truncate_coercive(&zero, 1.0).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(matches!(truncate_coercive(&h, 2.0), Err(crate::Error::DomainTooSmall(_))));
    }

    #[test]
    fn cutoff_is_c2() {
        let a = 1.3;
        for &s in &[a, 2.0 * a] {
            let (v0, d0) = plateau_cutoff(s - 1e-9, a);
            let (v1, d1) = plateau_cutoff(s + 1e-9, a);
            assert!((v0 - v1).abs() < 1e-8 && (d0 - d1).abs() < 1e-6);
            let second = |x: f64| central_diff(|y| plateau_cutoff(y, a).1, x, 1e-5);
            assert!(second(s - 1e-4).abs() < 1e-2 && second(s + 1e-4).abs() < 1e-2);
        }
    }

    #[test]
    fn shear_examples() {
        let (qg, pg) = g64();
        let h = sample_hamiltonian("free", free(0.0), qg, pg).unwrap();
        let same = shear_conjugate(&h, &PeriodicFn::zero()).unwrap();
        assert_eq!(same.values(), h.values());
        let f = PeriodicFn::sine_mode(0.1, 1, 0.0);
        let s = shear_conjugate(&h, &f).unwrap();
        for iq in 0..qg.len() {
            for ip in 0..pg.len() {
                let (q, p) = (qg.node(iq), pg.node(ip));
                let want = 0.5 * (p + 0.1 * (2.0 * PI * q).cos()).powi(2);
                assert!((s.at(iq, ip) - want).abs() < 1e-14);
            }
        }
        let back = shear_conjugate(&s, &f.negated()).unwrap();
        for (a, b) in back.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn table_only_shear_round_trip_within_interpolation_error() {
        let qg = TorusGrid::new(64).unwrap();
        let pg = MomentumGrid::new(-2.0, 2.0, 129).unwrap();
        let h = sample_hamiltonian("b", modulated_bump(1.0, 0.3), qg, pg).unwrap();
        let table = HamiltonianField::from_table("b", qg, pg, h.values().to_vec()).unwrap();
        let f = PeriodicFn::sine_mode(0.05, 1, 0.3);
        let back = shear_conjugate(&shear_conjugate(&table, &f).unwrap(), &f.negated()).unwrap();
        let spacing = pg.spacing();
        let c = h.sup_abs_dpp();
        let err = back.values().iter().zip(h.values()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 2.0 * c * spacing * spacing, "{err} vs {}", 2.0 * c * spacing * spacing);
    }

    #[test]
    fn shear_of_table_only_field_can_exceed_range() {
        let (qg, pg) = g64();
        let h = sample_hamiltonian("free", free(0.0), qg, pg).unwrap();
        let table = HamiltonianField::from_table("free", qg, pg, h.values().to_vec()).unwrap();
        assert!(matches!(
            shear_conjugate(&table, &PeriodicFn::sine_mode(0.1, 1, 0.0)),
            Err(crate::Error::RangeExceeded { .. })
        ));
    }

    #[test]
    fn field_files_round_trip() {
        let (qg, pg) = (TorusGrid::new(8).unwrap(), MomentumGrid::new(-1.0, 1.0, 5).unwrap());
        let h = sample_hamiltonian("pendulum", pendulum(1.0), qg, pg).unwrap();
        for payload in [Payload::Csv, Payload::F64Le] {
            let mut buf = Vec::new();
            write_field(&h, &mut buf, payload).unwrap();
            let back = read_field(std::io::Cursor::new(buf)).unwrap();
            assert_eq!(back.values(), h.values());
            assert_eq!(back.flags(), h.flags());
            assert_eq!(back.name(), "pendulum");
        }
    }
}
