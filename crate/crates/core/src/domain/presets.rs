use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use super::field::{sample_hamiltonian, shear_conjugate, Analytic, HamiltonianField, PeriodicFn, TimeDependentField};
use super::grid::{MomentumGrid, TorusGrid};
use crate::error::{Error, Result};

/// `(1 - s^2)^3` on `|s| < 1`, zero outside; `C^2` with sup 1 and inf 0.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s * s;
        u * u * u
    }
}

pub fn bump_deriv(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s * s;
        -6.0 * s * u * u
    }
}

/// `1/2 p^2 - a sin^2(pi q)`.
pub fn pendulum(a: f64) -> Analytic {
    Analytic::new(move |q, p| 0.5 * p * p - a * (PI * q).sin().powi(2))
        .with_gradient(move |q, p| (-a * PI * (2.0 * PI * q).sin(), p))
}

/// `1/2 p^2 + c`.
pub fn free(c: f64) -> Analytic {
    Analytic::new(move |_q, p| 0.5 * p * p + c).with_gradient(|_q, p| (0.0, p))
}

/// `bump(p / w)`, supported in `[-w, w]`.
pub fn bump_in_p(w: f64) -> Analytic {
    Analytic::new(move |_q, p| bump(p / w)).with_gradient(move |_q, p| (0.0, bump_deriv(p / w) / w))
}

/// `cos(2 pi p) bump(p / w)`: p-only and nonconvex.
pub fn cos_bump(w: f64) -> Analytic {
    Analytic::new(move |_q, p| (2.0 * PI * p).cos() * bump(p / w)).with_gradient(move |_q, p| {
        let c = (2.0 * PI * p).cos();
        let s = (2.0 * PI * p).sin();
        (0.0, -2.0 * PI * s * bump(p / w) + c * bump_deriv(p / w) / w)
    })
}

/// `bump(p / w) (1 + m cos(2 pi q))`: compactly supported, q-dependent, nonconvex.
pub fn modulated_bump(w: f64, m: f64) -> Analytic {
    Analytic::new(move |q, p| bump(p / w) * (1.0 + m * (2.0 * PI * q).cos())).with_gradient(move |q, p| {
        let g = 1.0 + m * (2.0 * PI * q).cos();
        (-2.0 * PI * m * (2.0 * PI * q).sin() * bump(p / w), bump_deriv(p / w) / w * g)
    })
}

/// `1/2 p^2 + b cos(2 pi p)`: p-only, nonconvex once `b > 1/(4 pi^2)`.
pub fn p_only_wave(b: f64) -> Analytic {
    Analytic::new(move |_q, p| 0.5 * p * p + b * (2.0 * PI * p).cos())
        .with_gradient(move |_q, p| (0.0, p - 2.0 * PI * b * (2.0 * PI * p).sin()))
}

#[derive(Clone, Debug, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub params: Vec<(&'static str, f64)>,
    pub time_dependent: bool,
}

/// Named constructors for the Hamiltonians used in experiments and tests.
pub struct PresetCatalog;

impl PresetCatalog {
    pub fn list() -> Vec<PresetInfo> {
        let p = |name, description, params: &[(&'static str, f64)]| PresetInfo {
            name,
            description,
            params: params.to_vec(),
            time_dependent: false,
        };
        vec![
            p("zero", "H = 0", &[]),
            p("free", "H = p^2/2", &[]),
            p("free_shifted", "H = p^2/2 + c", &[("c", 0.5)]),
            p("pendulum", "H = p^2/2 - a sin^2(pi q)", &[("a", 1.0)]),
            p("neg_pendulum", "H = -(p^2/2 - a sin^2(pi q))", &[("a", 1.0)]),
            p(
                "pendulum_sheared",
                "pendulum composed with the shear (q, p + eps cos(2 pi q))",
                &[("a", 1.0), ("eps", 0.1)],
            ),
            p("bump_in_p", "H = bump(p/w), bump(s) = (1-s^2)^3", &[("w", 1.0)]),
            p("cos_bump", "H = cos(2 pi p) bump(p/w)", &[("w", 1.0)]),
            p("p_only_wave", "H = p^2/2 + b cos(2 pi p)", &[("b", 0.1)]),
            p("modulated_bump", "H = bump(p/w) (1 + m cos(2 pi q))", &[("w", 1.0), ("m", 0.3)]),
            PresetInfo {
                name: "pulsed_free",
                description: "H(t,q,p) = (1 + cos(2 pi t)) p^2/2",
                params: vec![],
                time_dependent: true,
            },
        ]
    }

    fn param(info: &PresetInfo, params: &BTreeMap<String, f64>, key: &str) -> f64 {
        params
            .get(key)
            .copied()
            .or_else(|| info.params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .unwrap_or(0.0)
    }

    fn info(name: &str) -> Result<PresetInfo> {
        Self::list()
            .into_iter()
            .find(|i| i.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown preset '{name}'")))
    }

    /// Validates parameter names against the preset's declared parameters.
    pub fn check_params(name: &str, params: &BTreeMap<String, f64>) -> Result<()> {
        let info = Self::info(name)?;
        for key in params.keys() {
            if !info.params.iter().any(|(k, _)| k == key) {
                return Err(Error::InvalidInput(format!("preset '{name}' has no parameter '{key}'")));
            }
        }
        Ok(())
    }

    /// Analytic closure of an autonomous preset.
    pub fn analytic(name: &str, params: &BTreeMap<String, f64>) -> Result<Analytic> {
        Self::check_params(name, params)?;
        let info = Self::info(name)?;
        let v = |k| Self::param(&info, params, k);
        Ok(match name {
            "zero" => Analytic::new(|_, _| 0.0).with_gradient(|_, _| (0.0, 0.0)),
            "free" => free(0.0),
            "free_shifted" => free(v("c")),
            "pendulum" => pendulum(v("a")),
            "neg_pendulum" => pendulum(v("a")).scaled(-1.0),
            "pendulum_sheared" => {
                let (a, eps) = (v("a"), v("eps"));
                Analytic::new(move |q, p| {
                    let s = p + eps * (2.0 * PI * q).cos();
                    0.5 * s * s - a * (PI * q).sin().powi(2)
                })
                .with_gradient(move |q, p| {
                    let s = p + eps * (2.0 * PI * q).cos();
                    (-s * eps * 2.0 * PI * (2.0 * PI * q).sin() - a * PI * (2.0 * PI * q).sin(), s)
                })
            }
            "bump_in_p" => bump_in_p(v("w")),
            "cos_bump" => cos_bump(v("w")),
            "p_only_wave" => p_only_wave(v("b")),
            "modulated_bump" => modulated_bump(v("w"), v("m")),
            "pulsed_free" => {
                return Err(Error::InvalidInput("'pulsed_free' is time-dependent; use time_dependent()".into()))
            }
            _ => unreachable!("preset list and constructors agree"),
        })
    }

    /// Samples an autonomous preset on the given grids.
    pub fn field(
        name: &str,
        params: &BTreeMap<String, f64>,
        qgrid: TorusGrid,
        pgrid: MomentumGrid,
    ) -> Result<HamiltonianField> {
        sample_hamiltonian(name, Self::analytic(name, params)?, qgrid, pgrid)
    }

    /// Samples a time-dependent preset on `m` time slices.
    pub fn time_dependent(name: &str, m: usize, qgrid: TorusGrid, pgrid: MomentumGrid) -> Result<TimeDependentField> {
        match name {
            "pulsed_free" => TimeDependentField::sample(
                name,
                |t, _q, p| (1.0 + (2.0 * PI * t).cos()) * 0.5 * p * p,
                m,
                qgrid,
                pgrid,
            ),
            other => {
                let field = Self::field(other, &BTreeMap::new(), qgrid, pgrid)?;
                TimeDependentField::autonomous(&field, m)
            }
        }
    }

    /// The shear-conjugated variant of a preset with `f = eps sin(2 pi q) / (2 pi)`.
    pub fn sheared(field: &HamiltonianField, eps: f64) -> Result<HamiltonianField> {
        shear_conjugate(field, &PeriodicFn::sine_mode(eps, 1, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grids() -> (TorusGrid, MomentumGrid) {
        (TorusGrid::new(32).unwrap(), MomentumGrid::new(-2.0, 2.0, 41).unwrap())
    }

    #[test]
    fn every_autonomous_preset_records_truthful_flags() {
        let (qg, pg) = grids();
        for info in PresetCatalog::list().into_iter().filter(|i| !i.time_dependent) {
            let f = PresetCatalog::field(info.name, &BTreeMap::new(), qg, pg).unwrap();
            let a = f.analytic().unwrap();
            // p-only flag against an independent probe off the grid.
            let probe_p_only = (0..50).all(|i| {
                let p = -1.9 + 0.076 * i as f64;
                (a.eval(0.11, p) - a.eval(0.67, p)).abs() < 1e-12
            });
            assert_eq!(f.is_p_only(), probe_p_only, "{}", info.name);
            let probe_support = (0..10).all(|i| a.eval(i as f64 / 10.0, -2.0) == 0.0 && a.eval(i as f64 / 10.0, 2.0) == 0.0);
            assert_eq!(f.is_compactly_supported(), probe_support, "{}", info.name);
        }
    }

    #[test]
    fn preset_gradients_match_differences() {
        let (qg, pg) = grids();
        for info in PresetCatalog::list().into_iter().filter(|i| !i.time_dependent) {
            let f = PresetCatalog::field(info.name, &BTreeMap::new(), qg, pg).unwrap();
            let a = f.analytic().unwrap();
            let fd = Analytic::new({
                let a = a.clone();
                move |q, p| a.eval(q, p)
            });
            for &(q, p) in &[(0.13, 0.4), (0.77, -0.61), (0.5, 0.93)] {
                let (x, y) = a.gradient(q, p);
                let (u, v) = fd.gradient(q, p);
                assert!((x - u).abs() < 1e-7 && (y - v).abs() < 1e-7, "{} at ({q},{p})", info.name);
            }
        }
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let mut m = BTreeMap::new();
        m.insert("amplitude".to_string(), 1.0);
        assert!(PresetCatalog::analytic("pendulum", &m).is_err());
        assert!(PresetCatalog::analytic("nope", &BTreeMap::new()).is_err());
    }
}
