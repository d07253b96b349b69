//! AC measurement functions and their partial derivatives.
//!
//! Every measured quantity has the form
//!
//! ```text
//! S = V_i^2 conj(y_self) + sum_j V_i V_j conj(y_ij) e^{j(θ_i - θ_j)}
//! ```
//!
//! For an injection `y_self` is the diagonal admittance and the sum runs over
//! all neighbours; for a flow measured at `i` towards `j` both come from the
//! π-model terminal admittances of the branches joining `i` and `j`. Power
//! leaving the bus is positive.

use num_complex::Complex64;

use crate::measurement::MeasurementKind;
use crate::network::NodalAdmittance;
use crate::StateVector;

/// A measurement with its buses resolved to graph indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub kind: MeasurementKind,
    pub at: usize,
    pub to: Option<usize>,
}

/// Partial derivatives of one measurement, by bus index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub d_angle: Vec<(usize, f64)>,
    pub d_vmag: Vec<(usize, f64)>,
}

fn power_terms(adm: &NodalAdmittance, m: &Located) -> (Complex64, Vec<(usize, Complex64)>) {
    match (m.kind, m.to) {
        (MeasurementKind::PInjection | MeasurementKind::QInjection, _) => (
            adm.diagonal[m.at],
            adm.terminals[m.at].iter().map(|t| (t.neighbor, t.y_mutual)).collect(),
        ),
        (MeasurementKind::PFlow | MeasurementKind::QFlow, Some(to)) => match adm.terminal(m.at, to) {
            Some(t) => (t.y_self, vec![(to, t.y_mutual)]),
            None => (Complex64::new(0.0, 0.0), Vec::new()),
        },
        _ => (Complex64::new(0.0, 0.0), Vec::new()),
    }
}

fn complex_power(state: &StateVector, i: usize, y_self: Complex64, mutual: &[(usize, Complex64)]) -> Complex64 {
    let vi = state.vmag[i];
    let mut s = vi * vi * y_self.conj();
    for &(j, y) in mutual {
        let rot = Complex64::from_polar(vi * state.vmag[j], state.angle[i] - state.angle[j]);
        s += y.conj() * rot;
    }
    s
}

pub fn value(adm: &NodalAdmittance, state: &StateVector, m: &Located) -> f64 {
    match m.kind {
        MeasurementKind::VMagnitude => state.vmag[m.at],
        MeasurementKind::VAngle => state.angle[m.at],
        kind => {
            let (y_self, mutual) = power_terms(adm, m);
            let s = complex_power(state, m.at, y_self, &mutual);
            if kind.is_active() {
                s.re
            } else {
                s.im
            }
        }
    }
}

pub fn gradient(adm: &NodalAdmittance, state: &StateVector, m: &Located) -> Gradient {
    let i = m.at;
    match m.kind {
        MeasurementKind::VMagnitude => Gradient {
            d_angle: vec![],
            d_vmag: vec![(i, 1.0)],
        },
        MeasurementKind::VAngle => Gradient {
            d_angle: vec![(i, 1.0)],
            d_vmag: vec![],
        },
        kind => {
            let (y_self, mutual) = power_terms(adm, m);
            let vi = state.vmag[i];
            let active = kind.is_active();
            let mut d_angle_i = 0.0;
            let mut d_vmag_i = if active {
                2.0 * vi * y_self.re
            } else {
                -2.0 * vi * y_self.im
            };
            let mut d_angle = Vec::with_capacity(mutual.len() + 1);
            let mut d_vmag = Vec::with_capacity(mutual.len() + 1);
            d_angle.push((i, 0.0));
            d_vmag.push((i, 0.0));
            for &(j, y) in &mutual {
                let vj = state.vmag[j];
                let (sin, cos) = (state.angle[i] - state.angle[j]).sin_cos();
                // c = g cos + b sin, s = g sin - b cos
                let c = y.re * cos + y.im * sin;
                let s = y.re * sin - y.im * cos;
                let (da, dv) = if active {
                    (-vi * vj * s, vi * c)
                } else {
                    (vi * vj * c, vi * s)
                };
                d_angle_i += da;
                d_angle.push((j, -da));
                d_vmag_i += if active { vj * c } else { vj * s };
                d_vmag.push((j, dv));
            }
            d_angle[0].1 = d_angle_i;
            d_vmag[0].1 = d_vmag_i;
            Gradient { d_angle, d_vmag }
        }
    }
}

/// Complex power leaving `local` into `branch`, given both terminal phasors.
pub fn branch_flow(y_self: Complex64, y_mutual: Complex64, local: (f64, f64), remote: (f64, f64)) -> Complex64 {
    let (vi, ti) = local;
    let (vj, tj) = remote;
    vi * vi * y_self.conj() + y_mutual.conj() * Complex64::from_polar(vi * vj, ti - tj)
}
