//! Dynamical systems on flat tori: explicit maps and time-1 maps of flows.
//!
//! A [`SystemSpec`] carries the defining expressions, their symbolic
//! Jacobians and compiled evaluation tapes. Builtin constructors cover linear
//! toral automorphisms, a Morse–Smale circle family, products of maps and the
//! Gourmelon–Potrie flow on `(R/2Z)^2`; anything else can be written in the
//! text format read by [`parse_system`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Expr, Scope, Tape};
use crate::manifold::{wrap, wrap_centered, SquareMatrix, TorusPoint};

/// Largest supported torus dimension. Keeps integrator state on the stack.
pub const MAX_DIM: usize = 8;

/// Default number of RK4 steps per unit time for flows.
pub const DEFAULT_RK4_STEPS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    ExplicitMap,
    Time1Flow,
}

impl SystemKind {
    fn keyword(self) -> &'static str {
        match self {
            SystemKind::ExplicitMap => "map",
            SystemKind::Time1Flow => "flow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Integrator {
    pub steps: usize,
    pub scheme: Scheme,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            steps: DEFAULT_RK4_STEPS,
            scheme: Scheme::Rk4,
        }
    }
}

#[derive(Debug, Clone)]
struct Tapes {
    forward: Tape,
    jacobian: Tape,
    forward_jacobian: Tape,
    inverse: Option<Tape>,
    inverse_jacobian: Option<Tape>,
}

/// An immutable dynamical system on a torus.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    name: String,
    kind: SystemKind,
    periods: Vec<f64>,
    params: BTreeMap<String, f64>,
    forward: Vec<Expr>,
    jacobian: Vec<Vec<Expr>>,
    inverse: Option<Vec<Expr>>,
    inverse_jacobian: Option<Vec<Vec<Expr>>>,
    integrator: Integrator,
    integer_matrix: Option<Vec<Vec<i64>>>,
    factors: Option<Box<(SystemSpec, SystemSpec)>>,
    tapes: Tapes,
}

/// Serializable description of a system, embedded in reports.
#[derive(Debug, Clone, Serialize)]
pub struct SystemSummary {
    pub name: String,
    pub kind: SystemKind,
    pub dim: usize,
    pub periods: Vec<f64>,
    pub params: BTreeMap<String, f64>,
    pub forward: Vec<String>,
    pub inverse: Option<Vec<String>>,
    pub rk4_steps: Option<usize>,
}

fn jacobian_of(exprs: &[Expr], dim: usize) -> Vec<Vec<Expr>> {
    exprs
        .iter()
        .map(|e| (0..dim).map(|j| e.derivative(j)).collect())
        .collect()
}

fn flatten(rows: &[Vec<Expr>]) -> Vec<Expr> {
    rows.iter().flatten().cloned().collect()
}

impl SystemSpec {
    /// Validates and compiles a system. `forward` holds the map components
    /// (explicit maps) or the vector field components (flows).
    pub fn new(
        name: impl Into<String>,
        kind: SystemKind,
        periods: Vec<f64>,
        params: BTreeMap<String, f64>,
        forward: Vec<Expr>,
        inverse: Option<Vec<Expr>>,
        integrator: Integrator,
    ) -> Result<Self> {
        let dim = periods.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Structure(format!(
                "dimension {dim} outside the supported range 1..={MAX_DIM}"
            )));
        }
        if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Structure(format!("period {p} is not a positive real")));
        }
        if forward.len() != dim {
            return Err(Error::Structure(format!(
                "{} forward components for dimension {dim}",
                forward.len()
            )));
        }
        if kind == SystemKind::Time1Flow {
            if inverse.is_some() {
                return Err(Error::Structure(
                    "flows take their inverse from the reversed field; drop the inverse section".into(),
                ));
            }
            if integrator.steps == 0 {
                return Err(Error::Structure("integrator needs at least one step".into()));
            }
        }
        if let Some(inv) = &inverse {
            if inv.len() != dim {
                return Err(Error::Structure(format!(
                    "{} inverse components for dimension {dim}",
                    inv.len()
                )));
            }
        }
        for e in forward.iter().chain(inverse.iter().flatten()) {
            let (vars, names) = e.free_names();
            if let Some(v) = vars.iter().find(|v| **v >= dim) {
                return Err(Error::Structure(format!("x{} used in dimension {dim}", v + 1)));
            }
            if let Some(n) = names.iter().find(|n| !params.contains_key(*n)) {
                return Err(Error::Structure(format!("parameter `{n}` has no value")));
            }
        }
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Structure(format!("parameter `{k}` = {v} is not finite")));
        }

        let jacobian = jacobian_of(&forward, dim);
        let inverse_jacobian = inverse.as_ref().map(|inv| jacobian_of(inv, dim));

        let bind = |es: &[Expr]| -> Vec<Expr> { es.iter().map(|e| e.bind_params(&params)).collect() };
        let fwd = bind(&forward);
        let jac = bind(&flatten(&jacobian));
        let mut fwd_jac = fwd.clone();
        fwd_jac.extend(jac.iter().cloned());
        let tapes = Tapes {
            forward: Tape::compile(&fwd, dim)?,
            jacobian: Tape::compile(&jac, dim)?,
            forward_jacobian: Tape::compile(&fwd_jac, dim)?,
            inverse: inverse.as_ref().map(|inv| Tape::compile(&bind(inv), dim)).transpose()?,
            inverse_jacobian: inverse_jacobian
                .as_ref()
                .map(|ij| Tape::compile(&bind(&flatten(ij)), dim))
                .transpose()?,
        };

        let spec = SystemSpec {
            name: name.into(),
            kind,
            periods,
            params,
            forward,
            jacobian,
            inverse,
            inverse_jacobian,
            integrator,
            integer_matrix: None,
            factors: None,
            tapes,
        };
        if spec.inverse.is_some() {
            spec.check_declared_inverse()?;
        }
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn forward_exprs(&self) -> &[Expr] {
        &self.forward
    }

    pub fn jacobian_exprs(&self) -> &[Vec<Expr>] {
        &self.jacobian
    }

    pub fn inverse_exprs(&self) -> Option<&[Expr]> {
        self.inverse.as_deref()
    }

    pub fn inverse_jacobian_exprs(&self) -> Option<&[Vec<Expr>]> {
        self.inverse_jacobian.as_deref()
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    /// Integer matrix of a linear toral automorphism, when this is one.
    pub fn integer_matrix(&self) -> Option<&[Vec<i64>]> {
        self.integer_matrix.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same system with a different RK4 step count (flows only).
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        if self.kind != SystemKind::Time1Flow {
            return Err(Error::Unsupported("step count applies to flows only".into()));
        }
        if steps == 0 {
            return Err(Error::Structure("integrator needs at least one step".into()));
        }
        let mut s = self.clone();
        s.integrator.steps = steps;
        Ok(s)
    }

    pub fn summary(&self) -> SystemSummary {
        SystemSummary {
            name: self.name.clone(),
            kind: self.kind,
            dim: self.dim(),
            periods: self.periods.clone(),
            params: self.params.clone(),
            forward: self.forward.iter().map(|e| e.to_string()).collect(),
            inverse: self
                .inverse
                .as_ref()
                .map(|inv| inv.iter().map(|e| e.to_string()).collect()),
            rk4_steps: (self.kind == SystemKind::Time1Flow).then_some(self.integrator.steps),
        }
    }

    /// Renders the system in the text format accepted by [`parse_system`].
    ///
    /// Parameters that were inlined (products) are not listed.
    pub fn to_text(&self) -> String {
        let mut used = BTreeSet::new();
        for e in self.forward.iter().chain(self.inverse.iter().flatten()) {
            used.extend(e.free_names().1);
        }
        let periods: Vec<String> = self.periods.iter().map(|p| format!("{p:?}")).collect();
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind.keyword());
        let _ = writeln!(s, "dim={}", self.dim());
        let _ = writeln!(s, "periods={}", periods.join(","));
        if self.kind == SystemKind::Time1Flow {
            let _ = writeln!(s, "steps={}", self.integrator.steps);
        }
        for name in &used {
            let _ = writeln!(s, "param {name}={:?}", self.params[name]);
        }
        let _ = writeln!(
            s,
            "{}:",
            if self.kind == SystemKind::Time1Flow { "field" } else { "map" }
        );
        for e in &self.forward {
            let _ = writeln!(s, "{e}");
        }
        if let Some(inv) = &self.inverse {
            let _ = writeln!(s, "inverse:");
            for e in inv {
                let _ = writeln!(s, "{e}");
            }
        }
        s
    }

    /// Checks that `p` lives on this system's torus.
    pub fn check_point(&self, p: &TorusPoint) -> Result<()> {
        if p.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "point of dimension {} for a system of dimension {}",
                p.dim(),
                self.dim()
            )));
        }
        if p.periods() != self.periods.as_slice() {
            return Err(Error::Domain(format!(
                "point periods {:?} differ from system periods {:?}",
                p.periods(),
                self.periods
            )));
        }
        Ok(())
    }

    /// Builds a point on this system's torus.
    pub fn point(&self, coords: Vec<f64>) -> Result<TorusPoint> {
        TorusPoint::new(coords, self.periods.clone())
    }

    fn wrap_into(&self, out: &mut [f64]) {
        for (v, p) in out.iter_mut().zip(&self.periods) {
            *v = wrap(*v, *p);
        }
    }

    fn ensure_finite(&self, what: &str, x: &[f64], values: &[f64]) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} of `{}` at {x:?}", self.name)))
        }
    }

    // --- raw evaluation on coordinate slices ------------------------------

    /// `out = f(x)`, normalized to the fundamental domain.
    pub fn map_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            SystemKind::ExplicitMap => self.tapes.forward.eval(x, out),
            SystemKind::Time1Flow => self.flow(x, 1.0, out, None),
        }
        self.ensure_finite("image", x, out)?;
        self.wrap_into(out);
        Ok(())
    }

    /// `out = f(x)` and `jac = Df(x)` (row-major).
    pub fn map_jacobian_raw(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        match self.kind {
            SystemKind::ExplicitMap => {
                self.tapes.forward.eval(x, out);
                self.tapes.jacobian.eval(x, jac);
            }
            SystemKind::Time1Flow => self.flow(x, 1.0, out, Some(jac)),
        }
        self.ensure_finite("image", x, out)?;
        self.ensure_finite("Jacobian", x, jac)?;
        self.wrap_into(out);
        Ok(())
    }

    /// `out = f^{-1}(x)`.
    pub fn inverse_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            SystemKind::Time1Flow => {
                self.flow(x, -1.0, out, None);
                self.ensure_finite("preimage", x, out)?;
            }
            SystemKind::ExplicitMap => {
                if let Some(tape) = &self.tapes.inverse {
                    tape.eval(x, out);
                    self.ensure_finite("preimage", x, out)?;
                } else if let Some(factors) = &self.factors {
                    let (a, b) = (&factors.0, &factors.1);
                    let k = a.dim();
                    a.inverse_raw(&x[..k], &mut out[..k])?;
                    b.inverse_raw(&x[k..], &mut out[k..])?;
                } else {
                    self.newton_inverse(x, out)?;
                }
            }
        }
        self.wrap_into(out);
        Ok(())
    }

    /// `out = f^{-1}(x)` and `jac = D(f^{-1})(x)` (row-major).
    pub fn inverse_jacobian_raw(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.dim();
        match self.kind {
            SystemKind::Time1Flow => {
                self.flow(x, -1.0, out, Some(jac));
                self.ensure_finite("preimage", x, out)?;
                self.ensure_finite("inverse Jacobian", x, jac)?;
            }
            SystemKind::ExplicitMap => {
                if let (Some(t), Some(tj)) = (&self.tapes.inverse, &self.tapes.inverse_jacobian) {
                    t.eval(x, out);
                    tj.eval(x, jac);
                    self.ensure_finite("preimage", x, out)?;
                    self.ensure_finite("inverse Jacobian", x, jac)?;
                } else if let Some(factors) = &self.factors {
                    let (a, b) = (&factors.0, &factors.1);
                    let k = a.dim();
                    let mut ja = [0.0; MAX_DIM * MAX_DIM];
                    let mut jb = [0.0; MAX_DIM * MAX_DIM];
                    a.inverse_jacobian_raw(&x[..k], &mut out[..k], &mut ja[..k * k])?;
                    b.inverse_jacobian_raw(&x[k..], &mut out[k..], &mut jb[..(d - k) * (d - k)])?;
                    jac.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            jac[i * d + j] = ja[i * k + j];
                        }
                    }
                    let m = d - k;
                    for i in 0..m {
                        for j in 0..m {
                            jac[(k + i) * d + k + j] = jb[i * m + j];
                        }
                    }
                } else {
                    self.newton_inverse(x, out)?;
                    let mut img = [0.0; MAX_DIM];
                    let mut df = [0.0; MAX_DIM * MAX_DIM];
                    self.tapes.forward.eval(out, &mut img[..d]);
                    self.tapes.jacobian.eval(out, &mut df[..d * d]);
                    let m = DMatrix::from_row_slice(d, d, &df[..d * d]);
                    let inv = m.try_inverse().ok_or_else(|| Error::NotInvertible {
                        point: x.to_vec(),
                        reason: "Jacobian at the preimage is singular".into(),
                    })?;
                    for i in 0..d {
                        for j in 0..d {
                            jac[i * d + j] = inv[(i, j)];
                        }
                    }
                    self.ensure_finite("inverse Jacobian", x, jac)?;
                }
            }
        }
        self.wrap_into(out);
        Ok(())
    }

    // --- point-level API ---------------------------------------------------

    pub fn eval_map(&self, p: &TorusPoint) -> Result<TorusPoint> {
        self.check_point(p)?;
        let mut out = vec![0.0; self.dim()];
        self.map_raw(p.coords(), &mut out)?;
        Ok(TorusPoint::from_normalized(out, self.periods.clone()))
    }

    pub fn eval_inverse(&self, p: &TorusPoint) -> Result<TorusPoint> {
        self.check_point(p)?;
        let mut out = vec![0.0; self.dim()];
        self.inverse_raw(p.coords(), &mut out)?;
        Ok(TorusPoint::from_normalized(out, self.periods.clone()))
    }

    /// Jacobian of the map (time-1 map for flows) at `p`.
    pub fn eval_jacobian(&self, p: &TorusPoint) -> Result<SquareMatrix> {
        self.check_point(p)?;
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        self.map_jacobian_raw(p.coords(), &mut out, &mut jac)?;
        SquareMatrix::new(DMatrix::from_row_slice(d, d, &jac))
    }

    /// Jacobian of the inverse map at `p`.
    pub fn eval_inverse_jacobian(&self, p: &TorusPoint) -> Result<SquareMatrix> {
        self.check_point(p)?;
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        self.inverse_jacobian_raw(p.coords(), &mut out, &mut jac)?;
        SquareMatrix::new(DMatrix::from_row_slice(d, d, &jac))
    }

    // --- internals ---------------------------------------------------------

    /// Fixed-step RK4 for `x' = sign * X(x)` over unit time, optionally with
    /// the variational equation `M' = sign * DX(x) M`, `M(0) = I`.
    fn flow(&self, x: &[f64], sign: f64, out: &mut [f64], jac: Option<&mut [f64]>) {
        let d = self.dim();
        let steps = self.integrator.steps;
        let h = sign / steps as f64;
        match jac {
            None => {
                let tape = &self.tapes.forward;
                let mut y = [0.0; MAX_DIM];
                y[..d].copy_from_slice(&x[..d]);
                let mut k1 = [0.0; MAX_DIM];
                let mut k2 = [0.0; MAX_DIM];
                let mut k3 = [0.0; MAX_DIM];
                let mut k4 = [0.0; MAX_DIM];
                let mut tmp = [0.0; MAX_DIM];
                for _ in 0..steps {
                    tape.eval(&y[..d], &mut k1[..d]);
                    for i in 0..d {
                        tmp[i] = y[i] + 0.5 * h * k1[i];
                    }
                    tape.eval(&tmp[..d], &mut k2[..d]);
                    for i in 0..d {
                        tmp[i] = y[i] + 0.5 * h * k2[i];
                    }
                    tape.eval(&tmp[..d], &mut k3[..d]);
                    for i in 0..d {
                        tmp[i] = y[i] + h * k3[i];
                    }
                    tape.eval(&tmp[..d], &mut k4[..d]);
                    for i in 0..d {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                out[..d].copy_from_slice(&y[..d]);
            }
            Some(jac) => {
                const S: usize = MAX_DIM + MAX_DIM * MAX_DIM;
                let n = d + d * d;
                let tape = &self.tapes.forward_jacobian;
                let deriv = |y: &[f64], dy: &mut [f64], buf: &mut [f64]| {
                    tape.eval(&y[..d], &mut buf[..n]);
                    dy[..d].copy_from_slice(&buf[..d]);
                    let dx = &buf[d..n];
                    let m = &y[d..n];
                    for i in 0..d {
                        for j in 0..d {
                            let mut acc = 0.0;
                            for k in 0..d {
                                acc += dx[i * d + k] * m[k * d + j];
                            }
                            dy[d + i * d + j] = acc;
                        }
                    }
                };
                let mut buf = [0.0; S];
                let mut y = [0.0; S];
                y[..d].copy_from_slice(&x[..d]);
                for i in 0..d {
                    y[d + i * d + i] = 1.0;
                }
                let mut k1 = [0.0; S];
                let mut k2 = [0.0; S];
                let mut k3 = [0.0; S];
                let mut k4 = [0.0; S];
                let mut tmp = [0.0; S];
                for _ in 0..steps {
                    deriv(&y, &mut k1, &mut buf);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k1[i];
                    }
                    deriv(&tmp, &mut k2, &mut buf);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k2[i];
                    }
                    deriv(&tmp, &mut k3, &mut buf);
                    for i in 0..n {
                        tmp[i] = y[i] + h * k3[i];
                    }
                    deriv(&tmp, &mut k4, &mut buf);
                    for i in 0..n {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                out[..d].copy_from_slice(&y[..d]);
                jac[..d * d].copy_from_slice(&y[d..n]);
            }
        }
    }

    /// Solves `f(q) = p` on the torus by damped Newton iteration.
    fn newton_inverse(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let mut seeds: Vec<Vec<f64>> = vec![p[..d].to_vec()];
        // first-order guess q = p - (f(p) - p)
        let mut img = vec![0.0; d];
        self.tapes.forward.eval(p, &mut img);
        seeds.push(
            (0..d)
                .map(|i| p[i] - wrap_centered(img[i] - p[i], self.periods[i]))
                .collect(),
        );
        let per_axis: usize = if d <= 2 { 6 } else if d <= 4 { 3 } else { 2 };
        let total = per_axis.pow(d as u32);
        for mut idx in 0..total {
            let mut q = Vec::with_capacity(d);
            for i in 0..d {
                q.push((idx % per_axis) as f64 / per_axis as f64 * self.periods[i]);
                idx /= per_axis;
            }
            seeds.push(q);
        }
        for seed in &seeds {
            if let Some(q) = self.newton_from(p, seed) {
                out[..d].copy_from_slice(&q);
                return Ok(());
            }
        }
        Err(Error::NotInvertible {
            point: p[..d].to_vec(),
            reason: format!("Newton iteration did not converge from {} seeds", seeds.len()),
        })
    }

    fn newton_from(&self, p: &[f64], seed: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        let tol = 1e-13 * self.periods.iter().cloned().fold(1.0, f64::max);
        let mut q = seed.to_vec();
        let mut img = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        let residual = |q: &[f64], img: &mut [f64]| -> Option<(Vec<f64>, f64)> {
            self.tapes.forward.eval(q, img);
            let r: Vec<f64> = (0..d)
                .map(|i| wrap_centered(img[i] - p[i], self.periods[i]))
                .collect();
            let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            norm.is_finite().then_some((r, norm))
        };
        let (mut r, mut norm) = residual(&q, &mut img)?;
        for _ in 0..80 {
            if norm <= tol {
                return Some(q);
            }
            self.tapes.jacobian.eval(&q, &mut jac);
            let lu = DMatrix::from_row_slice(d, d, &jac).lu();
            let step = lu.solve(&DVector::from_column_slice(&r))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = (0..d).map(|i| q[i] - t * step[i]).collect();
                if let Some((r2, n2)) = residual(&trial, &mut img) {
                    if n2 < norm || n2 <= tol {
                        q = trial;
                        r = r2;
                        norm = n2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (norm <= tol).then_some(q)
    }

    /// Compares a declared inverse with the forward map at fixed probe points.
    fn check_declared_inverse(&self) -> Result<()> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; d];
        for k in 1..=16u32 {
            for (i, xi) in x.iter_mut().enumerate() {
                // low-discrepancy probe (golden-ratio additive recurrence)
                let g = 0.618_033_988_749_894_9 * (i as f64 + 1.0).sqrt();
                *xi = (k as f64 * g).fract() * self.periods[i];
            }
            self.map_raw(&x, &mut y)?;
            self.inverse_raw(&y, &mut z)?;
            let err = crate::manifold::torus_dist_raw(&x, &z, &self.periods);
            if !(err <= 1e-8) {
                return Err(Error::Structure(format!(
                    "declared inverse does not invert the map (error {err:e} at {x:?})"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Builtins

/// Linear automorphism `x -> A x mod 1` of `T^d`.
pub fn linear_toral(a: &[Vec<i64>]) -> Result<SystemSpec> {
    let d = a.len();
    if d == 0 || a.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("integer matrix must be square and nonempty".into()));
    }
    if d > MAX_DIM {
        return Err(Error::Structure(format!("dimension {d} exceeds {MAX_DIM}")));
    }
    let m = DMatrix::from_fn(d, d, |i, j| a[i][j] as f64);
    let det = m.determinant().round();
    if det.abs() != 1.0 {
        return Err(Error::Rejected(format!(
            "|det A| = {} != 1: not a diffeomorphism of the torus",
            det.abs()
        )));
    }
    let eig = m.complex_eigenvalues();
    if let Some(l) = eig.iter().find(|l| (l.norm() - 1.0).abs() < 1e-9) {
        return Err(Error::Rejected(format!(
            "not Anosov: eigenvalue {l} lies on the unit circle"
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Rejected("matrix is singular".into()))?;
    let inv_int: Vec<Vec<i64>> = (0..d)
        .map(|i| (0..d).map(|j| inv[(i, j)].round() as i64).collect())
        .collect();
    // the rounded inverse must be exact
    for i in 0..d {
        for j in 0..d {
            let s: i64 = (0..d).map(|k| a[i][k] * inv_int[k][j]).sum();
            if s != i64::from(i == j) {
                return Err(Error::Rejected("integer inverse could not be formed".into()));
            }
        }
    }
    let linear = |rows: &[Vec<i64>]| -> Vec<Expr> {
        rows.iter()
            .map(|r| {
                r.iter().enumerate().fold(Expr::constant(0.0), |acc, (j, &c)| {
                    Expr::add(acc, Expr::mul(Expr::constant(c as f64), Expr::var(j)))
                })
            })
            .collect()
    };
    let mut spec = SystemSpec::new(
        format!("linear-toral {a:?}"),
        SystemKind::ExplicitMap,
        vec![1.0; d],
        BTreeMap::new(),
        linear(a),
        Some(linear(&inv_int)),
        Integrator::default(),
    )?;
    spec.integer_matrix = Some(a.to_vec());
    Ok(spec)
}

/// The cat map `[[2,1],[1,1]]`.
pub fn cat_map() -> SystemSpec {
    linear_toral(&[vec![2, 1], vec![1, 1]]).expect("the cat map is Anosov")
}

/// `x -> x - kappa/(2 pi) sin(2 pi x)` on the unit circle: sink at 0 with
/// derivative `1 - kappa`, source at 1/2 with derivative `1 + kappa`.
pub fn morse_smale_circle(kappa: f64) -> Result<SystemSpec> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Rejected(format!(
            "kappa = {kappa} outside (0, 1): the derivative 1 - kappa cos(2 pi x) would vanish"
        )));
    }
    let src = "x1 - kappa/(2*pi)*sin(2*pi*x1)";
    let scope = Scope {
        dim: 1,
        params: ["kappa".to_string()].into(),
    };
    let e = parse_expr(src, &scope, 1, 1)?;
    SystemSpec::new(
        format!("morse-smale kappa={kappa}"),
        SystemKind::ExplicitMap,
        vec![1.0],
        [("kappa".to_string(), kappa)].into(),
        vec![e],
        None,
        Integrator::default(),
    )
}

/// Product map `(x, y) -> (f1(x), f2(y))` on the product torus.
pub fn product(f1: &SystemSpec, f2: &SystemSpec) -> Result<SystemSpec> {
    if f1.kind != SystemKind::ExplicitMap || f2.kind != SystemKind::ExplicitMap {
        return Err(Error::Unsupported(
            "products are defined for explicit maps only".into(),
        ));
    }
    let k = f1.dim();
    let mut forward: Vec<Expr> = f1.forward.iter().map(|e| e.bind_params(&f1.params)).collect();
    forward.extend(f2.forward.iter().map(|e| e.bind_params(&f2.params).shift_vars(k)));
    let inverse = match (&f1.inverse, &f2.inverse) {
        (Some(a), Some(b)) => {
            let mut inv: Vec<Expr> = a.iter().map(|e| e.bind_params(&f1.params)).collect();
            inv.extend(b.iter().map(|e| e.bind_params(&f2.params).shift_vars(k)));
            Some(inv)
        }
        _ => None,
    };
    let mut periods = f1.periods.clone();
    periods.extend(&f2.periods);
    let mut spec = SystemSpec::new(
        format!("product({}, {})", f1.name, f2.name),
        SystemKind::ExplicitMap,
        periods,
        BTreeMap::new(),
        forward,
        inverse,
        Integrator::default(),
    )?;
    let mut params = BTreeMap::new();
    for (p, v) in &f1.params {
        params.insert(format!("f1.{p}"), *v);
    }
    for (p, v) in &f2.params {
        params.insert(format!("f2.{p}"), *v);
    }
    spec.params = params;
    spec.factors = Some(Box::new((f1.clone(), f2.clone())));
    Ok(spec)
}

/// Time-1 map of `X(x, y) = (sin(pi x), a + b cos(pi x))` on `(R/2Z)^2`.
pub fn gourmelon_potrie(a: f64, b: f64) -> Result<SystemSpec> {
    if !(0.0 < b && b < a && a < 1.0) {
        return Err(Error::Rejected(format!(
            "parameters must satisfy 0 < b < a < 1 (got a = {a}, b = {b})"
        )));
    }
    let scope = Scope {
        dim: 2,
        params: ["a".to_string(), "b".to_string()].into(),
    };
    let field = vec![
        parse_expr("sin(pi*x1)", &scope, 1, 1)?,
        parse_expr("a + b*cos(pi*x1)", &scope, 2, 1)?,
    ];
    SystemSpec::new(
        format!("gourmelon-potrie a={a} b={b}"),
        SystemKind::Time1Flow,
        vec![2.0, 2.0],
        [("a".to_string(), a), ("b".to_string(), b)].into(),
        field,
        None,
        Integrator::default(),
    )
}

// ---------------------------------------------------------------------------
// Text format

const RESERVED: [&str; 6] = ["kind", "dim", "periods", "steps", "scheme", "pi"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Forward,
    Inverse,
}

struct Statement<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

fn statements(text: &str) -> Vec<Statement<'_>> {
    let mut out = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut offset = 0;
        for piece in line.split(';') {
            let trimmed = piece.trim_start();
            let lead = piece.len() - trimmed.len();
            let body = trimmed.trim_end();
            if !body.is_empty() {
                out.push(Statement {
                    text: body,
                    line: li + 1,
                    column: line[..offset + lead].chars().count() + 1,
                });
            }
            offset += piece.len() + 1;
        }
    }
    out
}

fn syntax(st: &Statement<'_>, at: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: st.line,
        column: st.column + st.text[..at].chars().count(),
        message: message.into(),
    }
}

fn parse_real(st: &Statement<'_>, at: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(st, at, format!("expected a real number, found `{s}`")))
}

/// Parses a system definition.
///
/// Statements are separated by newlines or `;`, and `#` starts a comment.
/// Header statements contain `key=value` tokens: `kind=map|flow`, `dim=N`,
/// `periods=p1,p2,...` (a single value applies to every axis), `steps=N`
/// (flows), `scheme=rk4`, and parameters introduced by `param` or `params`,
/// as in `params a=0.5 b=0.25`. The markers `map:`, `field:` and `inverse:`
/// open expression sections; expressions before any marker belong to the
/// forward section. Each expression defines one coordinate in order.
pub fn parse_system(text: &str) -> Result<SystemSpec> {
    let stmts = statements(text);
    let mut kind: Option<SystemKind> = None;
    let mut dim: Option<usize> = None;
    let mut periods: Option<(Vec<f64>, usize, usize)> = None;
    let mut steps: Option<usize> = None;
    let mut params: BTreeMap<String, f64> = BTreeMap::new();
    let mut exprs: Vec<(Section, &Statement<'_>, usize)> = Vec::new();
    let mut section = Section::Forward;

    let mut set_kind = |k: SystemKind, st: &Statement<'_>, at: usize| -> Result<()> {
        match kind {
            Some(prev) if prev != k => Err(syntax(st, at, "conflicting system kind")),
            _ => {
                kind = Some(k);
                Ok(())
            }
        }
    };

    for st in &stmts {
        // section markers, optionally followed by an expression
        let mut body_at = 0;
        for (marker, sec, k) in [
            ("map:", Section::Forward, Some(SystemKind::ExplicitMap)),
            ("field:", Section::Forward, Some(SystemKind::Time1Flow)),
            ("inverse:", Section::Inverse, None),
        ] {
            if st.text.starts_with(marker) {
                section = sec;
                if let Some(k) = k {
                    set_kind(k, st, 0)?;
                }
                body_at = marker.len();
                break;
            }
        }
        let rest = &st.text[body_at..];
        if rest.trim().is_empty() {
            continue;
        }
        if !rest.contains('=') {
            let lead = rest.len() - rest.trim_start().len();
            exprs.push((section, st, body_at + lead));
            continue;
        }
        // header statement
        let mut in_params = false;
        let mut pos = body_at;
        for tok in rest.split_whitespace() {
            let at = pos + st.text[pos..].find(tok).unwrap_or(0);
            pos = at + tok.len();
            if tok == "param" || tok == "params" {
                in_params = true;
                continue;
            }
            let Some((key, value)) = tok.split_once('=') else {
                return Err(syntax(st, at, format!("expected key=value, found `{tok}`")));
            };
            let vat = at + key.len() + 1;
            match key {
                "kind" => {
                    let k = match value {
                        "map" | "explicit-map" => SystemKind::ExplicitMap,
                        "flow" | "time1-flow" => SystemKind::Time1Flow,
                        _ => return Err(syntax(st, vat, format!("unknown kind `{value}`"))),
                    };
                    set_kind(k, st, vat)?;
                }
                "dim" => {
                    let v: usize = value
                        .parse()
                        .map_err(|_| syntax(st, vat, format!("expected a positive integer, found `{value}`")))?;
                    dim = Some(v);
                }
                "periods" => {
                    let mut ps = Vec::new();
                    let mut off = vat;
                    for part in value.split(',') {
                        ps.push(parse_real(st, off, part)?);
                        off += part.len() + 1;
                    }
                    periods = Some((ps, st.line, st.column + vat));
                }
                "steps" => {
                    let v: usize = value
                        .parse()
                        .ok()
                        .filter(|v| *v > 0)
                        .ok_or_else(|| syntax(st, vat, format!("expected a positive integer, found `{value}`")))?;
                    steps = Some(v);
                }
                "scheme" => {
                    if value != "rk4" {
                        return Err(syntax(st, vat, format!("unknown integration scheme `{value}`")));
                    }
                }
                name => {
                    if !in_params {
                        return Err(syntax(st, at, format!("unknown header key `{name}`")));
                    }
                    let valid = name
                        .chars()
                        .next()
                        .is_some_and(|c| c.is_alphabetic() || c == '_')
                        && name.chars().all(|c| c.is_alphanumeric() || c == '_');
                    let coordinate = name
                        .strip_prefix('x')
                        .is_some_and(|r| !r.is_empty() && r.chars().all(|c| c.is_ascii_digit()));
                    if !valid
                        || coordinate
                        || RESERVED.contains(&name)
                        || ["sin", "cos", "exp", "log"].contains(&name)
                    {
                        return Err(syntax(st, at, format!("`{name}` cannot be used as a parameter name")));
                    }
                    params.insert(name.to_string(), parse_real(st, vat, value)?);
                }
            }
        }
    }

    let forward_count = exprs.iter().filter(|(s, ..)| *s == Section::Forward).count();
    let dim = dim.unwrap_or(forward_count);
    let scope = Scope {
        dim,
        params: params.keys().cloned().collect(),
    };
    let mut forward = Vec::new();
    let mut inverse = Vec::new();
    for (sec, st, at) in &exprs {
        let column = st.column + st.text[..*at].chars().count();
        let e = parse_expr(&st.text[*at..], &scope, st.line, column)?;
        match sec {
            Section::Forward => forward.push(e),
            Section::Inverse => inverse.push(e),
        }
    }
    if dim == 0 {
        return Err(Error::Structure("no expressions and no dimension given".into()));
    }
    if forward.len() != dim {
        return Err(Error::Structure(format!(
            "header declares dim={dim} but {} forward expressions were given",
            forward.len()
        )));
    }
    if !inverse.is_empty() && inverse.len() != dim {
        return Err(Error::Structure(format!(
            "header declares dim={dim} but {} inverse expressions were given",
            inverse.len()
        )));
    }
    let periods = match periods {
        None => vec![1.0; dim],
        Some((ps, _, _)) if ps.len() == 1 => vec![ps[0]; dim],
        Some((ps, line, column)) => {
            if ps.len() != dim {
                return Err(Error::Structure(format!(
                    "{line}:{column}: {} periods for dimension {dim}",
                    ps.len()
                )));
            }
            ps
        }
    };
    let kind = kind.unwrap_or(SystemKind::ExplicitMap);
    if steps.is_some() && kind != SystemKind::Time1Flow {
        return Err(Error::Structure("`steps` applies to flows only".into()));
    }
    let integrator = Integrator {
        steps: steps.unwrap_or(DEFAULT_RK4_STEPS),
        scheme: Scheme::Rk4,
    };
    SystemSpec::new(
        "user-defined",
        kind,
        periods,
        params,
        forward,
        (!inverse.is_empty()).then_some(inverse),
        integrator,
    )
}
