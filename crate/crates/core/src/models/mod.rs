//! Full-order models `ds/dt = A s + H (s ⊗' s) + f(t, s) + B u(t)` with a
//! spatially local nonlinearity `f`, and the three benchmark discretizations.

mod chafee;
mod chromatography;
pub mod config;
mod tubular;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{self, IntegratorSpec, Jacobian, OdeSystem, Trajectory};
use crate::kronops::CompressedQuadraticOp;

pub use chafee::build_chafee;
pub use chromatography::{build_chromatography, isotherm_equilibrium, sigmoid_injection};
pub use config::{BenchmarkConfig, ChafeeConfig, ChromatographyConfig, TubularConfig};
pub use tubular::{arrhenius, build_tubular};

/// Evaluates the nonlinearity of one cell: `(t, cell, values, out)` where
/// `values` and `out` have one entry per physical field.
pub type CellFn = dyn Fn(f64, usize, &[f64], &mut [f64]) -> Result<()> + Send + Sync;

/// A nonlinearity whose output at a spatial cell depends only on the state
/// at that cell. The stacked state stores field `k` of cell `c` at
/// `k * n_cells + c`.
#[derive(Clone)]
pub struct LocalNonlinearity {
    n_fields: usize,
    n_cells: usize,
    /// For each output field, the fields of the same cell it reads.
    reads: Vec<Vec<usize>>,
    eval: Arc<CellFn>,
}

impl fmt::Debug for LocalNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalNonlinearity")
            .field("n_fields", &self.n_fields)
            .field("n_cells", &self.n_cells)
            .field("reads", &self.reads)
            .finish()
    }
}

impl LocalNonlinearity {
    pub fn new(n_fields: usize, n_cells: usize, reads: Vec<Vec<usize>>, eval: Arc<CellFn>) -> Result<Self> {
        if n_fields == 0 || n_cells == 0 {
            return Err(Error::Config("nonlinearity needs at least one field and cell".into()));
        }
        check_dim("nonlinearity read map", n_fields, reads.len())?;
        if reads.iter().flatten().any(|&f| f >= n_fields) {
            return Err(Error::Config("nonlinearity reads a field that does not exist".into()));
        }
        Ok(Self {
            n_fields,
            n_cells,
            reads,
            eval,
        })
    }

    /// `f ≡ 0` on a single-field grid of `n` cells.
    pub fn zero(n: usize) -> Self {
        Self {
            n_fields: 1,
            n_cells: n,
            reads: vec![Vec::new()],
            eval: Arc::new(|_, _, _, out: &mut [f64]| {
                out.fill(0.0);
                Ok(())
            }),
        }
    }

    /// Applies the same scalar function to every entry of an `n`-vector.
    pub fn pointwise<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            n_fields: 1,
            n_cells: n,
            reads: vec![vec![0]],
            eval: Arc::new(move |t, _, v: &[f64], out: &mut [f64]| {
                out[0] = f(t, v[0]);
                Ok(())
            }),
        }
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dim(&self) -> usize {
        self.n_fields * self.n_cells
    }

    pub fn is_zero(&self) -> bool {
        self.reads.iter().all(Vec::is_empty)
    }

    #[inline]
    pub fn index(&self, field: usize, cell: usize) -> usize {
        field * self.n_cells + cell
    }

    #[inline]
    pub fn locate(&self, row: usize) -> (usize, usize) {
        (row / self.n_cells, row % self.n_cells)
    }

    /// State indices read by output row `row`; all lie in the same cell.
    pub fn dependency_map(&self, row: usize) -> Vec<usize> {
        let (field, cell) = self.locate(row);
        self.reads[field].iter().map(|&f| self.index(f, cell)).collect()
    }

    /// Evaluates the stacked nonlinearity at every row.
    pub fn eval(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("nonlinearity state", self.dim(), s.len())?;
        if self.is_zero() {
            out.fill(0.0);
            return Ok(());
        }
        let mut vals = vec![0.0; self.n_fields];
        let mut res = vec![0.0; self.n_fields];
        for cell in 0..self.n_cells {
            for (k, v) in vals.iter_mut().enumerate() {
                *v = s[self.index(k, cell)];
            }
            (self.eval)(t, cell, &vals, &mut res)?;
            for (k, r) in res.iter().enumerate() {
                out[self.index(k, cell)] = *r;
            }
        }
        Ok(())
    }

    /// Evaluates only the listed rows, fetching state entries through
    /// `accessor`. Each required state index is queried once.
    pub fn eval_rows(
        &self,
        t: f64,
        accessor: &mut dyn FnMut(usize) -> f64,
        rows: &[usize],
        out: &mut [f64],
    ) -> Result<()> {
        check_dim("nonlinear row output", rows.len(), out.len())?;
        let mut vals = vec![0.0; self.n_fields];
        let mut res = vec![0.0; self.n_fields];
        let mut needed = vec![false; self.n_fields];
        // rows that share a cell are evaluated together
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&k| (self.locate(rows[k]).1, k));
        let mut k = 0;
        while k < order.len() {
            let cell = self.locate(rows[order[k]]).1;
            let mut end = k;
            needed.fill(false);
            while end < order.len() && self.locate(rows[order[end]]).1 == cell {
                let row = rows[order[end]];
                if row >= self.dim() {
                    return Err(Error::InvalidInput(format!("row {row} out of range")));
                }
                for &f in &self.reads[self.locate(row).0] {
                    needed[f] = true;
                }
                end += 1;
            }
            for f in 0..self.n_fields {
                vals[f] = if needed[f] { accessor(self.index(f, cell)) } else { 0.0 };
            }
            (self.eval)(t, cell, &vals, &mut res)?;
            for &o in &order[k..end] {
                out[o] = res[self.locate(rows[o]).0];
            }
            k = end;
        }
        Ok(())
    }

    /// Finite-difference Jacobian triplets, one `n_fields × n_fields` block per cell.
    fn jacobian_triplets(&self, t: f64, s: &[f64], coo: &mut CooMatrix<f64>) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        let nf = self.n_fields;
        let mut vals = vec![0.0; nf];
        let mut base = vec![0.0; nf];
        let mut pert = vec![0.0; nf];
        for cell in 0..self.n_cells {
            for (k, v) in vals.iter_mut().enumerate() {
                *v = s[self.index(k, cell)];
            }
            (self.eval)(t, cell, &vals, &mut base)?;
            for j in 0..nf {
                if !self.reads.iter().any(|r| r.contains(&j)) {
                    continue;
                }
                let orig = vals[j];
                let h = f64::EPSILON.sqrt() * orig.abs().max(1.0);
                vals[j] = orig + h;
                (self.eval)(t, cell, &vals, &mut pert)?;
                vals[j] = orig;
                for i in 0..nf {
                    if self.reads[i].contains(&j) {
                        coo.push(self.index(i, cell), self.index(j, cell), (pert[i] - base[i]) / h);
                    }
                }
            }
        }
        Ok(())
    }
}

type InputFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Input signal `u(t)` with a fixed number of channels.
#[derive(Clone)]
pub struct InputSignal {
    channels: usize,
    f: Arc<InputFn>,
}

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InputSignal({} channels)", self.channels)
    }
}

impl InputSignal {
    pub fn new<F>(channels: usize, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            channels,
            f: Arc::new(f),
        }
    }

    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, move |t, out| out[0] = f(t))
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self::new(values.len(), move |_, out| out.copy_from_slice(&values))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        (self.f)(t, out)
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.channels);
        (self.f)(t, out.as_mut_slice());
        out
    }

    pub fn sample(&self, times: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.channels, times.len());
        for (j, &t) in times.iter().enumerate() {
            (self.f)(t, out.column_mut(j).as_mut_slice());
        }
        out
    }
}

/// Field layout of a model whose "c" fields carry linear dynamics plus a
/// scaled copy of the nonlinearity of their paired "q" fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledStructure {
    /// `(c_field, q_field)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Scale of the q-field nonlinearity in the c-field equation.
    pub eps_c: f64,
}

#[derive(Debug, Clone)]
pub struct FullOrderModel {
    pub name: String,
    pub field_names: Vec<String>,
    pub a: CsrMatrix<f64>,
    pub h: Option<CompressedQuadraticOp>,
    pub nonlinearity: LocalNonlinearity,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub s0: DVector<f64>,
    pub input: InputSignal,
    pub coupling: Option<CoupledStructure>,
    /// Learned ROMs infer a quadratic operator unless this is off.
    pub infer_quadratic: bool,
}

impl FullOrderModel {
    /// Checks that every operator agrees with the state, input and output sizes.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        check_dim("A rows", n, self.a.nrows())?;
        check_dim("A columns", n, self.a.ncols())?;
        if let Some(h) = &self.h {
            check_dim("H rows", n, h.rows())?;
            check_dim("H state dimension", n, h.dim())?;
        }
        check_dim("nonlinearity dimension", n, self.nonlinearity.dim())?;
        check_dim("B rows", n, self.b.nrows())?;
        check_dim("B columns", self.input.channels(), self.b.ncols())?;
        check_dim("C columns", n, self.c.ncols())?;
        if self.field_names.len() != self.nonlinearity.n_fields() {
            return Err(Error::Config("one name per field required".into()));
        }
        if let Some(cs) = &self.coupling {
            let nf = self.nonlinearity.n_fields();
            if cs.pairs.iter().any(|&(c, q)| c >= nf || q >= nf || c == q) {
                return Err(Error::Config("invalid coupled field pairs".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.s0.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input.channels()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_fields(&self) -> usize {
        self.nonlinearity.n_fields()
    }

    pub fn n_cells(&self) -> usize {
        self.nonlinearity.n_cells()
    }

    /// Row range of one physical field in the stacked state.
    pub fn field_range(&self, field: usize) -> std::ops::Range<usize> {
        let nc = self.n_cells();
        field * nc..(field + 1) * nc
    }

    /// `A s + H (s ⊗' s) + f(t, s) + B u(t)`.
    pub fn rhs(&self, t: f64, s: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n());
        self.rhs_into(t, s, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn rhs_into(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("FOM state", self.n(), s.len())?;
        self.nonlinearity.eval(t, s, out)?;
        for (r, row) in self.a.row_iter().enumerate() {
            let mut acc = 0.0;
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                acc += v * s[c];
            }
            out[r] += acc;
        }
        if let Some(h) = &self.h {
            h.apply_add(s, out)?;
        }
        let mut u = vec![0.0; self.n_inputs()];
        self.input.eval_into(t, &mut u);
        for (j, &uj) in u.iter().enumerate() {
            if uj != 0.0 {
                for (o, bij) in out.iter_mut().zip(self.b.column(j).iter()) {
                    *o += bij * uj;
                }
            }
        }
        Ok(())
    }

    /// Stacked nonlinearity `f(t, s)`.
    pub fn eval_nonlinear(&self, t: f64, s: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n());
        self.nonlinearity.eval(t, s, out.as_mut_slice())?;
        Ok(out)
    }

    /// Selected rows of `f(t, s)` with state access through `accessor`.
    pub fn eval_nonlinear_rows(
        &self,
        t: f64,
        accessor: &mut dyn FnMut(usize) -> f64,
        rows: &[usize],
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(rows.len());
        self.nonlinearity.eval_rows(t, accessor, rows, out.as_mut_slice())?;
        Ok(out)
    }

    /// Nonlinear snapshot matrix: column `j` is `f(t_j, S[:, j])`.
    pub fn nonlinear_snapshots(&self, times: &[f64], states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("snapshot rows", self.n(), states.nrows())?;
        check_dim("snapshot columns", times.len(), states.ncols())?;
        let mut out = DMatrix::zeros(self.n(), times.len());
        for (j, &t) in times.iter().enumerate() {
            let col = states.column(j);
            self.nonlinearity
                .eval(t, col.as_slice(), out.column_mut(j).as_mut_slice())?;
        }
        Ok(out)
    }

    pub fn outputs(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        &self.c * states
    }

    /// Simulates the model and samples it on `times`.
    pub fn simulate(&self, times: &[f64], spec: &IntegratorSpec) -> Result<Trajectory> {
        let states = integrate::integrate(self, &self.s0, times, spec)
            .map_err(|e| e.labeled(format!("{} full-order simulation", self.name)))?;
        Trajectory::new(times.to_vec(), states, self.input.sample(times))
    }
}

impl OdeSystem for FullOrderModel {
    fn dim(&self) -> usize {
        self.n()
    }

    fn rhs(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        self.rhs_into(t, s, out)
    }

    fn jacobian(&self, t: f64, s: &[f64]) -> Result<Jacobian> {
        let n = self.n();
        let mut coo = CooMatrix::new(n, n);
        for (r, c, &v) in self.a.triplet_iter() {
            coo.push(r, c, v);
        }
        if let Some(h) = &self.h {
            h.jacobian_triplets(s, &mut coo);
        }
        self.nonlinearity.jacobian_triplets(t, s, &mut coo)?;
        Ok(Jacobian::Sparse(CsrMatrix::from(&coo)))
    }
}

/// Builds the model described by a benchmark configuration.
pub fn build(cfg: &BenchmarkConfig) -> Result<FullOrderModel> {
    let model = match cfg {
        BenchmarkConfig::Chafee(c) => build_chafee(c)?,
        BenchmarkConfig::Tubular(c) => build_tubular(c)?,
        BenchmarkConfig::Chromatography(c) => build_chromatography(c)?,
    };
    model.validate()?;
    Ok(model)
}

/// Sparse matrix from triplets; duplicates are summed.
pub(crate) fn csr_from_triplets(n: usize, m: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n, m);
    for &(r, c, v) in triplets {
        coo.push(r, c, v);
    }
    CsrMatrix::from(&coo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> FullOrderModel {
        let n = 3;
        FullOrderModel {
            name: "tiny".into(),
            field_names: vec!["s".into()],
            a: csr_from_triplets(n, n, &[(0, 0, -1.0), (1, 1, -2.0), (2, 2, -3.0), (0, 1, 0.5)]),
            h: None,
            nonlinearity: LocalNonlinearity::pointwise(n, |_, s| -s * s * s),
            b: DMatrix::from_column_slice(n, 1, &[1.0, 0.0, 2.0]),
            c: DMatrix::from_row_slice(1, n, &[0.0, 0.0, 1.0]),
            s0: DVector::zeros(n),
            input: InputSignal::scalar(|t| t),
            coupling: None,
            infer_quadratic: false,
        }
    }

    #[test]
    fn zero_model_has_zero_rhs() {
        let n = 4;
        let m = FullOrderModel {
            name: "zero".into(),
            field_names: vec!["s".into()],
            a: CsrMatrix::zeros(n, n),
            h: None,
            nonlinearity: LocalNonlinearity::zero(n),
            b: DMatrix::zeros(n, 1),
            c: DMatrix::zeros(1, n),
            s0: DVector::zeros(n),
            input: InputSignal::constant(vec![0.0]),
            coupling: None,
            infer_quadratic: false,
        };
        m.validate().unwrap();
        assert_eq!(m.rhs(0.3, &[1.0, 2.0, 3.0, 4.0]).unwrap(), DVector::zeros(n));
    }

    #[test]
    fn input_superposition() {
        let mut m = tiny_model();
        let s = [0.1, -0.2, 0.3];
        let r1 = m.rhs(1.5, &s).unwrap();
        m.input = InputSignal::scalar(|t| 2.0 * t);
        let r2 = m.rhs(1.5, &s).unwrap();
        let bu = m.b.column(0) * 1.5;
        assert!((r2 - (r1 + bu)).norm() < 1e-15);
    }

    #[test]
    fn rhs_is_bitwise_deterministic() {
        let m = tiny_model();
        let s = [0.1, -0.2, 0.3];
        let a = m.rhs(0.7, &s).unwrap();
        let b = m.rhs(0.7, &s).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rows_match_full_evaluation() {
        let m = tiny_model();
        let s = [0.5, -1.5, 2.0];
        let full = m.eval_nonlinear(0.0, &s).unwrap();
        let mut acc = |i: usize| s[i];
        let rows = m.eval_nonlinear_rows(0.0, &mut acc, &[2, 0, 1]).unwrap();
        assert_eq!(rows.as_slice(), &[full[2], full[0], full[1]]);
    }

    #[test]
    fn row_evaluation_touches_only_dependencies() {
        let m = tiny_model();
        let s = [0.5, -1.5, 2.0];
        let mut touched = Vec::new();
        let mut acc = |i: usize| {
            touched.push(i);
            s[i]
        };
        let v = m.eval_nonlinear_rows(0.0, &mut acc, &[1]).unwrap();
        assert_eq!(v[0], 1.5f64.powi(3));
        assert_eq!(touched, vec![1]);
    }

    #[test]
    fn validate_catches_shape_errors() {
        let mut m = tiny_model();
        m.b = DMatrix::zeros(2, 1);
        assert!(m.validate().is_err());
    }

    #[test]
    fn sparse_jacobian_matches_dense_fd() {
        let m = tiny_model();
        let s = [0.5, -1.5, 2.0];
        let Jacobian::Sparse(j) = m.jacobian(0.1, &s).unwrap() else {
            panic!("expected sparse")
        };
        let fd = integrate::dense_fd_jacobian(&m, 0.1, &s).unwrap();
        let mut dense = DMatrix::zeros(3, 3);
        for (r, c, &v) in j.triplet_iter() {
            dense[(r, c)] += v;
        }
        assert!((dense - fd).abs().max() < 1e-5);
    }
}
