//! Snapshots to reduced model: POD, then intrusive projection or operator
//! inference, then DEIM.

use nalgebra::{DMatrix, DVector};

use crate::deim::{from_basis, select_deim_count, DeimMode, DeimOperator};
use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::intrusive::intrusive_rom;
use crate::models::FullOrderModel;
use crate::opinf::{
    assemble_block_operators, assemble_coupled, assemble_data, infer_continuous, infer_coupled, project_initial,
    InferredOperators,
};
use crate::pod::{block_basis_from, fix_signs, Basis, PodFactors, PodMode};
use crate::romsim::{NonlinearTerm, ReducedModel, RomKind, Structure};

use super::recipe::RomRecipe;

/// SVDs of the state and nonlinear snapshots, reusable across basis sizes.
#[derive(Debug, Clone)]
pub struct Factorizations {
    /// One entry, or one per field for block bases.
    pub state: Vec<PodFactors>,
    pub nonlinear: Option<PodFactors>,
}

fn strided(m: &DMatrix<f64>, stride: usize) -> DMatrix<f64> {
    if stride <= 1 {
        return m.clone();
    }
    let cols: Vec<usize> = (0..m.ncols()).step_by(stride).collect();
    m.select_columns(&cols)
}

/// Factorizes the training snapshots. `nonlinear` holds `f(t_j, s_j)` for
/// every trajectory column; it is computed when absent.
pub fn factorize(
    model: &FullOrderModel,
    traj: &Trajectory,
    nonlinear: Option<&DMatrix<f64>>,
    recipe: &RomRecipe,
) -> Result<Factorizations> {
    let states = strided(&traj.states, recipe.svd_stride);
    let state = if recipe.block {
        (0..model.n_fields())
            .map(|k| {
                let rows = model.field_range(k);
                PodFactors::new(&states.rows(rows.start, rows.len()).into_owned())
                    .map_err(|e| e.labeled(model.field_names[k].clone()))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![PodFactors::new(&states)?]
    };
    let nonlinear = match (&recipe.deim, model.nonlinearity.is_zero()) {
        (Some(_), false) => {
            let f = match nonlinear {
                Some(f) => strided(f, recipe.svd_stride),
                None => {
                    let cols: Vec<usize> = (0..traj.len()).step_by(recipe.svd_stride).collect();
                    crate::opinf::nonlinear_columns(model, traj, &cols)?
                }
            };
            Some(PodFactors::new(&f).map_err(|e| e.labeled("nonlinear snapshots"))?)
        }
        _ => None,
    };
    Ok(Factorizations { state, nonlinear })
}

impl Factorizations {
    pub fn basis(&self, model: &FullOrderModel, mode: PodMode) -> Result<Basis> {
        if self.state.len() == 1 {
            return Ok(Basis::Single(self.state[0].basis(mode)?));
        }
        let modes = vec![mode; self.state.len()];
        Ok(Basis::Block(block_basis_from(&self.state, &modes, &model.field_names)?))
    }

    /// DEIM basis `W` and the singular values it was cut from.
    pub fn deim_basis(&self, mode: DeimMode) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let Some(f) = &self.nonlinear else {
            return Ok(None);
        };
        let m = select_deim_count(&f.singular_values, f.shape, mode)?;
        let mut w = f.u.columns(0, m).into_owned();
        fix_signs(&mut w);
        Ok(Some((w, f.singular_values.clone())))
    }
}

/// Nonlinear-term handler for a basis: DEIM when requested and possible,
/// otherwise evaluation on the lifted state.
pub fn nonlinear_term(
    model: &FullOrderModel,
    basis: &Basis,
    deim: Option<&(DMatrix<f64>, DVector<f64>)>,
) -> Result<NonlinearTerm> {
    if model.nonlinearity.is_zero() {
        return Ok(NonlinearTerm::None);
    }
    match deim {
        Some((w, sv)) => Ok(NonlinearTerm::Deim(deim_operator(model, basis, w, sv)?)),
        None => Ok(NonlinearTerm::ExactLift),
    }
}

pub fn deim_operator(model: &FullOrderModel, basis: &Basis, w: &DMatrix<f64>, sv: &DVector<f64>) -> Result<DeimOperator> {
    from_basis(w.clone(), sv.clone(), &basis.matrix(), &model.nonlinearity).map_err(|e| e.labeled("DEIM"))
}

/// Learned operators: one fit per transported field for coupled models on a
/// block basis, a single fit otherwise.
pub fn learn_operators(
    model: &FullOrderModel,
    traj: &Trajectory,
    basis: &Basis,
    recipe: &RomRecipe,
) -> Result<(InferredOperators, Structure)> {
    match (&model.coupling, basis) {
        (Some(c), Basis::Block(_)) => {
            let fields = assemble_coupled(traj, basis, model, recipe.mask)?;
            let per_field = infer_coupled(&fields, c.eps_c, recipe.ridge)?;
            let field_blocks: Vec<usize> = c.pairs.iter().map(|p| p.0).collect();
            let ops = assemble_block_operators(&per_field, &field_blocks, &basis.column_blocks(), model.n_inputs())?;
            Ok((ops, Structure::Coupled(c.clone())))
        }
        _ => {
            let data = assemble_data(traj, basis, model, recipe.mask)?;
            let ops = infer_continuous(&data, recipe.infer_quadratic, recipe.ridge)?;
            Ok((ops, Structure::Monolithic))
        }
    }
}

/// Reduced model of either kind from precomputed pieces.
pub fn assemble_rom(
    kind: RomKind,
    model: &FullOrderModel,
    traj: &Trajectory,
    basis: &Basis,
    nonlinear: NonlinearTerm,
    recipe: &RomRecipe,
) -> Result<ReducedModel> {
    let label = format!("{kind} r={}", basis.width());
    let rom = match kind {
        RomKind::Intrusive => intrusive_rom(model, basis, nonlinear),
        RomKind::Learned => {
            let (ops, structure) = learn_operators(model, traj, basis, recipe)?;
            let mut rom = ReducedModel::new(
                RomKind::Learned,
                ops.a,
                ops.b,
                ops.h,
                nonlinear,
                basis.clone(),
                project_initial(basis, &model.s0)?,
                structure,
            )?;
            rom.residual_norm = Some(ops.residual_norm);
            rom.condition_number = Some(ops.condition_number);
            Ok(rom)
        }
    };
    rom.map_err(|e| e.labeled(label))
}

/// POD basis, operators and nonlinear handler in one pass.
pub fn build_rom(
    model: &FullOrderModel,
    traj: &Trajectory,
    nonlinear: Option<&DMatrix<f64>>,
    recipe: &RomRecipe,
) -> Result<ReducedModel> {
    recipe.validate()?;
    if recipe.block && model.n_fields() < 2 {
        return Err(Error::Config(format!("block basis needs several fields; {} has one", model.name)));
    }
    let f = factorize(model, traj, nonlinear, recipe)?;
    let basis = f.basis(model, recipe.pod)?;
    let deim = match recipe.deim {
        Some(mode) => f.deim_basis(mode)?,
        None => None,
    };
    let nl = nonlinear_term(model, &basis, deim.as_ref())?;
    assemble_rom(recipe.method, model, traj, &basis, nl, recipe)
}
