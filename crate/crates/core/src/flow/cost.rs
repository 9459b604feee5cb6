use alloc::format;
use alloc::string::String;

use super::FlowConfig;
use crate::integrals::binomial;
use crate::{Error, Result};

/// Block solver whose cost is being bounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruncatedSolver {
    Ccsdt,
    Ccsdtq,
}

impl TruncatedSolver {
    fn excitation_order(self) -> usize {
        match self {
            TruncatedSolver::Ccsdt => 3,
            TruncatedSolver::Ccsdtq => 4,
        }
    }
}

/// Prefactors of the two bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConstants {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants { alpha: 1.0, beta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    pub warning: Option<String>,
}

/// `α·M·C(y,3)·n_v²` (triples) or `β·M·C(y,4)·n_v²` (quadruples).
pub fn cost_bound(blocks: usize, y: usize, n_v: usize, solver: TruncatedSolver, k: CostConstants) -> CostEstimate {
    let order = solver.excitation_order();
    if y < order {
        let warning = format!("active virtual count {y} is below {order}; the bound is zero");
        log::warn!("{warning}");
        return CostEstimate { value: 0.0, warning: Some(warning) };
    }
    let prefactor = match solver {
        TruncatedSolver::Ccsdt => k.alpha,
        TruncatedSolver::Ccsdtq => k.beta,
    };
    let value = prefactor * blocks as f64 * binomial(y, order) as f64 * (n_v * n_v) as f64;
    CostEstimate { value, warning: None }
}

/// Cost bound of a flow whose blocks all carry the same number of active
/// virtual orbitals.
pub fn cost_estimate(cfg: &FlowConfig, solver: TruncatedSolver, n_v: usize, k: CostConstants) -> Result<CostEstimate> {
    let first = cfg.subalgebras.first().ok_or_else(|| Error::usage("flow has no sub-algebras"))?;
    let y = first.y();
    if let Some(h) = cfg.subalgebras.iter().find(|h| h.y() != y) {
        return Err(Error::usage(format!("non-uniform active virtual count: {h} has {} instead of {y}", h.y())));
    }
    Ok(cost_bound(cfg.subalgebras.len(), y, n_v, solver, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{SubAlgebra, VirtualSelection};
    use crate::fock::SpinOrbitalBasis;

    #[test]
    fn bound_arithmetic() {
        let k = CostConstants::default();
        assert_eq!(cost_bound(10, 4, 20, TruncatedSolver::Ccsdt, k).value, 16000.0);
        assert_eq!(cost_bound(1, 4, 20, TruncatedSolver::Ccsdtq, k).value, 400.0);
        let low = cost_bound(3, 2, 20, TruncatedSolver::Ccsdt, k);
        assert_eq!(low.value, 0.0);
        assert!(low.warning.is_some());
        let a = cost_bound(1, 5, 7, TruncatedSolver::Ccsdt, k).value;
        let b = cost_bound(6, 5, 7, TruncatedSolver::Ccsdt, k).value;
        assert_eq!(b, 6.0 * a);
    }

    #[test]
    fn estimate_requires_uniform_y() {
        let basis = SpinOrbitalBasis::new(8, 4).unwrap();
        let a = SubAlgebra::new(basis, &[0], VirtualSelection::Set(alloc::vec![2, 3, 4])).unwrap();
        let b = SubAlgebra::new(basis, &[1], VirtualSelection::Set(alloc::vec![2, 3, 4])).unwrap();
        let c = SubAlgebra::new(basis, &[1], VirtualSelection::Set(alloc::vec![2, 3])).unwrap();
        let cfg = FlowConfig::new(alloc::vec![a.clone(), b]);
        let est = cost_estimate(&cfg, TruncatedSolver::Ccsdt, 6, CostConstants { alpha: 2.0, beta: 1.0 }).unwrap();
        assert_eq!(est.value, 2.0 * 2.0 * 1.0 * 36.0);
        let mixed = FlowConfig::new(alloc::vec![a, c]);
        assert!(cost_estimate(&mixed, TruncatedSolver::Ccsdt, 6, CostConstants::default()).is_err());
    }
}
