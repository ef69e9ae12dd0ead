//! Finite-alleles proposals as engine steps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Proposal, Step, StepKind};
use crate::error::{Error, Result};
use crate::model::{
    backward_transitions_pim, for_each_recursion_term, pim_log_probability, recursion_coefficient, Move,
    MutationModel, TypedSample,
};
use crate::proposals::{for_each_sd_term, GreenTable, ProposalKind};

#[derive(Debug, Clone)]
pub struct FaProposal {
    kind: ProposalKind,
    model: MutationModel,
    greens: Option<GreenTable>,
}

impl FaProposal {
    /// Prepares a proposal for samples of at most `max_size` lineages.
    pub fn new(kind: ProposalKind, model: MutationModel, max_size: u32) -> Result<Self> {
        let greens = match kind {
            ProposalKind::Sd => Some(GreenTable::build(max_size, &model)?),
            ProposalKind::PimOptimal if model.pim_q().is_none() => {
                return Err(Error::UnsupportedModel(
                    "the optimal proposal is only available for parent-independent mutation".into(),
                ))
            }
            _ => None,
        };
        Ok(Self { kind, model, greens })
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn model(&self) -> &MutationModel {
        &self.model
    }

    /// Candidate moves with `(recursion coefficient, proposal mass)`.
    pub fn candidates(&self, n: &TypedSample) -> Result<Vec<(Move, f64, f64)>> {
        let mut out = Vec::new();
        match self.kind {
            ProposalKind::Gt => for_each_recursion_term(n, &self.model, |mv, c| out.push((mv, c, c))),
            ProposalKind::Sd => {
                let table = self.greens.as_ref().expect("tables built for SD");
                if n.size() > table.max_size() {
                    return Err(Error::Domain(format!(
                        "proposal prepared for {} lineages, got {}",
                        table.max_size(),
                        n.size()
                    )));
                }
                for_each_sd_term(n, &self.model, table, &mut Vec::new(), |mv, c, q| out.push((mv, c, q)));
            }
            ProposalKind::PimOptimal => {
                for &(mv, q) in backward_transitions_pim(n, &self.model)?.moves() {
                    out.push((mv, recursion_coefficient(n, mv, &self.model), q));
                }
            }
        }
        Ok(out)
    }
}

impl Proposal for FaProposal {
    type State = TypedSample;

    fn lineages(&self, state: &TypedSample) -> u32 {
        state.size()
    }

    fn step(&self, n: &mut TypedSample, rng: &mut ChaCha8Rng) -> Result<Step> {
        let moves = self.candidates(n)?;
        let mut total = 0.0;
        for &(_, c, q) in &moves {
            if c > 0.0 && !(q > 0.0 && q.is_finite()) {
                return Err(Error::SupportViolation { state: n.to_string() });
            }
            total += q;
        }
        if moves.is_empty() || !(total > 0.0) {
            return Err(Error::DeadEnd { state: n.to_string() });
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = moves.len() - 1;
        for (k, &(_, _, q)) in moves.iter().enumerate() {
            if u < q {
                pick = k;
                break;
            }
            u -= q;
        }
        let (mv, c, q) = moves[pick];
        let log_cost = c.ln() - (q / total).ln();
        *n = n.backward(mv).ok_or_else(|| Error::DeadEnd { state: n.to_string() })?;
        Ok(Step {
            log_cost,
            kind: if mv.is_coalescence() {
                StepKind::Coalescence
            } else {
                StepKind::Mutation
            },
        })
    }

    fn log_terminal(&self, n: &TypedSample) -> f64 {
        let (i, _) = n.entries()[0];
        self.model.log_stationary(i)
    }

    fn log_exact(&self, n: &TypedSample) -> Option<f64> {
        if self.kind == ProposalKind::PimOptimal {
            pim_log_probability(n, &self.model).ok()
        } else {
            None
        }
    }

    fn nominal_theta(&self) -> f64 {
        self.model.nominal_theta()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sis::{run_sis, ResamplingPolicy, RunOptions, Schedule};

    #[test]
    fn optimal_proposal_has_constant_weights() {
        let m = MutationModel::pim(0.5, &[0.3, 0.7]).unwrap();
        let n = TypedSample::from_counts(&[3, 2]).unwrap();
        let p = FaProposal::new(ProposalKind::PimOptimal, m.clone(), 5).unwrap();
        let r = run_sis(&p, &n, &Schedule::fixed(50), &ResamplingPolicy::off(), &RunOptions::new(3)).unwrap();
        let exact = pim_log_probability(&n, &m).unwrap().exp();
        assert!(((r.estimate - exact) / exact).abs() < 1e-10);
        assert!(r.standard_error / exact < 1e-10);
        assert_eq!(r.draws, 50 * 4);
    }

    #[test]
    fn optimal_requires_pim() {
        let m = MutationModel::from_rows(0.5, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(FaProposal::new(ProposalKind::PimOptimal, m, 5).is_err());
    }
}
