use super::arch::{spread_embedding_bias, ArchConfig, Architecture, StepCtx};
use super::frame::Frame;
use crate::error::{dim_err, Result};
use crate::numerics::{Matrix, ParamStore, Rng, Tape};
use crate::pf::{Proposal, ProposalDraw, Weighting};
use crate::ssm::ModelSpec;

/// A learnable family together with its parameters, usable by the filter.
pub struct LearnedProposal {
    pub arch: Box<dyn Architecture>,
    pub params: ParamStore,
    pub frame: Frame,
}

impl LearnedProposal {
    pub fn new(arch: Box<dyn Architecture>, params: ParamStore, frame: Frame) -> Self {
        Self { arch, params, frame }
    }

    /// Freshly initialized parameters for `model` over `horizon` steps.
    pub fn initialized(arch: Box<dyn Architecture>, config: &ArchConfig, model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = arch.init(model, horizon, rng)?;
        let frame = Frame::new(model, config.parametrization);
        if let (true, Some(name)) = (frame.is_anchored(), arch.embedding_bias()) {
            spread_embedding_bias(&mut params, &name)?;
        }
        Ok(Self { frame, arch, params })
    }
}

impl Proposal for LearnedProposal {
    fn name(&self) -> &str {
        self.arch.family()
    }

    fn memory_len(&self) -> usize {
        self.arch.memory_len()
    }

    fn propose(
        &self,
        model: &ModelSpec,
        t: usize,
        x_prev: &Matrix,
        memory: &Matrix,
        y: &[f64],
        rng: &mut Rng,
    ) -> Result<ProposalDraw> {
        if x_prev.cols() != model.n {
            return Err(dim_err!("particles of width {} for N={}", x_prev.cols(), model.n));
        }
        let ctx = StepCtx::new(model, &self.frame);
        let noise = self.arch.noise_kind().draw(x_prev.rows(), model.n, rng);
        let mut tape = Tape::inference(&self.params);
        let xp = tape.constant(x_prev.clone());
        let mem = (self.arch.memory_len() > 0).then(|| tape.constant(memory.clone()));
        let draw = self.arch.draw(&mut tape, &ctx, t, xp, mem, y, &noise)?;
        let memory = match draw.memory {
            Some(m) => tape.value(m).clone(),
            None => memory.clone(),
        };
        Ok(ProposalDraw {
            states: tape.value(draw.sample).clone(),
            log_q: draw.log_q,
            memory,
            weighting: Weighting::ImportanceRatio,
        })
    }

    fn notes(&self, _model: &ModelSpec) -> Vec<(String, String)> {
        vec![("parametrization".into(), self.frame.mode.to_string())]
    }
}
