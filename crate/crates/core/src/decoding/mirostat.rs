use super::{Candidate, Chooser, DecodeError, Processor, StepContext, TokenDistribution};

/// Surprise-targeting temperature control: after emitting a token with
/// probability p, `mu -= eta * (-ln p - target)` and the next frame is
/// rescaled with temperature `exp(mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MirostatState {
    pub mu: f64,
    pub target: f64,
    pub eta: f64,
    pub step: usize,
}

impl MirostatState {
    /// Starts at the fixed point `mu = target`.
    pub fn new(target: f64, eta: f64) -> Result<Self, DecodeError> {
        if !(eta > 0.0) || !target.is_finite() {
            return Err(DecodeError::BadParameter {
                processor: "mirostat",
                reason: format!("need eta > 0 and finite target (eta={eta}, target={target})"),
            });
        }
        Ok(Self {
            mu: target,
            target,
            eta,
            step: 0,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.mu.exp()
    }

    /// Updates with the emitted token's probability; returns the surprise.
    pub fn observe(&mut self, p: f64) -> Result<f64, ZeroProbability> {
        if !(p > 0.0) {
            return Err(ZeroProbability);
        }
        let s = -p.ln();
        self.mu -= self.eta * (s - self.target);
        self.step += 1;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroProbability;

/// One step: rescale with the current temperature, choose, update.
pub fn mirostat_step(
    dist: &TokenDistribution,
    state: &mut MirostatState,
    chooser: &mut Chooser,
) -> Result<(TokenDistribution, Candidate, f64), DecodeError> {
    let rescaled = dist.tempered(state.temperature())?;
    let chosen = rescaled.candidates()[chooser.choose(&rescaled)].clone();
    let s = state
        .observe(chosen.prob)
        .map_err(|_| DecodeError::ZeroProbability(chosen.id))?;
    Ok((rescaled, chosen, s))
}

pub struct Mirostat {
    pub state: MirostatState,
    pub surprises: Vec<f64>,
}

impl Mirostat {
    pub fn new(state: MirostatState) -> Self {
        Self {
            state,
            surprises: Vec::new(),
        }
    }
}

impl Processor for Mirostat {
    fn name(&self) -> &'static str {
        "mirostat"
    }

    fn transform(&mut self, dist: TokenDistribution, _ctx: &StepContext<'_>) -> Result<TokenDistribution, DecodeError> {
        Ok(dist.tempered(self.state.temperature())?)
    }

    /// Surprise is measured under the frame the token was drawn from.
    fn observe(
        &mut self,
        chosen: &Candidate,
        drawn_from: &TokenDistribution,
        _ctx: &StepContext<'_>,
    ) -> Result<(), DecodeError> {
        let p = drawn_from.get(chosen.id).map_or(0.0, |c| c.prob);
        let s = self
            .state
            .observe(p)
            .map_err(|_| DecodeError::ZeroProbability(chosen.id))?;
        self.surprises.push(s);
        Ok(())
    }
}
