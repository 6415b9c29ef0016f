use ndarray::{Array2, ArrayView2};

use crate::dataset::Condition;
use crate::diffusion::{ddim_sample, ddpm_sample, DdpmNoise, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::flow::{euler_sample, FlowGrid};
use crate::inversion::{
    ddim_invert, editfriendly_invert, flow_invert, renoise_invert, DiffusionOptions, InversionResult, NoiseMapSet,
};
use crate::model::Model;
use crate::network::Checkpoint;
use crate::numerics::RngStream;
use crate::trajectory::Trajectory;

use super::{MethodConfig, MethodName};

/// An inverted batch: deterministic latents or edit-friendly noise maps.
#[derive(Clone, Debug, PartialEq)]
pub enum Inverted {
    Latents(InversionResult),
    NoiseMaps(NoiseMapSet),
}

impl Inverted {
    pub fn latents(&self) -> &Array2<f64> {
        match self {
            Inverted::Latents(r) => &r.latents,
            Inverted::NoiseMaps(m) => &m.x_t,
        }
    }

    /// Inversion path, data → prior.
    pub fn trajectory(&self) -> &Trajectory {
        match self {
            Inverted::Latents(r) => &r.trajectory,
            Inverted::NoiseMaps(m) => &m.trajectory,
        }
    }

    pub fn as_source(&self) -> crate::inversion::Inverted<'_> {
        match self {
            Inverted::Latents(r) => crate::inversion::Inverted::Latents(r),
            Inverted::NoiseMaps(m) => crate::inversion::Inverted::NoiseMaps(m),
        }
    }
}

pub struct RoundTrip {
    pub inverted: Inverted,
    pub reconstruction: Array2<f64>,
    /// Denoising path, prior → data.
    pub denoise: Trajectory,
}

/// A model bound to one inversion method and its sampler.
pub struct Engine<'a> {
    model: &'a dyn Model,
    sched: Option<NoiseSchedule>,
    method: MethodConfig,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a dyn Model, sched: Option<NoiseSchedule>, method: MethodConfig) -> Result<Self> {
        crate::model::require_objective(model, method.name.objective())?;
        if method.name != MethodName::Euler && sched.is_none() {
            return Err(invalid("diffusion methods need a noise schedule"));
        }
        Ok(Self { model, sched, method })
    }

    pub fn from_checkpoint(ckpt: &'a Checkpoint, method: MethodConfig) -> Result<Self> {
        let expected = method.name.objective();
        if ckpt.params.objective != expected {
            return Err(Error::ObjectiveMismatch {
                expected,
                found: ckpt.params.objective,
            });
        }
        let sched = match method.name {
            MethodName::Euler => None,
            _ => Some(ckpt.schedule()?),
        };
        Self::new(&ckpt.params, sched, method)
    }

    pub fn method(&self) -> &MethodConfig {
        &self.method
    }

    pub fn schedule(&self) -> Option<&NoiseSchedule> {
        self.sched.as_ref()
    }

    fn sched(&self) -> &NoiseSchedule {
        self.sched.as_ref().expect("checked in Engine::new")
    }

    pub fn grid(&self) -> Result<FlowGrid> {
        FlowGrid::new(self.method.flow_steps)
    }

    fn options(&self) -> DiffusionOptions {
        DiffusionOptions {
            guidance: self.method.guidance,
            convention: self.method.convention,
            num_steps: self.method.num_steps,
        }
    }

    pub fn timesteps(&self) -> Result<Vec<usize>> {
        self.options().timesteps(self.sched())
    }

    pub fn invert(&self, x0: ArrayView2<'_, f64>, conds: &[Condition], rng: &mut RngStream) -> Result<Inverted> {
        let w = self.method.guidance;
        Ok(match self.method.name {
            MethodName::Ddim => Inverted::Latents(ddim_invert(self.model, x0, self.sched(), conds, &self.options())?),
            MethodName::Renoise => Inverted::Latents(renoise_invert(
                self.model,
                x0,
                self.sched(),
                conds,
                &self.options(),
                self.method.iterations,
                self.method.averaging,
            )?),
            MethodName::EditFriendly => {
                Inverted::NoiseMaps(editfriendly_invert(self.model, x0, self.sched(), conds, w, rng)?)
            }
            MethodName::Euler => Inverted::Latents(flow_invert(self.model, x0, self.grid()?, conds, w)?),
        })
    }

    /// Regenerates from an inverted batch under `conds`.
    pub fn denoise(&self, inv: &Inverted, conds: &[Condition]) -> Result<(Array2<f64>, Trajectory)> {
        let w = self.method.guidance;
        match inv {
            Inverted::Latents(r) if r.method == crate::inversion::Method::Euler => {
                euler_sample(self.model, r.latents.view(), self.grid()?, conds, w)
            }
            Inverted::Latents(r) => ddim_sample(self.model, r.latents.view(), self.sched(), &r.timesteps, conds, w),
            Inverted::NoiseMaps(m) => {
                ddpm_sample(self.model, m.x_t.view(), self.sched(), conds, DdpmNoise::Maps(&m.maps), w)
            }
        }
    }

    /// Generates from prior draws `start` with the method's sampler.
    pub fn sample(&self, start: ArrayView2<'_, f64>, conds: &[Condition], rng: &mut RngStream) -> Result<(Array2<f64>, Trajectory)> {
        let w = self.method.guidance;
        match self.method.name {
            MethodName::Euler => euler_sample(self.model, start, self.grid()?, conds, w),
            MethodName::EditFriendly => ddpm_sample(self.model, start, self.sched(), conds, DdpmNoise::Rng(rng), w),
            _ => ddim_sample(self.model, start, self.sched(), &self.timesteps()?, conds, w),
        }
    }

    pub fn round_trip(&self, x0: ArrayView2<'_, f64>, conds: &[Condition], rng: &mut RngStream) -> Result<RoundTrip> {
        let inverted = self.invert(x0, conds, rng)?;
        let (reconstruction, denoise) = self.denoise(&inverted, conds)?;
        Ok(RoundTrip {
            inverted,
            reconstruction,
            denoise,
        })
    }
}
