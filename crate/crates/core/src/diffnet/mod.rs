//! Dense MLPs with the derivatives the Stein objectives need: forward
//! evaluation, input JVPs/VJPs, and parameter gradients of scalars that mix
//! primal outputs with directional derivatives (reverse-over-forward).

mod activation;
mod net;
mod ops;
mod tape;

pub use activation::Activation;
pub use net::{MlpNet, ParamVector};
pub use ops::{EnergyPairBatch, EnergyPairGrad, LsdeBatch, LsdeGrad, Vjp};
pub use tape::DropoutMasks;

use crate::container::{Container, Kind};
use crate::{Error, Real, Result};

impl<T: Real> MlpNet<T> {
    pub fn to_container(&self) -> Container {
        Container::new(
            Kind::Net,
            self.activation().tag(),
            self.dims().iter().map(|&d| d as u64).collect(),
            self.to_params().0.iter().copied(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Kind::Net)?;
        let act = Activation::from_tag(c.activation).ok_or(Error::Format {
            offset: 8,
            message: format!("unknown activation tag {}", c.activation),
        })?;
        let dims: Vec<usize> = c.shape.iter().map(|&d| d as usize).collect();
        let mut net = MlpNet::zeros(&dims, act)?;
        c.expect_params(net.num_params())?;
        net.set_params(&ParamVector(c.params_as::<T>().into()))?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }
}
