use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, Interface, ModuleKind, ModuleManifest};
use super::decoder::DecoderNet;
use super::encoder::EncoderNet;
use crate::error::{Error, Result};
use crate::nn::{ParamLayout, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Network {
    Encoder(EncoderNet),
    Decoder(DecoderNet),
}

/// A manifest together with the network it describes and its parameters.
#[derive(Clone, Debug)]
pub struct Module {
    manifest: ModuleManifest,
    network: Network,
    layout: ParamLayout,
    params: ParamSet,
}

fn build(manifest: &ModuleManifest) -> Result<(Network, ParamLayout)> {
    manifest.validate()?;
    let mut layout = ParamLayout::new();
    let net = match &manifest.arch {
        Architecture::Encoder(a) => Network::Encoder(EncoderNet::new(&mut layout, a)?),
        Architecture::Decoder(a) => Network::Decoder(DecoderNet::new(&mut layout, a)?),
    };
    Ok((net, layout))
}

impl Module {
    /// Freshly initialised parameters drawn from `seed`.
    pub fn new(manifest: ModuleManifest, seed: u64) -> Result<Self> {
        let (network, layout) = build(&manifest)?;
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Module {
            manifest,
            network,
            layout,
            params,
        })
    }

    /// Rebuilds a module from stored `(name, tensor)` pairs.
    pub fn from_params(manifest: ModuleManifest, named: Vec<(String, Tensor)>) -> Result<Self> {
        let (network, layout) = build(&manifest)?;
        let params = ParamSet::from_named(&layout, named)?;
        Ok(Module {
            manifest,
            network,
            layout,
            params,
        })
    }

    pub fn manifest(&self) -> &ModuleManifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut ModuleManifest {
        &mut self.manifest
    }

    pub fn kind(&self) -> ModuleKind {
        self.manifest.kind
    }

    pub fn input_interface(&self) -> Interface {
        self.manifest.input_interface
    }

    pub fn output_interface(&self) -> Interface {
        self.manifest.output_interface
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn encoder(&self) -> Result<&EncoderNet> {
        match &self.network {
            Network::Encoder(e) => Ok(e),
            Network::Decoder(_) => Err(Error::Interface("module is a decoder".into())),
        }
    }

    pub fn decoder(&self) -> Result<&DecoderNet> {
        match &self.network {
            Network::Decoder(d) => Ok(d),
            Network::Encoder(_) => Err(Error::Interface("module is not a decoder".into())),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.num_scalars()
    }
}
