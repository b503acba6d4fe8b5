use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    assemble_inference_sequence, extract_representations, Backbone, PrefixState, RepresentationPair,
};
use crate::config::ModelConfig;
use crate::encoder::ModalityEncoder;
use crate::error::{IcadError, Result};
use crate::nn::{join, Params};
use crate::real::Real;
use crate::sample::Sample;

/// Encoders plus backbone: every learnable parameter of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct IcadModel<F> {
    pub config: ModelConfig,
    pub encoder: ModalityEncoder<F>,
    pub backbone: Backbone<F>,
}

impl<F: Real> IcadModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ModalityEncoder::new(&config, &mut rng);
        let backbone = Backbone::new(&config, &mut rng);
        Ok(IcadModel {
            config,
            encoder,
            backbone,
        })
    }

    /// Same parameters at another precision.
    pub fn cast<G: Real>(&self) -> IcadModel<G> {
        let mut out = IcadModel::<G>::new(self.config.clone(), 0).expect("config already validated");
        let flat: Vec<G> = self.flatten().into_iter().map(|v| G::from_f64(v.as_f64())).collect();
        out.assign_flat(&flat);
        out
    }

    fn encode_refs(&self, refs: &[Sample]) -> Result<ndarray::Array2<F>> {
        Ok(self.encoder.encode_reference_set(refs)?.vectors)
    }

    /// Representations from one full inference sequence.
    pub fn representations(&self, refs: &[Sample], target: &Sample) -> Result<RepresentationPair<F>> {
        check_same_modality(refs, target)?;
        let e_ref = self.encode_refs(refs)?;
        let e_tgt = self.encoder.encode(target)?.vectors;
        let (seq, anchors) = assemble_inference_sequence(
            self.backbone.prompt.view(),
            e_ref.view(),
            e_tgt.view(),
            &self.backbone.tokens,
        )?;
        let (hidden, _) = self.backbone.forward_anchored(seq.view(), anchors, None)?;
        extract_representations(hidden.view(), anchors)
    }

    /// Run `[prompt; refs; REF_TOK]` once; `state.last` is `h_R`.
    pub fn reference_state(&self, refs: &[Sample]) -> Result<PrefixState<F>> {
        let e_ref = self.encode_refs(refs)?;
        let sample_len = e_ref.nrows() / refs.len().max(1);
        self.backbone.reference_state(e_ref.view(), sample_len)
    }

    /// `h_x` for a target given a cached reference prefix.
    pub fn target_representation(&self, state: &PrefixState<F>, target: &Sample) -> Result<Array1<F>> {
        let e_tgt = self.encoder.encode(target)?.vectors;
        self.backbone.target_representation(state, e_tgt.view())
    }
}

pub(crate) fn check_same_modality(refs: &[Sample], target: &Sample) -> Result<()> {
    match refs.first() {
        None => Err(IcadError::Contract("reference set is empty".into())),
        Some(r) if r.modality() != target.modality() => Err(IcadError::Contract(format!(
            "target modality {} does not match reference modality {}",
            target.modality(),
            r.modality()
        ))),
        Some(_) => Ok(()),
    }
}

impl<F: Real> Params<F> for IcadModel<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.backbone.visit(&join(prefix, "backbone"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
    }
}
