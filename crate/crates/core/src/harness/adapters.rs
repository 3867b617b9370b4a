use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::agent::{AdapterDescriptor, AdapterFactory, AgentError};
use crate::fixture::SCRIPT_FILE;
use crate::llm::LlmContext;
use crate::perception::mock::{ScriptedDepth, ScriptedScene, ScriptedSegmenter};
use crate::perception::{
    AdapterSet, Capability, Captioner, ClassicalFeatures, DepthEstimator, FeatureExtractor, HttpDepthEstimator,
    HttpSegmenter, Segmenter, VlmCaptioner,
};

/// Builds adapters from registry descriptors for one video.
///
/// Kinds: `http` (segmentation, depth), `vlm` (captioning through the chat
/// client), `classical` (features) and `mock`, which reads the video's
/// `script.json` and serves segmentation, depth and captioning.
pub struct RegistryFactory {
    pub llm: Arc<LlmContext>,
    pub script: Option<ScriptedScene>,
}

impl RegistryFactory {
    /// Factory for the video at `path`, picking up its script when present.
    pub fn for_video(llm: Arc<LlmContext>, path: &Path) -> Result<Self, AgentError> {
        let script_path = path.join(SCRIPT_FILE);
        let script = if script_path.is_file() {
            let text = std::fs::read_to_string(&script_path)?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| AgentError::Registry(format!("{}: {e}", script_path.display())))?,
            )
        } else {
            None
        };
        Ok(Self { llm, script })
    }

    fn script(&self, d: &AdapterDescriptor) -> Result<ScriptedScene, AgentError> {
        self.script
            .clone()
            .ok_or_else(|| AgentError::Registry(format!("adapter {} needs a {SCRIPT_FILE} next to the frames", d.id)))
    }

    fn endpoint(d: &AdapterDescriptor) -> Result<&str, AgentError> {
        d.endpoint.as_deref().ok_or_else(|| AgentError::Registry(format!("adapter {} has no endpoint", d.id)))
    }

    fn model_id(d: &AdapterDescriptor) -> &str {
        d.model_id.as_deref().unwrap_or(&d.id)
    }

    fn unsupported(d: &AdapterDescriptor) -> AgentError {
        AgentError::Registry(format!("adapter {}: kind {} cannot provide {}", d.id, d.kind, d.capability))
    }

    fn segmenter(&self, d: &AdapterDescriptor) -> Result<Arc<dyn Segmenter>, AgentError> {
        match d.kind.as_str() {
            "mock" => Ok(Arc::new(ScriptedSegmenter::new(self.script(d)?))),
            "http" => Ok(Arc::new(HttpSegmenter::new(Self::endpoint(d)?, Self::model_id(d)).map_err(AgentError::Registry)?)),
            _ => Err(Self::unsupported(d)),
        }
    }

    fn depth(&self, d: &AdapterDescriptor) -> Result<Arc<dyn DepthEstimator>, AgentError> {
        match d.kind.as_str() {
            "mock" => Ok(Arc::new(ScriptedDepth::new(self.script(d)?))),
            "http" => {
                Ok(Arc::new(HttpDepthEstimator::new(Self::endpoint(d)?, Self::model_id(d)).map_err(AgentError::Registry)?))
            }
            _ => Err(Self::unsupported(d)),
        }
    }

    fn captioner(&self, d: &AdapterDescriptor) -> Result<Arc<dyn Captioner>, AgentError> {
        match d.kind.as_str() {
            "mock" => Ok(self.script(d)?.adapters().1),
            "vlm" => Ok(Arc::new(VlmCaptioner::new(
                self.llm.client.clone(),
                Self::model_id(d),
                self.llm.params,
                self.llm.prompts.clone(),
            ))),
            _ => Err(Self::unsupported(d)),
        }
    }

    fn features(&self, d: &AdapterDescriptor) -> Result<Arc<dyn FeatureExtractor>, AgentError> {
        match d.kind.as_str() {
            "classical" | "mock" => Ok(Arc::new(ClassicalFeatures::default())),
            _ => Err(Self::unsupported(d)),
        }
    }
}

impl AdapterFactory for RegistryFactory {
    fn instantiate(&self, chosen: &BTreeMap<Capability, AdapterDescriptor>) -> Result<AdapterSet, AgentError> {
        let seg = chosen.get(&Capability::Segmentation).ok_or(AgentError::MissingCapability(Capability::Segmentation))?;
        Ok(AdapterSet {
            segmenter: self.segmenter(seg)?,
            depth_estimator: chosen.get(&Capability::Depth).map(|d| self.depth(d)).transpose()?,
            captioner: chosen.get(&Capability::Captioning).map(|d| self.captioner(d)).transpose()?,
            feature_extractor: chosen.get(&Capability::Features).map(|d| self.features(d)).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::testing::scripted;

    fn d(cap: Capability, kind: &str) -> AdapterDescriptor {
        AdapterDescriptor { id: format!("{kind}-{cap}"), capability: cap, kind: kind.into(), endpoint: None, model_id: None, priority: 0 }
    }

    #[test]
    fn mock_kind_needs_a_script() {
        let f = RegistryFactory { llm: Arc::new(scripted(&[])), script: None };
        let chosen = BTreeMap::from([(Capability::Segmentation, d(Capability::Segmentation, "mock"))]);
        assert!(f.instantiate(&chosen).is_err());
        let f = RegistryFactory { script: Some(ScriptedScene::new(4, 4)), ..f };
        assert_eq!(f.instantiate(&chosen).unwrap().capabilities().len(), 1);
    }

    #[test]
    fn kind_capability_mismatch() {
        let f = RegistryFactory { llm: Arc::new(scripted(&[])), script: Some(ScriptedScene::new(4, 4)) };
        let chosen = BTreeMap::from([
            (Capability::Segmentation, d(Capability::Segmentation, "mock")),
            (Capability::Depth, d(Capability::Depth, "vlm")),
        ]);
        assert!(f.instantiate(&chosen).err().unwrap().to_string().contains("cannot provide"));
        let chosen = BTreeMap::from([(Capability::Depth, d(Capability::Depth, "mock"))]);
        assert!(matches!(f.instantiate(&chosen), Err(AgentError::MissingCapability(Capability::Segmentation))));
    }
}
