//! Clients for perception models served over HTTP.
//!
//! Frames travel as base64 PNG; masks as column-major RLE.
//!
//! | endpoint          | request                           | response                                   |
//! |-------------------|-----------------------------------|--------------------------------------------|
//! | `POST /segment`   | `{frame, t}`                      | `{detections: [{mask, confidence}]}`       |
//! | `POST /propagate` | `{frame, t, memory: {id: mask}}`  | `{masks: {id: mask}}`                      |
//! | `POST /depth`     | `{frame, t}`                      | `{height, width, values}`                  |

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::Deserialize;
use serde_json::{json, Value};

use super::vlm::png_bytes;
use super::{AdapterResult, DepthEstimator, DepthMap, Detection, Segmenter, TrackMemory};
use crate::dtcore::{decode_rle, Bitmap, MaskRle};
use crate::modelio::blocking_client;

struct Endpoint {
    base_url: String,
    model_id: String,
    http: reqwest::blocking::Client,
}

impl Endpoint {
    fn new(base_url: &str, model_id: &str) -> AdapterResult<Self> {
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id: model_id.to_string(),
            http: blocking_client(Duration::from_secs(300))?,
        })
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, body: &Value) -> AdapterResult<T> {
        let resp = self
            .http
            .post(format!("{}/{path}", self.base_url))
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("{path} returned {status}: {text}"));
        }
        serde_json::from_str(&text).map_err(|e| format!("{path}: unparsable reply ({e})"))
    }
}

fn frame_b64(frame: &RgbImage) -> AdapterResult<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(png_bytes(frame)?))
}

fn decode(mask: &MaskRle) -> AdapterResult<Bitmap> {
    decode_rle(mask).map_err(|e| e.to_string())
}

pub struct HttpSegmenter {
    endpoint: Endpoint,
}

impl HttpSegmenter {
    pub fn new(base_url: &str, model_id: &str) -> AdapterResult<Self> {
        Ok(Self { endpoint: Endpoint::new(base_url, model_id)? })
    }
}

#[derive(Deserialize)]
struct WireDetection {
    mask: MaskRle,
    confidence: f64,
}

#[derive(Deserialize)]
struct SegmentReply {
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
struct PropagateReply {
    masks: BTreeMap<String, MaskRle>,
}

impl Segmenter for HttpSegmenter {
    fn model_id(&self) -> String {
        self.endpoint.model_id.clone()
    }

    fn segment(&self, t: u32, frame: &RgbImage) -> AdapterResult<Vec<Detection>> {
        let reply: SegmentReply = self.endpoint.post("segment", &json!({ "frame": frame_b64(frame)?, "t": t }))?;
        reply
            .detections
            .iter()
            .map(|d| Ok(Detection { mask: decode(&d.mask)?, confidence: d.confidence }))
            .collect()
    }

    fn propagate(&self, t: u32, frame: &RgbImage, memory: &TrackMemory) -> AdapterResult<BTreeMap<String, Bitmap>> {
        let mem: BTreeMap<&String, &MaskRle> = memory.tracks.iter().map(|(id, tr)| (id, &tr.mask)).collect();
        let reply: PropagateReply = self
            .endpoint
            .post("propagate", &json!({ "frame": frame_b64(frame)?, "t": t, "memory": mem }))?;
        reply.masks.iter().map(|(id, m)| Ok((id.clone(), decode(m)?))).collect()
    }
}

pub struct HttpDepthEstimator {
    endpoint: Endpoint,
}

impl HttpDepthEstimator {
    pub fn new(base_url: &str, model_id: &str) -> AdapterResult<Self> {
        Ok(Self { endpoint: Endpoint::new(base_url, model_id)? })
    }
}

impl DepthEstimator for HttpDepthEstimator {
    fn model_id(&self) -> String {
        self.endpoint.model_id.clone()
    }

    fn estimate(&self, t: u32, frame: &RgbImage) -> AdapterResult<DepthMap> {
        let map: DepthMap = self.endpoint.post("depth", &json!({ "frame": frame_b64(frame)?, "t": t }))?;
        DepthMap::new(map.height, map.width, map.values).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_http::serve;

    #[test]
    fn segment_and_depth_wire_format() {
        let seg = r#"{"detections":[{"mask":{"size":[2,2],"counts":[1,2,1]},"confidence":0.8}]}"#;
        let depth = r#"{"height":2,"width":2,"values":[1,2,3,4]}"#;
        let (base, server) = serve(vec![(200, seg.into()), (200, depth.into())]);
        let frame = RgbImage::new(2, 2);
        let s = HttpSegmenter::new(&base, "sam").unwrap();
        let d = s.segment(3, &frame).unwrap();
        assert_eq!(d[0].mask.area(), 2);
        assert!(d[0].mask.get(1, 0) && d[0].mask.get(0, 1));
        let e = HttpDepthEstimator::new(&base, "depth").unwrap();
        assert_eq!(e.estimate(3, &frame).unwrap().values, vec![1.0, 2.0, 3.0, 4.0]);
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["t"], 3);
        assert!(sent["frame"].as_str().unwrap().len() > 10);
    }

    #[test]
    fn service_error_is_reported() {
        let (base, server) = serve(vec![(500, "boom".into())]);
        let e = HttpDepthEstimator::new(&base, "depth").unwrap();
        assert!(e.estimate(1, &RgbImage::new(1, 1)).unwrap_err().contains("500"));
        server.join().unwrap();
    }
}
