use std::io::Cursor;
use std::sync::Arc;

use image::RgbImage;

use super::{AdapterResult, Captioner};
use crate::dtcore::Bitmap;
use crate::modelio::{ChatRequest, ImageAttachment, Message, ModelClient, SamplingParams};
use crate::prompts::PromptSet;

pub(crate) fn png_bytes(image: &RgbImage) -> AdapterResult<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(buf.into_inner())
}

/// `(x, y, w, h)` of the set pixels.
fn bbox(mask: &Bitmap) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for (y, x) in mask.pixels() {
        b = Some(match b {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    b.map(|(x0, y0, x1, y1)| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Captioner backed by a vision-language chat model.
pub struct VlmCaptioner {
    client: Arc<ModelClient>,
    model: String,
    params: SamplingParams,
    prompts: Arc<PromptSet>,
}

impl VlmCaptioner {
    pub fn new(client: Arc<ModelClient>, model: impl Into<String>, params: SamplingParams, prompts: Arc<PromptSet>) -> Self {
        Self { client, model: model.into(), params, prompts }
    }

    fn ask(&self, text: String, images: &[&RgbImage]) -> AdapterResult<String> {
        let mut msg = Message::user(text);
        for img in images {
            msg = msg.with_image(ImageAttachment::png(png_bytes(img)?));
        }
        let req = ChatRequest::new(self.model.clone(), vec![msg], self.params);
        self.client
            .chat(&req)
            .map(|r| r.text.trim().to_string())
            .map_err(|e| e.to_string())
    }
}

impl Captioner for VlmCaptioner {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn describe_instance(&self, _t: u32, frame: &RgbImage, mask: &Bitmap) -> AdapterResult<String> {
        let (x, y, w, h) = bbox(mask).ok_or("empty mask")?;
        let text = self.prompts.render(
            "perception/instance",
            &[
                ("bbox", &format!("({x}, {y}, {w}, {h})")),
                ("width", &frame.width().to_string()),
                ("height", &frame.height().to_string()),
            ],
        );
        self.ask(text, &[frame])
    }

    fn describe_scene(&self, _t: u32, frame: &RgbImage) -> AdapterResult<String> {
        self.ask(self.prompts.render("perception/scene", &[]), &[frame])
    }

    fn describe_video(&self, keyframes: &[(u32, &RgbImage)]) -> AdapterResult<String> {
        let images: Vec<&RgbImage> = keyframes.iter().map(|(_, img)| *img).collect();
        self.ask(self.prompts.render("perception/video", &[]), &images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::{ChatResponse, FnBackend, Transcript, TranscriptMode};

    #[test]
    fn replayed_caption_is_returned_verbatim() {
        let transcript = Arc::new(Transcript::in_memory());
        let live = ModelClient::new(TranscriptMode::Record, transcript.clone())
            .with_chat(Arc::new(FnBackend::new(|r: &ChatRequest| {
                assert_eq!(r.messages[0].images.len(), 1);
                assert!(r.messages[0].content.contains("(1, 2, 3, 1)"));
                Ok(ChatResponse::stop(" a small brown dog "))
            })));
        let frame = RgbImage::new(8, 6);
        let mask = Bitmap::from_fn(6, 8, |y, x| y == 2 && (1..4).contains(&x));
        let cap = VlmCaptioner::new(Arc::new(live), "vlm", SamplingParams::default(), Arc::new(PromptSet::default()));
        assert_eq!(cap.describe_instance(1, &frame, &mask).unwrap(), "a small brown dog");

        let replay = VlmCaptioner::new(
            Arc::new(ModelClient::replay(transcript)),
            "vlm",
            SamplingParams::default(),
            Arc::new(PromptSet::default()),
        );
        assert_eq!(replay.describe_instance(1, &frame, &mask).unwrap(), "a small brown dog");
    }
}
