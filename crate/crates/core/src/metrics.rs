//! Edit-quality metrics over a pluggable image/text embedder.
//!
//! `clip_score` is the clamped cosine between an image and a prompt.
//! `clip_dc` measures directional consistency between two adjacent views:
//! the image-space change of the first view must agree with the text-space
//! change of the prompt, and the two views' image-space changes must agree
//! with each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EditMask;
use crate::raster::{masked_mse, psnr_from_mse, Image};
use crate::synth::{wire, HttpClient, Prompt, RemoteConfig, SynthError};

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    /// Unit-norm image embedding.
    fn embed_image(&self, image: &Image) -> Result<Vec<f64>>;
    /// Unit-norm text embedding.
    fn embed_text(&self, prompt: &Prompt) -> Result<Vec<f64>>;
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `max(0, cos(a, b))`. Zero vectors are an error.
pub fn cos_plus(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("cosine of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

pub fn clip_score(embedder: &dyn Embedder, image: &Image, prompt: &Prompt) -> Result<f64> {
    cos_plus(&embedder.embed_image(image)?, &embedder.embed_text(prompt)?)
}

/// Directional consistency from embeddings: text embeddings of the original
/// and edited prompts, then (original, edited) image embeddings of views
/// `i` and `i+1`. A zero difference vector yields 0.
pub fn clip_dc_from_embeddings(
    text: &[f64],
    text_edited: &[f64],
    image_i: &[f64],
    image_i_edited: &[f64],
    image_next: &[f64],
    image_next_edited: &[f64],
) -> Result<f64> {
    let dt = sub(text_edited, text);
    let di = sub(image_i_edited, image_i);
    let dn = sub(image_next_edited, image_next);
    if [&dt, &di, &dn].iter().any(|v| norm(v) == 0.0) {
        log::warn!("directional consistency of an unchanged prompt or view is defined as 0");
        return Ok(0.0);
    }
    Ok(cos_plus(&dt, &di)? * cos_plus(&di, &dn)?)
}

pub fn clip_dc(
    embedder: &dyn Embedder,
    original: (&Image, &Image),
    edited: (&Image, &Image),
    prompt: &Prompt,
    prompt_edited: &Prompt,
) -> Result<f64> {
    clip_dc_from_embeddings(
        &embedder.embed_text(prompt)?,
        &embedder.embed_text(prompt_edited)?,
        &embedder.embed_image(original.0)?,
        &embedder.embed_image(edited.0)?,
        &embedder.embed_image(original.1)?,
        &embedder.embed_image(edited.1)?,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clip_scores: Vec<f64>,
    /// One value per consecutive pair, in the given view order.
    pub clip_dc: Vec<f64>,
    pub mean_clip_score: f64,
    pub mean_clip_dc: f64,
    /// Editable-region PSNR against ground truth, when it is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editable_psnr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_editable_psnr: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricsReport {
    /// Attaches editable-region PSNR of each edited view against its ground
    /// truth.
    pub fn with_ground_truth(mut self, editeds: &[Image], truths: &[Image], masks: &[EditMask]) -> Result<Self> {
        if editeds.len() != truths.len() || editeds.len() != masks.len() {
            return Err(Error::Metric("ground truth lists differ in length".into()));
        }
        let psnrs = editeds
            .iter()
            .zip(truths)
            .zip(masks)
            .map(|((e, t), m)| Ok(psnr_from_mse(masked_mse(e, t, |i| !m.is_preserved_index(i))?)))
            .collect::<Result<Vec<f64>>>()?;
        self.mean_editable_psnr = Some(mean(&psnrs));
        self.editable_psnr = Some(psnrs);
        Ok(self)
    }
}

/// CLIPScore of every edited view against `prompt_edited` and directional
/// consistency of every consecutive pair.
pub fn evaluate_scene(
    embedder: &dyn Embedder,
    originals: &[Image],
    editeds: &[Image],
    prompt: &Prompt,
    prompt_edited: &Prompt,
) -> Result<MetricsReport> {
    if originals.len() != editeds.len() {
        return Err(Error::Metric(format!(
            "{} original views but {} edited views",
            originals.len(),
            editeds.len()
        )));
    }
    if originals.len() < 2 {
        return Err(Error::Metric("evaluation needs at least 2 views".into()));
    }
    let t = embedder.embed_text(prompt)?;
    let te = embedder.embed_text(prompt_edited)?;
    let eo = originals
        .iter()
        .map(|i| embedder.embed_image(i))
        .collect::<Result<Vec<_>>>()?;
    let ee = editeds
        .iter()
        .map(|i| embedder.embed_image(i))
        .collect::<Result<Vec<_>>>()?;
    let clip_scores = ee.iter().map(|e| cos_plus(e, &te)).collect::<Result<Vec<_>>>()?;
    let clip_dc = (0..ee.len() - 1)
        .map(|i| clip_dc_from_embeddings(&t, &te, &eo[i], &ee[i], &eo[i + 1], &ee[i + 1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        mean_clip_score: mean(&clip_scores),
        mean_clip_dc: mean(&clip_dc),
        clip_scores,
        clip_dc,
        editable_psnr: None,
        mean_editable_psnr: None,
    })
}

pub const HUE_BINS: usize = 12;
pub const TOY_DIM: usize = 3 + HUE_BINS;

const COLOR_WORDS: &[(&str, [f32; 3])] = &[
    ("red", [0.9, 0.1, 0.1]),
    ("orange", [0.95, 0.55, 0.1]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("green", [0.15, 0.75, 0.2]),
    ("teal", [0.1, 0.6, 0.6]),
    ("cyan", [0.1, 0.85, 0.9]),
    ("blue", [0.1, 0.2, 0.9]),
    ("purple", [0.55, 0.2, 0.8]),
    ("pink", [0.95, 0.5, 0.7]),
    ("brown", [0.5, 0.3, 0.15]),
    ("white", [0.95, 0.95, 0.95]),
    ("gray", [0.5, 0.5, 0.5]),
    ("grey", [0.5, 0.5, 0.5]),
    ("black", [0.05, 0.05, 0.05]),
];

/// Deterministic stand-in for CLIP with `d = 15`.
///
/// Images map to their mean RGB followed by a 12-bin hue histogram in which
/// each pixel votes with its chroma. Prompts map to a sum of per-token
/// vectors: color words use the image embedding of a flat patch of that
/// color, so "red" points where red images point; every other token gets a
/// smaller pseudo-random direction seeded by a hash of the token.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyEmbedder;

impl ToyEmbedder {
    /// Weight of non-color tokens relative to color words.
    pub const OTHER_TOKEN_WEIGHT: f64 = 0.25;

    fn raw_image_features(pixels: &[[f32; 3]]) -> Vec<f64> {
        let mut v = vec![0.0; TOY_DIM];
        if pixels.is_empty() {
            return v;
        }
        let n = pixels.len() as f64;
        for p in pixels {
            let [r, g, b] = p.map(|c| c.clamp(0.0, 1.0) as f64);
            v[0] += r / n;
            v[1] += g / n;
            v[2] += b / n;
            let max = r.max(g).max(b);
            let chroma = max - r.min(g).min(b);
            if chroma <= 0.0 {
                continue;
            }
            let hue = if max == r {
                60.0 * ((g - b) / chroma).rem_euclid(6.0)
            } else if max == g {
                60.0 * ((b - r) / chroma + 2.0)
            } else {
                60.0 * ((r - g) / chroma + 4.0)
            };
            let bin = (((hue + 15.0).rem_euclid(360.0)) / 30.0) as usize % HUE_BINS;
            v[3 + bin] += chroma / n;
        }
        v
    }

    /// Maps an all-zero vector to the uniform direction, otherwise
    /// normalizes.
    fn unit(mut v: Vec<f64>) -> Vec<f64> {
        let n = norm(&v);
        if n == 0.0 {
            let u = 1.0 / (v.len() as f64).sqrt();
            v.iter_mut().for_each(|x| *x = u);
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }

    fn token_vector(token: &str) -> Vec<f64> {
        let word: String = token
            .trim_start_matches('*')
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if let Some((_, rgb)) = COLOR_WORDS.iter().find(|(w, _)| *w == word) {
            return Self::unit(Self::raw_image_features(&[*rgb]));
        }
        // FNV-1a of the raw token (identifier marks included) seeds a
        // splitmix64 sequence of coordinates in [-1, 1].
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let v = (0..TOY_DIM)
            .map(|_| {
                h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = h;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                z ^= z >> 31;
                (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Self::unit(v)
            .into_iter()
            .map(|x| x * Self::OTHER_TOKEN_WEIGHT)
            .collect()
    }
}

impl Embedder for ToyEmbedder {
    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(Self::unit(Self::raw_image_features(image.pixels())))
    }

    fn embed_text(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let mut v = vec![0.0; TOY_DIM];
        for t in prompt.tokens() {
            for (a, b) in v.iter_mut().zip(Self::token_vector(t)) {
                *a += b;
            }
        }
        Ok(Self::unit(v))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum EmbedBody<'a> {
    Image(String),
    Text(&'a str),
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Embedder served over HTTP: `POST {base}/v1/embed` with `{"image": b64png}`
/// or `{"text": prompt}`, answered by `{"embedding": [..]}`.
///
/// Replies are normalized here; the dimension is fixed by a probe at
/// connect time and every later reply must match it.
pub struct RemoteEmbedder {
    http: HttpClient,
    dim: usize,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder").field("dim", &self.dim).finish()
    }
}

impl RemoteEmbedder {
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let mut e = RemoteEmbedder {
            http: HttpClient::new(config)?,
            dim: 0,
        };
        let probe = e.fetch(&EmbedBody::Text("a photo"))?;
        e.dim = probe.len();
        Ok(e)
    }

    fn fetch(&self, body: &EmbedBody<'_>) -> Result<Vec<f64>> {
        let json = serde_json::to_string(body)?;
        let reply: EmbedResponse = HttpClient::parse(&self.http.post("/v1/embed", &json)?)?;
        let v = reply.embedding;
        let bad = |msg: String| Error::Synthesis(SynthError::Protocol(msg));
        if v.is_empty() || (self.dim != 0 && v.len() != self.dim) {
            return Err(bad(format!("embedding has {} entries, expected {}", v.len(), self.dim)));
        }
        let n = norm(&v);
        if !n.is_finite() || n == 0.0 {
            return Err(bad("embedding is zero or non-finite".into()));
        }
        Ok(v.into_iter().map(|x| x / n).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>> {
        self.fetch(&EmbedBody::Image(wire::encode_image(image)?))
    }

    fn embed_text(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        self.fetch(&EmbedBody::Text(prompt.text()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cos_plus_basics() {
        let a = [1.0, 2.0, -0.5];
        assert!((cos_plus(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cos_plus(&a, &[-1.0, -2.0, 0.5]).unwrap(), 0.0);
        assert_eq!(cos_plus(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cos_plus(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cos_plus(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn constant_red_image_votes_in_the_red_bin() {
        let e = ToyEmbedder.embed_image(&Image::filled(4, 4, [1.0, 0.0, 0.0])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let mut want = vec![0.0; TOY_DIM];
        want[0] = s;
        want[3] = s;
        for (a, b) in e.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let img = Image::from_fn(8, 8, |x, y| [x as f32 / 8.0, 0.3, y as f32 / 8.0]);
        let a = ToyEmbedder.embed_image(&img).unwrap();
        assert_eq!(a, ToyEmbedder.embed_image(&img).unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        let t = ToyEmbedder
            .embed_text(&Prompt::new("a *red ball on the floor").unwrap())
            .unwrap();
        assert!((norm(&t) - 1.0).abs() < 1e-9);
        let black = ToyEmbedder.embed_image(&Image::black(2, 2)).unwrap();
        assert!((norm(&black) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn color_words_align_with_their_color() {
        let red_img = ToyEmbedder.embed_image(&Image::filled(4, 4, [0.9, 0.1, 0.1])).unwrap();
        let red_txt = ToyEmbedder.embed_text(&Prompt::new("red").unwrap()).unwrap();
        assert!(cos_plus(&red_img, &red_txt).unwrap() > 0.999);
        let blue_txt = ToyEmbedder.embed_text(&Prompt::new("blue").unwrap()).unwrap();
        assert!(cos_plus(&red_img, &blue_txt).unwrap() < 0.5);
    }

    #[test]
    fn unchanged_views_give_zero_consistency() {
        let img = Image::filled(4, 4, [0.3, 0.4, 0.5]);
        let p = Prompt::new("a room").unwrap();
        let pe = Prompt::new("a red ball in a room").unwrap();
        assert_eq!(clip_dc(&ToyEmbedder, (&img, &img), (&img, &img), &p, &pe).unwrap(), 0.0);
    }

    #[test]
    fn scene_report_shapes() {
        let originals: Vec<Image> = (0..3)
            .map(|i| Image::filled(4, 4, [0.2 + 0.1 * i as f32, 0.4, 0.5]))
            .collect();
        let editeds: Vec<Image> = (0..3)
            .map(|i| Image::filled(4, 4, [0.8, 0.1 * i as f32, 0.1]))
            .collect();
        let r = evaluate_scene(
            &ToyEmbedder,
            &originals,
            &editeds,
            &Prompt::new("a room").unwrap(),
            &Prompt::new("a red ball in a room").unwrap(),
        )
        .unwrap();
        assert_eq!(r.clip_scores.len(), 3);
        assert_eq!(r.clip_dc.len(), 2);
        assert_eq!(r.mean_clip_score, r.clip_scores.iter().sum::<f64>() / 3.0);
        assert!(evaluate_scene(
            &ToyEmbedder,
            &originals[..1],
            &editeds[..1],
            &Prompt::new("a").unwrap(),
            &Prompt::new("b").unwrap()
        )
        .is_err());
        assert!(evaluate_scene(
            &ToyEmbedder,
            &originals,
            &editeds[..2],
            &Prompt::new("a").unwrap(),
            &Prompt::new("b").unwrap()
        )
        .is_err());
    }
}
