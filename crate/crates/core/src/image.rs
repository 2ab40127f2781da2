//! Minimal RGB raster, area-averaging resize, the policy image preprocessing
//! and a top-down scene rasterizer.

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::catalog::AssemblyGraph;
use crate::error::{Error, Result};
use crate::world::{PartStatus, WorldState};
use crate::workspace::Workspace;

pub const POLICY_IMAGE_SIZE: usize = 224;
pub const FRONT_SHORT_EDGE: usize = 256;
pub const RENDER_WIDTH: usize = 1280;
pub const RENDER_HEIGHT: usize = 720;

/// Row-major interleaved RGB bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            out.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }
}

/// Source-interval weights of each output cell for a 1-D area resample.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Box-filter resize: every output pixel is the area-weighted mean of the
/// source pixels it covers, including fractional coverage at the edges.
pub fn resize_area(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);
    // horizontal pass in floating point
    let mut tmp = vec![0.0f64; width * img.height * 3];
    for y in 0..img.height {
        for (ox, ws) in wx.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(sx, w) in ws {
                let i = (y * img.width + sx) * 3;
                for c in 0..3 {
                    acc[c] += w * img.data[i + c] as f64;
                }
            }
            tmp[(y * width + ox) * 3..(y * width + ox) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = RgbImage::new(width, height);
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..width {
            let mut acc = [0.0; 3];
            for &(sy, w) in ws {
                let i = (sy * width + ox) * 3;
                for c in 0..3 {
                    acc[c] += w * tmp[i + c];
                }
            }
            for c in 0..3 {
                out.data[(oy * width + ox) * 3 + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    Front,
    Wrist,
}

/// Size after scaling the shorter edge to `short`, keeping the aspect ratio.
pub fn short_edge_size(width: usize, height: usize, short: usize) -> (usize, usize) {
    if width >= height {
        ((width as f64 * short as f64 / height as f64).round() as usize, short)
    } else {
        (short, (height as f64 * short as f64 / width as f64).round() as usize)
    }
}

/// Policy input: front images are shrunk so the short edge is 256 and then
/// center-cropped; wrist images are resized straight to 224×224.
pub fn preprocess_image(img: &RgbImage, role: ImageRole) -> Result<RgbImage> {
    let s = POLICY_IMAGE_SIZE;
    if img.width < s || img.height < s {
        return Err(Error::UndersizedImage {
            width: img.width,
            height: img.height,
        });
    }
    match role {
        ImageRole::Wrist => Ok(resize_area(img, s, s)),
        ImageRole::Front => {
            let (w, h) = short_edge_size(img.width, img.height, FRONT_SHORT_EDGE);
            let mid = resize_area(img, w, h);
            Ok(mid.crop((w - s) / 2, (h - s) / 2, s, s))
        }
    }
}

/// Image payload as stored in observations and episode files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub width: usize,
    pub height: usize,
    /// Base64 of the row-major RGB bytes.
    pub rgb_base64: String,
}

impl EncodedImage {
    pub fn encode(img: &RgbImage) -> Self {
        EncodedImage {
            width: img.width,
            height: img.height,
            rgb_base64: base64::engine::general_purpose::STANDARD.encode(&img.data),
        }
    }

    pub fn decode(&self) -> Result<RgbImage> {
        let data = base64::engine::general_purpose::STANDARD
            .decode(&self.rgb_base64)
            .map_err(|e| Error::InvalidConfig(format!("bad image payload: {e}")))?;
        if data.len() != self.width * self.height * 3 {
            return Err(Error::InvalidConfig("image payload size mismatch".into()));
        }
        Ok(RgbImage {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

const BACKGROUND: [u8; 3] = [40, 40, 46];
const TABLE: [u8; 3] = [196, 170, 128];
const WALL: [u8; 3] = [70, 60, 50];
const EE: [u8; 3] = [230, 40, 40];

fn status_color(s: PartStatus) -> [u8; 3] {
    match s {
        PartStatus::Free => [90, 120, 200],
        PartStatus::Grasped => [240, 200, 60],
        PartStatus::Inserted => [120, 200, 120],
        PartStatus::Assembled => [40, 160, 70],
    }
}

/// Orthographic top-down render of the table at 1280×720.
pub fn render_topdown(world: &WorldState, graph: &AssemblyGraph, ws: &Workspace) -> RgbImage {
    let mut img = RgbImage::filled(RENDER_WIDTH, RENDER_HEIGHT, BACKGROUND);
    let tw = ws.table.max[0] - ws.table.min[0];
    let th = ws.table.max[1] - ws.table.min[1];
    let scale = (RENDER_WIDTH as f64 / tw).min(RENDER_HEIGHT as f64 / th) * 0.95;
    let cx = 0.5 * (ws.table.min[0] + ws.table.max[0]);
    let cy = 0.5 * (ws.table.min[1] + ws.table.max[1]);
    let to_px = |x: f64, y: f64| {
        (
            RENDER_WIDTH as f64 / 2.0 + (x - cx) * scale,
            RENDER_HEIGHT as f64 / 2.0 - (y - cy) * scale,
        )
    };
    let fill_rect = |img: &mut RgbImage, min: [f64; 2], max: [f64; 2], c: [u8; 3]| {
        let (x0, y1) = to_px(min[0], min[1]);
        let (x1, y0) = to_px(max[0], max[1]);
        for y in (y0.max(0.0) as usize)..(y1.min(RENDER_HEIGHT as f64) as usize) {
            for x in (x0.max(0.0) as usize)..(x1.min(RENDER_WIDTH as f64) as usize) {
                img.set_pixel(x, y, c);
            }
        }
    };
    fill_rect(&mut img, ws.table.min, ws.table.max, TABLE);
    for w in &ws.walls {
        fill_rect(&mut img, w.min, w.max, WALL);
    }
    // lower parts first so stacked parts draw on top
    let mut order: Vec<usize> = (0..world.parts.len()).collect();
    order.sort_by(|a, b| world.parts[*a].pose.position.z.total_cmp(&world.parts[*b].pose.position.z));
    for i in order {
        let p = &world.parts[i];
        let r = graph.parts[i].footprint * scale;
        let (px, py) = to_px(p.pose.position.x, p.pose.position.y);
        fill_disc(&mut img, px, py, r, status_color(p.status));
    }
    let e = world.ee.pose.position;
    let (ex, ey) = to_px(e.x, e.y);
    fill_disc(&mut img, ex, ey, 6.0, EE);
    img
}

fn fill_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, c: [u8; 3]) {
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(img.height);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(img.width);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r * r {
                img.set_pixel(x, y, c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_sizes() {
        assert_eq!(short_edge_size(1280, 720, 256), (455, 256));
        let img = RgbImage::filled(1280, 720, [10, 20, 30]);
        let out = preprocess_image(&img, ImageRole::Front).unwrap();
        assert_eq!((out.width, out.height), (224, 224));
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::filled(1280, 720, [7, 200, 99]);
        for role in [ImageRole::Front, ImageRole::Wrist] {
            let out = preprocess_image(&img, role).unwrap();
            assert!(out.data.chunks_exact(3).all(|p| p == [7, 200, 99]));
        }
    }

    #[test]
    fn wrist_identity_at_224() {
        let mut img = RgbImage::new(224, 224);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 31 % 251) as u8;
        }
        assert_eq!(preprocess_image(&img, ImageRole::Wrist).unwrap(), img);
    }

    #[test]
    fn undersized_rejected() {
        let img = RgbImage::new(300, 200);
        assert!(matches!(preprocess_image(&img, ImageRole::Front), Err(Error::UndersizedImage { .. })));
    }

    #[test]
    fn halving_averages_blocks() {
        let mut img = RgbImage::new(4, 2);
        let vals = [0u8, 10, 20, 30, 40, 50, 60, 70];
        for (i, v) in vals.iter().enumerate() {
            img.set_pixel(i % 4, i / 4, [*v; 3]);
        }
        let out = resize_area(&img, 2, 1);
        // (0+10+40+50)/4 = 25, (20+30+60+70)/4 = 45
        assert_eq!(out.pixel(0, 0), [25; 3]);
        assert_eq!(out.pixel(1, 0), [45; 3]);
    }

    #[test]
    fn encoding_round_trip() {
        let img = RgbImage::filled(3, 2, [1, 2, 3]);
        assert_eq!(EncodedImage::encode(&img).decode().unwrap(), img);
    }
}
