//! Skeleton overlay rendering: 8-bit grayscale PNGs of the depth channel
//! with ground-truth and predicted skeletons drawn at distinct intensities.

use std::io::BufWriter;
use std::path::Path;

use crate::data::{Joint, Pose, Sample, DEPTH_RANGE_MM, RASTER_SIZE};

/// Limb chains: ankle-knee-hip, wrist-elbow-shoulder, hips and shoulders
/// into the thorax, thorax to head top.
pub const SKELETON_EDGES: [(Joint, Joint); 13] = [
    (Joint::AnkleR, Joint::KneeR),
    (Joint::KneeR, Joint::HipR),
    (Joint::AnkleL, Joint::KneeL),
    (Joint::KneeL, Joint::HipL),
    (Joint::WristR, Joint::ElbowR),
    (Joint::ElbowR, Joint::ShoulderR),
    (Joint::WristL, Joint::ElbowL),
    (Joint::ElbowL, Joint::ShoulderL),
    (Joint::HipR, Joint::Thorax),
    (Joint::HipL, Joint::Thorax),
    (Joint::ShoulderR, Joint::Thorax),
    (Joint::ShoulderL, Joint::Thorax),
    (Joint::Thorax, Joint::HeadTop),
];

const GT_INTENSITY: u8 = 255;
const PRED_INTENSITY: u8 = 170;
const BACKGROUND_CEIL: u8 = 120;

fn put(canvas: &mut [u8], x: i32, y: i32, value: u8) {
    let n = RASTER_SIZE as i32;
    if x >= 0 && y >= 0 && x < n && y < n {
        canvas[(y * n + x) as usize] = value;
    }
}

fn draw_line(canvas: &mut [u8], a: (f64, f64), b: (f64, f64), value: u8) {
    let (mut x0, mut y0) = (a.0.round() as i32, a.1.round() as i32);
    let (x1, y1) = (b.0.round() as i32, b.1.round() as i32);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(canvas, x0, y0, value);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_marker(canvas: &mut [u8], p: (f64, f64), value: u8) {
    let (x, y) = (p.0.round() as i32, p.1.round() as i32);
    for d in -2..=2 {
        put(canvas, x + d, y, value);
        put(canvas, x, y + d, value);
    }
}

fn draw_skeleton(canvas: &mut [u8], pose: &Pose, value: u8) {
    for (a, b) in SKELETON_EDGES {
        draw_line(canvas, pose.joint(a), pose.joint(b), value);
    }
    for &joint in &pose.joints {
        draw_marker(canvas, joint, value);
    }
}

/// Compose the overlay canvas: depth background scaled into a dark band,
/// ground truth bright, prediction mid-gray.
pub fn compose_overlay(sample: &Sample, prediction: Option<&Pose>) -> Vec<u8> {
    let depth = sample.depth.materialize();
    let mut canvas: Vec<u8> = depth
        .iter()
        .map(|&v| ((v / DEPTH_RANGE_MM).clamp(0.0, 1.0) * BACKGROUND_CEIL as f32) as u8)
        .collect();
    draw_skeleton(&mut canvas, &sample.pose, GT_INTENSITY);
    if let Some(pred) = prediction {
        draw_skeleton(&mut canvas, pred, PRED_INTENSITY);
    }
    canvas
}

/// Write an 8-bit grayscale PNG.
pub fn write_png(path: &Path, pixels: &[u8]) -> Result<(), String> {
    let file = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        RASTER_SIZE as u32,
        RASTER_SIZE as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Source};

    #[test]
    fn overlay_contains_background_and_both_skeletons() {
        let ds = generate_dataset(3, 77, Source::SmalLike).unwrap();
        let sample = &ds.samples[0];
        let mut pred = sample.pose.clone();
        for j in pred.joints.iter_mut() {
            j.0 = (j.0 + 6.0).min(220.0);
        }
        let canvas = compose_overlay(sample, Some(&pred));
        assert_eq!(canvas.len(), 224 * 224);
        assert!(canvas.iter().any(|&v| v == GT_INTENSITY));
        assert!(canvas.iter().any(|&v| v == PRED_INTENSITY));
        assert!(canvas.iter().any(|&v| v > 0 && v <= BACKGROUND_CEIL));
    }

    #[test]
    fn png_round_trips_through_decoder() {
        let dir = std::env::temp_dir().join("matpose_overlay_png");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let pixels: Vec<u8> = (0..224 * 224).map(|i| (i % 251) as u8).collect();
        write_png(&path, &pixels).unwrap();

        let decoder =
            png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.width, 224);
        assert_eq!(info.height, 224);
        assert_eq!(&buf[..info.buffer_size()], pixels.as_slice());
    }
}
