//! Deterministic frame synthesis: a color-coded skeleton rasterizer for the
//! keypoint stream, composited with panels that visualize the hand- and
//! body-parameter streams, behind a pluggable synthesizer registry.
//!
//! Rendering is pure integer/byte work after the input floats are mapped to
//! pixel coordinates, so equal inputs produce byte-identical images on every
//! platform, which is what makes image metrics against reference renders
//! meaningful.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{layout, Modality, HAMER_DIM, KEYPOINTS, POSE_DIM, SMPLERX_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Packed RGB color.
pub type Rgb = [u8; 3];

/// Canvas edge length used by the composite synthesizer.
pub const DEFAULT_CANVAS: usize = 256;
/// Playback rate recorded in the frame index.
pub const DEFAULT_FPS: u32 = 25;
/// Registry id of the built-in synthesizer.
pub const DEFAULT_SYNTHESIZER: &str = "composite";

const BODY_JOINT: Rgb = [255, 255, 255];
const FACE_JOINT: Rgb = [235, 215, 95];
const LEFT_HAND_JOINT: Rgb = [90, 235, 110];
const RIGHT_HAND_JOINT: Rgb = [110, 160, 255];
const BODY_EDGE: Rgb = [200, 200, 200];
const FACE_EDGE: Rgb = [185, 165, 70];
const LEFT_HAND_EDGE: Rgb = [60, 190, 85];
const RIGHT_HAND_EDGE: Rgb = [85, 130, 220];

// Composite layout: skeleton on the full canvas, parameter panels over the
// bottom rows.
const HAMER_PANEL_TOP: usize = 208;
const PANEL_SPLIT: usize = 232;
const PANEL_BOTTOM: usize = 256;

/// One RGB raster frame (row-major, 3 bytes per pixel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl FrameImage {
    /// All-black canvas.  Zero-sized canvases are rejected.
    pub fn black(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "canvas dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(FrameImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major RGB bytes, `height * width * 3` long.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        assert!(x < self.width && y < self.height, "pixel out of range");
        let at = (y * self.width + x) * 3;
        [self.pixels[at], self.pixels[at + 1], self.pixels[at + 2]]
    }

    /// Set one pixel; coordinates outside the canvas are ignored.
    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let at = (y as usize * self.width + x as usize) * 3;
        self.pixels[at..at + 3].copy_from_slice(&color);
    }

    /// Fill the inclusive rectangle, clipped to the canvas.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.put(x, y, color);
            }
        }
    }
}

/// One skeleton edge with its draw color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub color: Rgb,
}

/// Skeleton drawing table: edges over the keypoints plus a per-joint color
/// map (left and right hand joints get distinct colors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    pub edges: Vec<Edge>,
    pub joint_colors: Vec<Rgb>,
}

impl SkeletonTopology {
    pub fn validate(&self) -> Result<()> {
        if self.joint_colors.len() != KEYPOINTS {
            return Err(Error::shape(
                "topology joint color count",
                KEYPOINTS,
                self.joint_colors.len(),
            ));
        }
        for e in &self.edges {
            if e.a >= KEYPOINTS || e.b >= KEYPOINTS {
                return Err(Error::shape(
                    "topology edge endpoint",
                    format!("< {KEYPOINTS}"),
                    e.a.max(e.b),
                ));
            }
        }
        Ok(())
    }

    /// Built-in topology matching the corpus keypoint layout: body limbs, a
    /// face ring, and per-finger chains, with the two hands color-separated.
    pub fn default_topology() -> Self {
        let mut edges = Vec::new();
        let mut add = |a: usize, b: usize, color: Rgb| edges.push(Edge { a, b, color });

        use layout::*;
        for (a, b) in [
            (HEAD, NECK),
            (NECK, L_SHOULDER),
            (NECK, R_SHOULDER),
            (L_SHOULDER, L_ELBOW),
            (L_ELBOW, L_WRIST),
            (R_SHOULDER, R_ELBOW),
            (R_ELBOW, R_WRIST),
            (NECK, SPINE),
            (SPINE, PELVIS),
            (PELVIS, L_HIP),
            (PELVIS, R_HIP),
        ] {
            add(a, b, BODY_EDGE);
        }
        // Face ring.
        let face: Vec<usize> = FACE.collect();
        for k in 0..face.len() {
            add(face[k], face[(k + 1) % face.len()], FACE_EDGE);
        }
        // Hands: wrist -> root, then three-joint chains per finger.
        for (range, wrist, color) in [
            (LEFT_HAND, L_WRIST, LEFT_HAND_EDGE),
            (RIGHT_HAND, R_WRIST, RIGHT_HAND_EDGE),
        ] {
            let root = range.start;
            add(wrist, root, color);
            for finger in 0..5 {
                let base = root + 1 + finger * 3;
                add(root, base, color);
                add(base, base + 1, color);
                add(base + 1, base + 2, color);
            }
        }

        let mut joint_colors = vec![BODY_JOINT; KEYPOINTS];
        for i in layout::FACE {
            joint_colors[i] = FACE_JOINT;
        }
        for i in layout::LEFT_HAND {
            joint_colors[i] = LEFT_HAND_JOINT;
        }
        for i in layout::RIGHT_HAND {
            joint_colors[i] = RIGHT_HAND_JOINT;
        }
        SkeletonTopology { edges, joint_colors }
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::default_topology()
    }
}

/// `round(n / d)` for `d > 0`, half away from zero, in exact integer
/// arithmetic.
fn div_round(n: i64, d: i64) -> i64 {
    debug_assert!(d > 0);
    if n >= 0 {
        (2 * n + d) / (2 * d)
    } else {
        -((-2 * n + d) / (2 * d))
    }
}

/// Pixels of the 1-px line from `a` to `b`, inclusive: one pixel per step of
/// the major axis, minor coordinate rounded to nearest (half away from zero).
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (x0, y0) = a;
    let (x1, y1) = b;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        return vec![a];
    }
    let mut out = Vec::with_capacity(steps as usize + 1);
    for t in 0..=steps {
        // Round the absolute coordinate (not the offset): these differ on
        // exact-half fractions, and the absolute form is the textbook
        // nearest-pixel line.
        out.push((
            div_round(x0 * steps + t * dx, steps),
            div_round(y0 * steps + t * dy, steps),
        ));
    }
    out
}

fn draw_line(img: &mut FrameImage, a: (i64, i64), b: (i64, i64), color: Rgb) {
    for (x, y) in line_pixels(a, b) {
        img.put(x, y, color);
    }
}

/// Map the 120 pose channels to per-keypoint pixel centers on a canvas,
/// clamping coordinates into the unit square first.  Returns the centers and
/// how many coordinates needed clamping.
fn keypoint_centers<T: Scalar>(
    frame: ArrayView1<'_, T>,
    width: usize,
    height: usize,
) -> Result<(Vec<(i64, i64)>, usize)> {
    let mut centers = Vec::with_capacity(KEYPOINTS);
    let mut clipped = 0;
    for kp in 0..KEYPOINTS {
        let mut coord = [0.0f64; 2];
        for (axis, c) in coord.iter_mut().enumerate() {
            let v = frame[2 * kp + axis].to_f64_lossy();
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    context: format!("keypoint {kp} coordinate"),
                    value: v,
                });
            }
            if !(0.0..=1.0).contains(&v) {
                clipped += 1;
            }
            *c = v.clamp(0.0, 1.0);
        }
        let px = (coord[0] * (width - 1) as f64).round() as i64;
        let py = (coord[1] * (height - 1) as f64).round() as i64;
        centers.push((px, py));
    }
    Ok((centers, clipped))
}

/// Draw one keypoint frame as a skeleton: edges as 1-px lines, then joints as
/// filled 3x3 squares on top, on a black background.  Coordinates outside
/// the unit square are clamped (with a warning on stderr).
pub fn rasterize_pose<T: Scalar>(
    frame: ArrayView1<'_, T>,
    topology: &SkeletonTopology,
    width: usize,
    height: usize,
) -> Result<FrameImage> {
    if frame.len() != POSE_DIM {
        return Err(Error::shape("skeleton frame width", POSE_DIM, frame.len()));
    }
    topology.validate()?;
    let mut img = FrameImage::black(width, height)?;
    let (centers, clipped) = keypoint_centers(frame, width, height)?;
    if clipped > 0 {
        eprintln!("warning: clamped {clipped} keypoint coordinates outside [0, 1]");
    }
    for e in &topology.edges {
        draw_line(&mut img, centers[e.a], centers[e.b], e.color);
    }
    for (kp, &(px, py)) in centers.iter().enumerate() {
        img.fill_rect(px - 1, py - 1, px + 1, py + 1, topology.joint_colors[kp]);
    }
    Ok(img)
}

/// Normalize a channel value into [0, 1] using the modality's admissible
/// range for that channel index.
fn channel_unit<T: Scalar>(modality: Modality, i: usize, v: T) -> Result<f64> {
    let v = v.to_f64_lossy();
    if !v.is_finite() {
        return Err(Error::NonFiniteValue {
            context: format!("{} channel {i}", modality.tag()),
            value: v,
        });
    }
    let (lo, hi) = modality.channel_bounds(i);
    Ok(((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Composite frame: skeleton over the full canvas, hand-parameter bar panel
/// and body-parameter intensity band over the bottom rows.
fn composite_frame<T: Scalar>(
    pose: ArrayView1<'_, T>,
    hamer: ArrayView1<'_, T>,
    smplerx: ArrayView1<'_, T>,
    topology: &SkeletonTopology,
) -> Result<FrameImage> {
    let mut img = rasterize_pose(pose, topology, DEFAULT_CANVAS, DEFAULT_CANVAS)?;

    // Hand panel: one 2-px bar per channel, height encoding the normalized
    // value, left-hand channels in the left-hand color.
    img.fill_rect(
        0,
        HAMER_PANEL_TOP as i64,
        DEFAULT_CANVAS as i64 - 1,
        PANEL_SPLIT as i64 - 1,
        [10, 10, 10],
    );
    let panel_h = PANEL_SPLIT - HAMER_PANEL_TOP;
    let margin = (DEFAULT_CANVAS - 2 * HAMER_DIM) as i64 / 2;
    for c in 0..HAMER_DIM {
        let unit = channel_unit(Modality::Hamer, c, hamer[c])?;
        let bar = (unit * panel_h as f64).round() as i64;
        let color = if c < HAMER_DIM / 2 {
            LEFT_HAND_JOINT
        } else {
            RIGHT_HAND_JOINT
        };
        let x0 = margin + 2 * c as i64;
        img.fill_rect(
            x0,
            PANEL_SPLIT as i64 - bar,
            x0 + 1,
            PANEL_SPLIT as i64 - 1,
            color,
        );
    }

    // Body band: one grayscale column per channel.
    let margin = (DEFAULT_CANVAS - SMPLERX_DIM) as i64 / 2;
    img.fill_rect(
        0,
        PANEL_SPLIT as i64,
        DEFAULT_CANVAS as i64 - 1,
        PANEL_BOTTOM as i64 - 1,
        [10, 10, 10],
    );
    for c in 0..SMPLERX_DIM {
        let unit = channel_unit(Modality::Smplerx, c, smplerx[c])?;
        let level = (unit * 255.0).round() as u8;
        img.fill_rect(
            margin + c as i64,
            PANEL_SPLIT as i64,
            margin + c as i64,
            PANEL_BOTTOM as i64 - 1,
            [level, level, level],
        );
    }
    Ok(img)
}

/// Synthesizer ids accepted by [`synthesize`].
pub fn available_synthesizers() -> &'static [&'static str] {
    &[DEFAULT_SYNTHESIZER]
}

/// Render three frame-aligned streams to one image per frame using the named
/// synthesizer plug-in.
pub fn synthesize<T: Scalar>(
    pose: &Array2<T>,
    hamer: &Array2<T>,
    smplerx: &Array2<T>,
    synthesizer: &str,
) -> Result<Vec<FrameImage>> {
    if !available_synthesizers().contains(&synthesizer) {
        return Err(Error::UnknownPlugin {
            id: synthesizer.to_string(),
            available: available_synthesizers().join(", "),
        });
    }
    for (name, got, want) in [
        ("pose", pose.ncols(), POSE_DIM),
        ("hamer", hamer.ncols(), HAMER_DIM),
        ("smplerx", smplerx.ncols(), SMPLERX_DIM),
    ] {
        if got != want {
            return Err(Error::shape(format!("{name} stream width"), want, got));
        }
    }
    let m = pose.nrows();
    for (name, got) in [("hamer", hamer.nrows()), ("smplerx", smplerx.nrows())] {
        if got != m {
            return Err(Error::shape(format!("{name} frame count"), m, got));
        }
    }
    let topology = SkeletonTopology::default_topology();
    let mut frames = Vec::with_capacity(m);
    for i in 0..m {
        frames.push(composite_frame(
            pose.row(i),
            hamer.row(i),
            smplerx.row(i),
            &topology,
        )?);
    }
    Ok(frames)
}

/// Sidecar metadata written next to the frame files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub fps: u32,
    pub frame_count: usize,
}

/// Write frames as `frame_00000.png`, `frame_00001.png`, ... plus an
/// `index.json` with playback rate and frame count.
pub fn save_frames(dir: &Path, frames: &[FrameImage], fps: u32) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:05}.png"));
        image::save_buffer(
            &path,
            frame.pixels(),
            frame.width() as u32,
            frame.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    }
    let index = FrameIndex {
        fps,
        frame_count: frames.len(),
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;
    use std::collections::BTreeSet;

    use crate::rng::rng_for;

    fn uniform_frame(x: f64, y: f64) -> Array1<f64> {
        Array1::from_shape_fn(POSE_DIM, |i| if i % 2 == 0 { x } else { y })
    }

    fn plain_white_topology(edges: Vec<Edge>) -> SkeletonTopology {
        SkeletonTopology {
            edges,
            joint_colors: vec![[255, 255, 255]; KEYPOINTS],
        }
    }

    #[test]
    fn coincident_keypoints_paint_one_centered_square() {
        // 17x17 canvas: (0.5, 0.5) lands exactly on pixel (8, 8).
        let frame = uniform_frame(0.5, 0.5);
        let img =
            rasterize_pose(frame.view(), &plain_white_topology(Vec::new()), 17, 17).unwrap();
        for y in 0..17usize {
            for x in 0..17usize {
                let expected = if (7..=9).contains(&x) && (7..=9).contains(&y) {
                    [255, 255, 255]
                } else {
                    [0, 0, 0]
                };
                assert_eq!(img.get(x, y), expected, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut rng = rng_for(3, "render", 0);
        let frame = Array1::from_shape_fn(POSE_DIM, |_| rng.gen_range(0.0..1.0));
        let topo = SkeletonTopology::default_topology();
        let a = rasterize_pose(frame.view(), &topo, 96, 96).unwrap();
        let b = rasterize_pose(frame.view(), &topo, 96, 96).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    /// Independent oracle: walk the major axis one pixel at a time and round
    /// the interpolated minor coordinate (floating point, half away from
    /// zero), i.e. the textbook definition of a nearest-pixel line.
    fn oracle_line(a: (i64, i64), b: (i64, i64)) -> BTreeSet<(i64, i64)> {
        let (x0, y0) = a;
        let (x1, y1) = b;
        let (dx, dy) = (x1 - x0, y1 - y0);
        let mut out = BTreeSet::new();
        if dx == 0 && dy == 0 {
            out.insert(a);
            return out;
        }
        if dx.abs() >= dy.abs() {
            let step = dx.signum();
            let mut x = x0;
            loop {
                let y = y0 as f64 + (x - x0) as f64 * dy as f64 / dx as f64;
                out.insert((x, y.round() as i64));
                if x == x1 {
                    break;
                }
                x += step;
            }
        } else {
            let step = dy.signum();
            let mut y = y0;
            loop {
                let x = x0 as f64 + (y - y0) as f64 * dx as f64 / dy as f64;
                out.insert((x.round() as i64, y));
                if y == y1 {
                    break;
                }
                y += step;
            }
        }
        out
    }

    #[test]
    fn line_pixels_match_independent_oracle_on_a_dense_grid() {
        for x0 in 0..10 {
            for y0 in 0..10 {
                for x1 in 0..10 {
                    for y1 in 0..10 {
                        let got: BTreeSet<(i64, i64)> =
                            line_pixels((x0, y0), (x1, y1)).into_iter().collect();
                        let want = oracle_line((x0, y0), (x1, y1));
                        assert_eq!(got, want, "({x0},{y0}) -> ({x1},{y1})");
                    }
                }
            }
        }
    }

    #[test]
    fn rendered_edge_matches_line_oracle() {
        // Two keypoints at known pixels, one edge; everything else parked at
        // the first point so no stray geometry appears.
        let mut frame = uniform_frame(0.0, 0.0);
        // keypoint 0 -> (0.0, 0.0) = pixel (0, 0); keypoint 1 -> pixel (30, 9)
        frame[2] = 30.0 / 31.0;
        frame[3] = 9.0 / 31.0;
        let topo = plain_white_topology(vec![Edge {
            a: 0,
            b: 1,
            color: [255, 0, 0],
        }]);
        let img = rasterize_pose(frame.view(), &topo, 32, 32).unwrap();
        let expected = oracle_line((0, 0), (30, 9));
        for y in 0..32usize {
            for x in 0..32usize {
                let on_square = |(cx, cy): (i64, i64)| {
                    (x as i64 - cx).abs() <= 1 && (y as i64 - cy).abs() <= 1
                };
                if on_square((0, 0)) || on_square((30, 9)) {
                    // Joint squares draw over line ends.
                    assert_eq!(img.get(x, y), [255, 255, 255], "square pixel ({x}, {y})");
                } else if expected.contains(&(x as i64, y as i64)) {
                    assert_eq!(img.get(x, y), [255, 0, 0], "line pixel ({x}, {y})");
                } else {
                    assert_eq!(img.get(x, y), [0, 0, 0], "background ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn out_of_range_coordinates_clamp_instead_of_failing() {
        let mut frame = uniform_frame(0.5, 0.5);
        frame[0] = -4.0;
        frame[1] = 7.5;
        let img = rasterize_pose(
            frame.view(),
            &SkeletonTopology::default_topology(),
            64,
            64,
        )
        .unwrap();
        // Clamped to (0, 1) -> pixel column 0, bottom row; the 3x3 square is
        // clipped to the canvas corner.
        assert_ne!(img.get(0, 63), [0, 0, 0]);
    }

    #[test]
    fn zero_canvas_and_bad_widths_are_rejected() {
        let frame = uniform_frame(0.5, 0.5);
        let topo = SkeletonTopology::default_topology();
        assert!(matches!(
            rasterize_pose(frame.view(), &topo, 0, 32),
            Err(Error::InvalidConfig(_))
        ));
        let short = Array1::<f64>::zeros(10);
        assert!(matches!(
            rasterize_pose(short.view(), &topo, 32, 32),
            Err(Error::ShapeMismatch { .. })
        ));
        let bad_edge = SkeletonTopology {
            edges: vec![Edge { a: 0, b: KEYPOINTS, color: [1, 1, 1] }],
            joint_colors: vec![[0, 0, 0]; KEYPOINTS],
        };
        assert!(bad_edge.validate().is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut frame = uniform_frame(0.5, 0.5);
        frame[4] = f64::NAN;
        assert!(matches!(
            rasterize_pose(frame.view(), &SkeletonTopology::default_topology(), 32, 32),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    fn random_streams(m: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = rng_for(9, "streams", m as u64);
        let pose = Array2::from_shape_fn((m, POSE_DIM), |_| rng.gen_range(0.0..1.0));
        let hamer = Array2::from_shape_fn((m, HAMER_DIM), |(_, c)| {
            let (lo, hi) = Modality::Hamer.channel_bounds(c);
            rng.gen_range(lo..hi)
        });
        let smplerx = Array2::from_shape_fn((m, SMPLERX_DIM), |(_, c)| {
            let (lo, hi) = Modality::Smplerx.channel_bounds(c);
            rng.gen_range(lo..hi)
        });
        (pose, hamer, smplerx)
    }

    #[test]
    fn synthesize_produces_one_deterministic_frame_per_input_frame() {
        let (pose, hamer, smplerx) = random_streams(3);
        let a = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        let b = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.width() == DEFAULT_CANVAS && f.height() == DEFAULT_CANVAS));
    }

    #[test]
    fn synthesize_empty_input_gives_empty_list() {
        let (pose, hamer, smplerx) = random_streams(0);
        let frames = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn synthesize_rejects_unknown_plugin_and_misalignment() {
        let (pose, hamer, smplerx) = random_streams(2);
        match synthesize(&pose, &hamer, &smplerx, "neural") {
            Err(Error::UnknownPlugin { id, available }) => {
                assert_eq!(id, "neural");
                assert!(available.contains("composite"));
            }
            other => panic!("expected unknown-plugin error, got {other:?}"),
        }
        let (short, _, _) = random_streams(1);
        assert!(matches!(
            synthesize(&short, &hamer, &smplerx, DEFAULT_SYNTHESIZER),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn every_stream_reaches_its_own_canvas_region() {
        let (pose, hamer, smplerx) = random_streams(1);
        let base = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();

        let mut pose2 = pose.clone();
        pose2[[0, 0]] = (pose2[[0, 0]] + 0.5) % 1.0;
        let moved = synthesize(&pose2, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        assert_ne!(base, moved, "skeleton region must react to pose");

        let mut hamer2 = hamer.clone();
        hamer2[[0, 0]] = -hamer2[[0, 0]];
        let moved = synthesize(&pose, &hamer2, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        assert_ne!(base, moved, "hand panel must react to hand parameters");

        let mut smplerx2 = smplerx.clone();
        smplerx2[[0, 10]] = -smplerx2[[0, 10]];
        let moved = synthesize(&pose, &hamer, &smplerx2, DEFAULT_SYNTHESIZER).unwrap();
        assert_ne!(base, moved, "body band must react to body parameters");
    }

    #[test]
    fn offset_pose_renders_measurably_but_finitely_different() {
        // A uniform 0.1 keypoint offset must move the skeleton enough for
        // the image metrics to see it, while both renders stay comparable.
        let (pose, hamer, smplerx) = random_streams(2);
        let mut offset = pose.clone();
        offset.mapv_inplace(|v| (v + 0.1).min(1.0));
        let base = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        let moved = synthesize(&offset, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            let p = crate::metrics::psnr(a, b).unwrap();
            assert!(p.is_finite());
            assert!(p < crate::metrics::PSNR_CAP, "renders must differ: {p}");
            let s = crate::metrics::ssim(a, b).unwrap();
            assert!(s < 1.0 - 1e-6, "{s}");
        }
    }

    #[test]
    fn save_frames_writes_numbered_pngs_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let (pose, hamer, smplerx) = random_streams(2);
        let frames = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER).unwrap();
        save_frames(dir.path(), &frames, DEFAULT_FPS).unwrap();
        assert!(dir.path().join("frame_00000.png").exists());
        assert!(dir.path().join("frame_00001.png").exists());
        let index: FrameIndex =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap())
                .unwrap();
        assert_eq!(index, FrameIndex { fps: 25, frame_count: 2 });
    }
}
