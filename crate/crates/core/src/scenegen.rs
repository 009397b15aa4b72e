//! Procedural multi-height scene renderer.
//!
//! A pinhole camera pitched down by `pitch_deg` looks along +z over a flat
//! labeled ground plane (`y = 0`) populated with vertical, camera-facing
//! billboards. Every pixel ray is classified the same way for the image and
//! the label map, so the two never disagree. Texture comes from value noise
//! keyed on world coordinates, which keeps a surface point's appearance
//! independent of the viewing height.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ClassId, Image, LabelMap, Palette, ViewLadder};
use crate::error::{invalid, Result};

/// Dataset flavour: `Sim` is static, `Street` adds lighting changes and moving objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sim,
    Street,
}

impl Preset {
    pub fn palette(self) -> Palette {
        let names: &[&str] = match self {
            Preset::Sim => &SIM_CLASSES,
            Preset::Street => &STREET_CLASSES,
        };
        Palette::new(names.iter().copied()).expect("preset palettes are valid")
    }

    pub fn class_count(self) -> usize {
        match self {
            Preset::Sim => SIM_CLASSES.len(),
            Preset::Street => STREET_CLASSES.len(),
        }
    }

    /// Default ladder top and rung count.
    pub fn default_ladder(self) -> (f64, usize) {
        match self {
            Preset::Sim => (10.0, 10),
            Preset::Street => (9.0, 9),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Preset::Sim),
            "street" => Ok(Preset::Street),
            other => Err(invalid(format!("unknown preset {other:?} (expected sim or street)"))),
        }
    }
}

const SIM_CLASSES: [&str; 6] = ["Plant", "Building", "Road", "Sky", "Car", "Pole"];
const STREET_CLASSES: [&str; 8] = ["Plant", "Building", "Road", "Sky", "Car", "Pole", "Sidewalk", "Fence"];

pub const PLANT: ClassId = ClassId(0);
pub const BUILDING: ClassId = ClassId(1);
pub const ROAD: ClassId = ClassId(2);
pub const SKY: ClassId = ClassId(3);
pub const CAR: ClassId = ClassId(4);
pub const POLE: ClassId = ClassId(5);
pub const SIDEWALK: ClassId = ClassId(6);
pub const FENCE: ClassId = ClassId(7);

/// Pinhole camera with principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    /// Downward pitch from horizontal, degrees.
    pub pitch_deg: f64,
    /// Camera center elevation, meters.
    pub height_m: f64,
    /// Forward travel per frame along +z, meters.
    pub step_m: f64,
}

impl CameraSpec {
    /// 192x108, f = 160 px, 15 degrees pitch, 0.5 m per frame.
    pub fn desk_default(height_m: f64) -> Self {
        Self { focal_px: 160.0, width: 192, height: 108, pitch_deg: 15.0, height_m, step_m: 0.5 }
    }

    pub fn at_height(self, height_m: f64) -> Self {
        Self { height_m, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(invalid("focal length must be positive"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(invalid(format!("image must be at least 8x8, got {}x{}", self.width, self.height)));
        }
        if !(0.0..90.0).contains(&self.pitch_deg) {
            return Err(invalid(format!("pitch must be in [0, 90), got {}", self.pitch_deg)));
        }
        if !(self.height_m > 0.0 && self.height_m.is_finite()) {
            return Err(invalid(format!("camera height must be positive, got {}", self.height_m)));
        }
        if !self.step_m.is_finite() {
            return Err(invalid("frame step must be finite"));
        }
        Ok(())
    }

    fn principal(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// World-frame ray direction through pixel `(u, v)` (unnormalized).
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let (cx, cy) = self.principal();
        let (s, c) = self.pitch_deg.to_radians().sin_cos();
        let xc = (u - cx) / self.focal_px;
        let yc = (v - cy) / self.focal_px;
        // camera right = +x, down = (0, -cos, -sin), forward = (0, -sin, cos)
        [xc, -yc * c - s, -yc * s + c]
    }

    /// Pixel coordinates of a world point, or `None` if it is not in front of the camera.
    pub fn project(&self, point: [f64; 3], frame_index: usize) -> Option<(f64, f64)> {
        let center = self.center(frame_index);
        let d = [point[0] - center[0], point[1] - center[1], point[2] - center[2]];
        let (s, c) = self.pitch_deg.to_radians().sin_cos();
        let depth = -d[1] * s + d[2] * c;
        if depth <= 1e-9 {
            return None;
        }
        let down = -d[1] * c - d[2] * s;
        let (cx, cy) = self.principal();
        Some((cx + self.focal_px * d[0] / depth, cy + self.focal_px * down / depth))
    }

    pub fn center(&self, frame_index: usize) -> [f64; 3] {
        [0.0, self.height_m, frame_index as f64 * self.step_m]
    }
}

/// Vertical rectangle in the plane `z = z0`, standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Billboard {
    pub x0: f64,
    pub z0: f64,
    pub width: f64,
    pub height: f64,
    pub class: ClassId,
    /// Texture variant (car paint, facade tint).
    pub style: u8,
}

/// Ground-plane layout: a road band along z, optional sidewalks, vegetation elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundLayout {
    pub road_half_width_m: f64,
    /// Zero disables sidewalks.
    pub sidewalk_width_m: f64,
    /// Amplitude of the low-frequency wobble of the road edge, meters.
    pub edge_wobble_m: f64,
    /// Base cell size of the texture noise, meters.
    pub noise_scale_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub preset: Preset,
    pub layout: GroundLayout,
    pub billboards: Vec<Billboard>,
}

/// Route start of the held-out random-height sequence; disjoint from the ladder route.
pub const TEST_AREA_Z: f64 = 400.0;
const WORLD_Z_END: f64 = 620.0;
const MAX_VIEW_DEPTH: f64 = 140.0;

impl WorldSpec {
    /// Procedurally populated world for `preset`.
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let layout = GroundLayout {
            road_half_width_m: 3.0,
            sidewalk_width_m: if preset == Preset::Street { 1.8 } else { 0.0 },
            edge_wobble_m: 0.35,
            noise_scale_m: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edb1_11b0_a2d5);
        let mut billboards = Vec::new();
        let curb = layout.road_half_width_m + layout.sidewalk_width_m;

        let mut push = |b: Billboard| billboards.push(b);

        // facades
        for side in [-1.0, 1.0] {
            let mut z = rng.random_range(-6.0..4.0);
            while z < WORLD_Z_END {
                let width = rng.random_range(6.0..12.0);
                let offset = curb + rng.random_range(3.5..6.0);
                push(Billboard {
                    x0: side * (offset + width / 2.0),
                    z0: z,
                    width,
                    height: rng.random_range(4.0..9.0),
                    class: BUILDING,
                    style: rng.random_range(0..4),
                });
                z += rng.random_range(9.0..16.0);
                // open lots between blocks
                if rng.random_bool(0.4) {
                    z += rng.random_range(15.0..30.0);
                }
            }
        }
        // trees and hedges between road and facades
        for side in [-1.0, 1.0] {
            let mut z = rng.random_range(-4.0..4.0);
            while z < WORLD_Z_END {
                push(Billboard {
                    x0: side * (curb + rng.random_range(2.2..5.0)),
                    z0: z,
                    width: rng.random_range(1.5..3.0),
                    height: rng.random_range(1.5..3.5),
                    class: PLANT,
                    style: 0,
                });
                z += rng.random_range(10.0..22.0);
            }
        }
        // poles along the curb
        for side in [-1.0, 1.0] {
            let mut z = rng.random_range(0.0..6.0);
            while z < WORLD_Z_END {
                push(Billboard {
                    x0: side * (curb + 0.6),
                    z0: z,
                    width: 0.45,
                    height: rng.random_range(4.0..5.5),
                    class: POLE,
                    style: 0,
                });
                z += rng.random_range(9.0..14.0);
            }
        }
        // parked and driving cars
        let mut z = rng.random_range(3.0..8.0);
        while z < WORLD_Z_END {
            let lane = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            push(Billboard {
                x0: lane * rng.random_range(0.9..1.9),
                z0: z,
                width: rng.random_range(1.7..2.0),
                height: rng.random_range(1.3..1.6),
                class: CAR,
                style: rng.random_range(0..4),
            });
            z += rng.random_range(8.0..18.0);
        }
        if preset == Preset::Street {
            for side in [-1.0, 1.0] {
                let mut z = rng.random_range(0.0..8.0);
                while z < WORLD_Z_END {
                    push(Billboard {
                        x0: side * (curb + rng.random_range(1.0..1.6)),
                        z0: z,
                        width: rng.random_range(2.5..5.0),
                        height: rng.random_range(0.9..1.3),
                        class: FENCE,
                        style: 0,
                    });
                    z += rng.random_range(10.0..20.0);
                }
            }
        }
        Self { seed, preset, layout, billboards }
    }

    pub fn palette(&self) -> Palette {
        self.preset.palette()
    }

    /// Ground class at world `(x, z)`.
    pub fn ground_class(&self, x: f64, z: f64) -> ClassId {
        let wobble = self.layout.edge_wobble_m * (2.0 * value_noise_1d(self.seed, 11, z / 7.0) - 1.0);
        let road = self.layout.road_half_width_m + wobble;
        let ax = x.abs();
        if ax < road {
            ROAD
        } else if ax < road + self.layout.sidewalk_width_m {
            SIDEWALK
        } else {
            PLANT
        }
    }

    /// Billboards shifted per sequence, standing in for moving objects.
    fn jittered(&self, sequence: u64) -> WorldSpec {
        let mut world = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ 0x0d1e_c7a1, sequence));
        for b in world.billboards.iter_mut().filter(|b| b.class == CAR) {
            b.x0 = (b.x0 + rng.random_range(-0.6..0.6)).clamp(-2.1, 2.1);
            b.z0 += rng.random_range(-3.0..3.0);
        }
        world
    }
}

// ---------------------------------------------------------------------------
// noise

pub(crate) fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, channel: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(mix64(mix64(seed, channel), ix as u64), iy as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in `[0, 1)`, one lattice cell per unit.
fn value_noise(seed: u64, channel: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, channel, ix, iy);
    let b = lattice(seed, channel, ix + 1, iy);
    let c = lattice(seed, channel, ix, iy + 1);
    let d = lattice(seed, channel, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn value_noise_1d(seed: u64, channel: u64, x: f64) -> f64 {
    value_noise(seed, channel, x, 0.5)
}

/// Two-octave noise in roughly `[-1, 1]`.
fn fbm(seed: u64, channel: u64, x: f64, y: f64) -> f64 {
    let n = 0.65 * value_noise(seed, channel, x, y) + 0.35 * value_noise(seed, channel + 1000, 3.1 * x, 3.1 * y);
    2.0 * n - 1.0
}

// ---------------------------------------------------------------------------
// shading

fn clamp_rgb(rgb: [f64; 3], brightness: f64) -> [u8; 3] {
    rgb.map(|c| (c * brightness).round().clamp(0.0, 255.0) as u8)
}

fn add(base: [f64; 3], luma: f64, tint: [f64; 3]) -> [f64; 3] {
    [base[0] + luma * tint[0], base[1] + luma * tint[1], base[2] + luma * tint[2]]
}

const CAR_PAINT: [[f64; 3]; 4] = [[190.0, 35.0, 35.0], [40.0, 65.0, 170.0], [225.0, 225.0, 225.0], [35.0, 35.0, 40.0]];
const FACADE: [[f64; 3]; 4] = [[170.0, 120.0, 90.0], [150.0, 108.0, 98.0], [185.0, 160.0, 120.0], [128.0, 92.0, 80.0]];

impl WorldSpec {
    fn shade_ground(&self, class: ClassId, x: f64, z: f64) -> [f64; 3] {
        let s = self.layout.noise_scale_m;
        let seed = self.seed;
        match class {
            ROAD => {
                let n = fbm(seed, 20, x / (2.0 * s), z / (2.0 * s));
                // dashed center line
                if x.abs() < 0.08 && (z / 3.0).rem_euclid(2.0) < 1.0 {
                    return add([200.0, 200.0, 190.0], 12.0 * n, [1.0, 1.0, 1.0]);
                }
                add([92.0, 92.0, 98.0], 22.0 * n, [1.0, 1.0, 1.0])
            }
            SIDEWALK => {
                let n = fbm(seed, 30, x / s, z / s);
                // paving joints
                let joint = (z / 1.2).rem_euclid(1.0) < 0.07;
                let base = if joint { [120.0, 114.0, 108.0] } else { [160.0, 152.0, 140.0] };
                add(base, 16.0 * n, [1.0, 1.0, 1.0])
            }
            _ => {
                let n = fbm(seed, 40, x / s, z / s);
                let m = fbm(seed, 42, x / (4.0 * s), z / (4.0 * s));
                add([78.0 + 18.0 * m, 112.0, 52.0], 34.0 * n, [0.7, 1.0, 0.5])
            }
        }
    }

    fn shade_billboard(&self, b: &Billboard, index: usize, x: f64, y: f64) -> [f64; 3] {
        let s = self.layout.noise_scale_m;
        let seed = mix64(self.seed, index as u64 + 1);
        let lx = x - (b.x0 - b.width / 2.0);
        match b.class {
            BUILDING => {
                let n = fbm(seed, 50, lx / s, y / s);
                let in_window = (lx / 1.6).rem_euclid(1.0) > 0.35 && (y / 2.2).rem_euclid(1.0) > 0.4 && y > 1.0;
                let base = if in_window { [70.0, 78.0, 92.0] } else { FACADE[b.style as usize % 4] };
                add(base, 18.0 * n, [1.0, 1.0, 1.0])
            }
            CAR => {
                let n = fbm(seed, 60, lx / (0.5 * s), y / (0.5 * s));
                let glass = y > 0.6 * b.height && lx > 0.2 * b.width && lx < 0.8 * b.width;
                let wheel = y < 0.3 && ((lx - 0.4).abs() < 0.3 || (lx - b.width + 0.4).abs() < 0.3);
                let base = if glass {
                    [55.0, 70.0, 85.0]
                } else if wheel {
                    [25.0, 25.0, 25.0]
                } else {
                    CAR_PAINT[b.style as usize % 4]
                };
                add(base, 14.0 * n, [1.0, 1.0, 1.0])
            }
            POLE => {
                let n = fbm(seed, 70, lx / s, y / s);
                add([225.0, 125.0, 40.0], 16.0 * n, [1.0, 1.0, 1.0])
            }
            FENCE => {
                let n = fbm(seed, 80, lx / s, y / s);
                let slat = (lx / 0.25).rem_euclid(1.0) < 0.5;
                let base = if slat { [150.0, 110.0, 70.0] } else { [105.0, 80.0, 55.0] };
                add(base, 14.0 * n, [1.0, 1.0, 1.0])
            }
            _ => {
                // foliage
                let n = fbm(seed, 90, lx / (0.6 * s), y / (0.6 * s));
                add([58.0, 96.0, 44.0], 38.0 * n, [0.6, 1.0, 0.5])
            }
        }
    }

    fn shade_sky(&self, d: [f64; 3]) -> [f64; 3] {
        let horiz = (d[0] * d[0] + d[2] * d[2]).sqrt();
        let elevation = d[1].atan2(horiz);
        let azimuth = d[0].atan2(d[2]);
        let cloud = value_noise(self.seed, 95, azimuth * 6.0, elevation * 12.0);
        let t = (elevation / 0.6).clamp(0.0, 1.0);
        let base = [175.0 - 45.0 * t, 200.0 - 30.0 * t, 232.0 - 10.0 * t];
        add(base, 30.0 * (cloud - 0.5).max(0.0), [1.0, 1.0, 1.0])
    }
}

/// Renders frame `frame_index` of `cam` over `world`.
pub fn render_view(world: &WorldSpec, cam: &CameraSpec, frame_index: usize) -> Result<(Image, LabelMap)> {
    render_lit(world, cam, frame_index, 1.0)
}

fn render_lit(world: &WorldSpec, cam: &CameraSpec, frame_index: usize, brightness: f64) -> Result<(Image, LabelMap)> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let center = cam.center(frame_index);
    let mut rgb = vec![[0.0f64; 3]; w * h];
    let mut labels = vec![0u8; w * h];

    for v in 0..h {
        for u in 0..w {
            let d = cam.ray(u as f64, v as f64);
            let p = v * w + u;
            if d[1] >= 0.0 {
                labels[p] = SKY.0;
                rgb[p] = world.shade_sky(d);
            } else {
                let t = cam.height_m / -d[1];
                let (x, z) = (t * d[0], center[2] + t * d[2]);
                let class = world.ground_class(x, z);
                labels[p] = class.0;
                rgb[p] = world.shade_ground(class, x, z);
            }
        }
    }

    // far-to-near over the ground
    let mut order: Vec<usize> = (0..world.billboards.len())
        .filter(|&i| {
            let depth = world.billboards[i].z0 - center[2];
            depth > 0.3 && depth < MAX_VIEW_DEPTH
        })
        .collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (world.billboards[a].z0, world.billboards[b].z0);
        zb.total_cmp(&za).then(a.cmp(&b))
    });
    for i in order {
        let b = &world.billboards[i];
        let corners = [
            [b.x0 - b.width / 2.0, 0.0, b.z0],
            [b.x0 + b.width / 2.0, 0.0, b.z0],
            [b.x0 - b.width / 2.0, b.height, b.z0],
            [b.x0 + b.width / 2.0, b.height, b.z0],
        ];
        let projected: Vec<(f64, f64)> = corners.iter().filter_map(|&c| cam.project(c, frame_index)).collect();
        if projected.len() < 4 {
            continue;
        }
        let umin = projected.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let umax = projected.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min((w - 1) as f64);
        let vmin = projected.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let vmax = projected.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min((h - 1) as f64);
        if umin > umax || vmin > vmax {
            continue;
        }
        for v in vmin as usize..=vmax as usize {
            for u in umin as usize..=umax as usize {
                let d = cam.ray(u as f64, v as f64);
                if d[2] <= 0.0 {
                    continue;
                }
                let t = (b.z0 - center[2]) / d[2];
                let x = t * d[0];
                let y = cam.height_m + t * d[1];
                if (x - b.x0).abs() <= b.width / 2.0 && (0.0..=b.height).contains(&y) {
                    let p = v * w + u;
                    labels[p] = b.class.0;
                    rgb[p] = world.shade_billboard(b, i, x, y);
                }
            }
        }
    }

    let pixels = rgb.iter().flat_map(|&c| clamp_rgb(c, brightness)).collect();
    Ok((Image::new(w, h, pixels)?, LabelMap::new(w, h, labels)?))
}

/// One flight (or drive) at a fixed nominal height.
///
/// Ground truth is always rendered; `labeled` says whether training may use it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    pub id: String,
    pub height_m: f64,
    /// Per-frame camera height; constant except for the random-height test split.
    pub frame_heights_m: Vec<f64>,
    pub labeled: bool,
    pub frames: Vec<(Image, LabelMap)>,
}

impl GeneratedSequence {
    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.frames.iter().map(|(img, _)| img)
    }
}

/// Sequence name for rung `index` (0-based): `car01`, `uav02`, ...
pub fn sequence_name(index: usize) -> String {
    if index == 0 {
        "car01".to_string()
    } else {
        format!("uav{:02}", index + 1)
    }
}

fn frame_brightness(world: &WorldSpec, sequence: u64, frame: usize) -> f64 {
    match world.preset {
        Preset::Sim => 1.0,
        Preset::Street => {
            let h = mix64(mix64(world.seed ^ 0x11ab_0d1e, sequence), frame as u64);
            0.8 + 0.4 * ((h >> 11) as f64 / (1u64 << 53) as f64)
        }
    }
}

/// One sequence per ladder rung, camera raised to the rung height; only rung 0 is labeled.
pub fn generate_dataset(
    world: &WorldSpec,
    ladder: &ViewLadder,
    frames_per_height: usize,
    cam_template: &CameraSpec,
) -> Result<Vec<GeneratedSequence>> {
    if frames_per_height == 0 {
        return Err(invalid("frames per height must be at least 1"));
    }
    if ladder.rung_count() == 0 {
        return Err(invalid("empty ladder"));
    }
    ladder
        .heights_m()
        .iter()
        .enumerate()
        .map(|(rung, &height_m)| {
            let cam = cam_template.at_height(height_m);
            let scene = match world.preset {
                Preset::Sim => world.clone(),
                Preset::Street => world.jittered(rung as u64),
            };
            let frames = (0..frames_per_height)
                .map(|f| render_lit(&scene, &cam, f, frame_brightness(world, rung as u64, f)))
                .collect::<Result<Vec<_>>>()?;
            Ok(GeneratedSequence {
                id: sequence_name(rung),
                height_m,
                frame_heights_m: vec![height_m; frames_per_height],
                labeled: rung == 0,
                frames,
            })
        })
        .collect()
}

/// Held-out `uav_random` split: each frame at a seeded uniform height in
/// `[lo, hi]`, flown over a separate stretch of the world.
pub fn generate_random_height_testset(
    world: &WorldSpec,
    h_range: (f64, f64),
    frames: usize,
    cam_template: &CameraSpec,
) -> Result<GeneratedSequence> {
    let (lo, hi) = h_range;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo <= 0.0 {
        return Err(invalid(format!("empty or invalid height range [{lo}, {hi}]")));
    }
    if frames == 0 {
        return Err(invalid("frames must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(world.seed, 0xa11d_0a11));
    let offset_frames = (TEST_AREA_Z / cam_template.step_m.max(1e-3)).round() as usize;
    let mut heights = Vec::with_capacity(frames);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let height = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let cam = cam_template.at_height(height);
        let brightness = frame_brightness(world, 1000, f);
        out.push(render_lit(world, &cam, offset_frames + f, brightness)?);
        heights.push(height);
    }
    Ok(GeneratedSequence {
        id: "uav_random".to_string(),
        height_m: 0.5 * (lo + hi),
        frame_heights_m: heights,
        labeled: false,
        frames: out,
    })
}
