//! Synthetic moving-shape videos with the ground-truth structure the rest of
//! the pipeline consumes: class labels, per-pixel attention masks with
//! periodic attention shifts, boxes with persistent track ids, and instance
//! maps. Everything is a pure function of the scene config.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_pnm, write_pnm, IoError};
use crate::sensor::Frame;
use crate::tracking::BBox;

pub const N_CLASSES: usize = 4;

/// The four shape classes standing in for object categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Disc,
    Square,
    Triangle,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; N_CLASSES] =
        [ShapeClass::Disc, ShapeClass::Square, ShapeClass::Triangle, ShapeClass::Cross];

    pub fn index(self) -> usize {
        match self {
            ShapeClass::Disc => 0,
            ShapeClass::Square => 1,
            ShapeClass::Triangle => 2,
            ShapeClass::Cross => 3,
        }
    }

    /// Shape membership test at offset (dx, dy) from the center, size r.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeClass::Disc => dx * dx + dy * dy <= r * r,
            ShapeClass::Square => dx.abs() <= r && dy.abs() <= r,
            // upright triangle, apex at the top
            ShapeClass::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
            ShapeClass::Cross => {
                (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub n_frames: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Attention moves to the next object every this many frames.
    pub shift_interval: usize,
    /// Background noise amplitude in [0,1].
    pub clutter: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 32,
            height: 32,
            channels: 1,
            n_frames: 16,
            objects_min: 2,
            objects_max: 3,
            speed_min: 0.5,
            speed_max: 1.5,
            shift_interval: 4,
            clutter: 0.2,
            radius_min: 3.0,
            radius_max: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid scene config: {0}")]
    BadConfig(String),
    #[error("unsatisfiable scene: {objects} objects of diameter {diameter:.1} do not fit a {width}x{height} frame")]
    Unsatisfiable {
        objects: usize,
        diameter: f64,
        width: usize,
        height: usize,
    },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("dataset at {path} is missing {what} for frame {frame}")]
    MissingFrame {
        path: String,
        what: String,
        frame: usize,
    },
    #[error("frame {frame}: {what} dims {got:?} do not match frame dims {want:?}")]
    DimMismatch {
        frame: usize,
        what: String,
        got: (usize, usize),
        want: (usize, usize),
    },
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |msg: &str| Err(DatagenError::BadConfig(msg.to_string()));
        if self.width == 0 || self.height == 0 || self.n_frames == 0 {
            return bad("dims and frame count must be positive");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if self.shift_interval < 2 {
            return bad("shift_interval must be at least 2");
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return bad("need 1 <= objects_min <= objects_max");
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return bad("clutter must lie in [0,1]");
        }
        if self.radius_min <= 0.0 || self.radius_min > self.radius_max {
            return bad("need 0 < radius_min <= radius_max");
        }
        if self.speed_min < 0.0 || self.speed_min > self.speed_max {
            return bad("need 0 <= speed_min <= speed_max");
        }
        let diameter = 2.0 * self.radius_max;
        let fits = diameter < self.width.min(self.height) as f64;
        let area_ok =
            self.objects_max as f64 * diameter * diameter <= (self.width * self.height) as f64;
        if !fits || !area_ok {
            return Err(DatagenError::Unsatisfiable {
                objects: self.objects_max,
                diameter,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// One annotated box in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: u32,
    pub class: ShapeClass,
    pub bbox: BBox,
}

/// Per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGt {
    pub attended_id: u32,
    pub attended_class: ShapeClass,
    pub boxes: Vec<GtBox>,
    /// 1 where the attended object's silhouette is, 0 elsewhere.
    pub attention: Vec<u8>,
    /// Object id per pixel (0 = background); later ids overdraw earlier ones.
    pub instance_map: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub config: SceneConfig,
    pub frames: Vec<FrameGt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: Vec<Frame>,
}

struct MovingObject {
    id: u32,
    class: ShapeClass,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    r: f64,
    // per-channel brightness
    color: Vec<f64>,
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn bounce(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    *pos += *vel;
    if *pos < lo {
        *pos = lo + (lo - *pos);
        *vel = -*vel;
    } else if *pos > hi {
        *pos = hi - (*pos - hi);
        *vel = -*vel;
    }
    *pos = pos.clamp(lo, hi);
}

/// Render bouncing shapes over static clutter. Deterministic per seed.
pub fn generate_video(config: &SceneConfig) -> Result<(Video, GroundTruth), DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h, ch) = (config.width, config.height, config.channels);

    // static background clutter, quantized so file round trips are exact
    let background: Vec<f64> = (0..w * h * ch)
        .map(|_| quantize(rng.gen::<f64>() * config.clutter * 0.35))
        .collect();

    let n_objects = rng.gen_range(config.objects_min..=config.objects_max);
    let mut objects = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let r = rng.gen_range(config.radius_min..=config.radius_max);
        let speed = rng.gen_range(config.speed_min..=config.speed_max);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let cx = rng.gen_range(r..w as f64 - r);
        let cy = rng.gen_range(r..h as f64 - r);
        let class = ShapeClass::ALL[rng.gen_range(0..N_CLASSES)];
        let color: Vec<f64> = (0..ch).map(|_| quantize(rng.gen_range(0.6..1.0))).collect();
        objects.push(MovingObject {
            id: (i + 1) as u32,
            class,
            cx,
            cy,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
            r,
            color,
        });
    }

    let mut frames = Vec::with_capacity(config.n_frames);
    let mut gt_frames = Vec::with_capacity(config.n_frames);
    for t in 0..config.n_frames {
        if t > 0 {
            for o in objects.iter_mut() {
                let (vx, vy) = (o.vx, o.vy);
                let (mut cx, mut cy) = (o.cx, o.cy);
                let (mut vx2, mut vy2) = (vx, vy);
                bounce(&mut cx, &mut vx2, o.r, w as f64 - o.r);
                bounce(&mut cy, &mut vy2, o.r, h as f64 - o.r);
                o.cx = cx;
                o.cy = cy;
                o.vx = vx2;
                o.vy = vy2;
            }
        }

        let mut data = background.clone();
        let mut instance_map = vec![0u32; w * h];
        let mut boxes = Vec::with_capacity(objects.len());
        for o in &objects {
            let x0 = ((o.cx - o.r).floor().max(0.0)) as usize;
            let x1 = ((o.cx + o.r).ceil().min(w as f64 - 1.0)) as usize;
            let y0 = ((o.cy - o.r).floor().max(0.0)) as usize;
            let y1 = ((o.cy + o.r).ceil().min(h as f64 - 1.0)) as usize;
            let (mut bx0, mut bx1, mut by0, mut by1) = (usize::MAX, 0, usize::MAX, 0);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let dx = x as f64 + 0.5 - o.cx;
                    let dy = y as f64 + 0.5 - o.cy;
                    if o.class.contains(dx, dy, o.r) {
                        instance_map[y * w + x] = o.id;
                        for c in 0..ch {
                            data[(y * w + x) * ch + c] = o.color[c];
                        }
                        bx0 = bx0.min(x);
                        bx1 = bx1.max(x);
                        by0 = by0.min(y);
                        by1 = by1.max(y);
                    }
                }
            }
            if bx0 != usize::MAX {
                boxes.push(GtBox {
                    id: o.id,
                    class: o.class,
                    bbox: BBox::new(
                        bx0 as f64,
                        by0 as f64,
                        (bx1 - bx0 + 1) as f64,
                        (by1 - by0 + 1) as f64,
                    ),
                });
            }
        }

        let attended = &objects[(t / config.shift_interval) % objects.len()];
        let attention: Vec<u8> = instance_map
            .iter()
            .map(|&id| (id == attended.id) as u8)
            .collect();

        frames.push(Frame::new(w, h, ch, data, t).expect("generated frame is valid"));
        gt_frames.push(FrameGt {
            attended_id: attended.id,
            attended_class: attended.class,
            boxes,
            attention,
            instance_map,
        });
    }

    Ok((
        Video { frames },
        GroundTruth {
            config: config.clone(),
            frames: gt_frames,
        },
    ))
}

// ---------------------------------------------------------------------------
// dataset directory layout
//
//   <dir>/frame_000000.p?m        frames (P5 or P6)
//   <dir>/masks/mask_000000.pgm   attention masks, 0/255
//   <dir>/instances/inst_000000.pgm  instance ids as raw byte values
//   <dir>/gt.json                 config + per-frame labels and boxes

#[derive(Serialize, Deserialize)]
struct GtJsonFrame {
    attended_id: u32,
    attended_class: ShapeClass,
    boxes: Vec<GtBox>,
}

#[derive(Serialize, Deserialize)]
struct GtJson {
    config: SceneConfig,
    n_frames: usize,
    frames: Vec<GtJsonFrame>,
}

fn frame_name(i: usize, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("frame_{i:06}.{ext}")
}

fn map_to_frame(map: &[u8], w: usize, h: usize, t: usize) -> Frame {
    let data = map.iter().map(|&v| v as f64 / 255.0).collect();
    Frame::new(w, h, 1, data, t).expect("map values fit in [0,1]")
}

pub fn write_dataset(dir: &Path, video: &Video, gt: &GroundTruth) -> Result<(), DatagenError> {
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|source| IoError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    mkdir(dir)?;
    mkdir(&dir.join("masks"))?;
    mkdir(&dir.join("instances"))?;
    let (w, h) = (gt.config.width, gt.config.height);

    let mut json_frames = Vec::with_capacity(gt.frames.len());
    for (t, (frame, fgt)) in video.frames.iter().zip(&gt.frames).enumerate() {
        write_pnm(frame, &dir.join(frame_name(t, frame.channels)))?;
        let mask: Vec<u8> = fgt.attention.iter().map(|&v| v * 255).collect();
        write_pnm(&map_to_frame(&mask, w, h, t), &dir.join(format!("masks/mask_{t:06}.pgm")))?;
        let inst: Vec<u8> = fgt.instance_map.iter().map(|&v| v as u8).collect();
        write_pnm(
            &map_to_frame(&inst, w, h, t),
            &dir.join(format!("instances/inst_{t:06}.pgm")),
        )?;
        json_frames.push(GtJsonFrame {
            attended_id: fgt.attended_id,
            attended_class: fgt.attended_class,
            boxes: fgt.boxes.clone(),
        });
    }

    let json = GtJson {
        config: gt.config.clone(),
        n_frames: gt.frames.len(),
        frames: json_frames,
    };
    let gt_path = dir.join("gt.json");
    let mut out = serde_json::to_vec_pretty(&json).expect("gt serializes");
    out.push(b'\n');
    std::fs::write(&gt_path, out).map_err(|source| {
        DatagenError::Io(IoError::Io {
            path: gt_path.display().to_string(),
            source,
        })
    })
}

fn read_map(path: &Path, dir: &Path, what: &str, t: usize) -> Result<Vec<u8>, DatagenError> {
    if !path.exists() {
        return Err(DatagenError::MissingFrame {
            path: dir.display().to_string(),
            what: what.to_string(),
            frame: t,
        });
    }
    let f = read_pnm(path)?;
    Ok(f.data.iter().map(|&v| (v * 255.0).round() as u8).collect())
}

pub fn read_dataset(dir: &Path) -> Result<(Video, GroundTruth), DatagenError> {
    let gt_path = dir.join("gt.json");
    let text = std::fs::read(&gt_path).map_err(|source| IoError::Io {
        path: gt_path.display().to_string(),
        source,
    })?;
    let json: GtJson = serde_json::from_slice(&text).map_err(|e| IoError::BadJson {
        path: gt_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let (w, h, ch) = (json.config.width, json.config.height, json.config.channels);

    let mut frames = Vec::with_capacity(json.n_frames);
    let mut gt_frames = Vec::with_capacity(json.n_frames);
    for (t, jf) in json.frames.iter().enumerate() {
        let fp = dir.join(frame_name(t, ch));
        if !fp.exists() {
            return Err(DatagenError::MissingFrame {
                path: dir.display().to_string(),
                what: "frame".to_string(),
                frame: t,
            });
        }
        let mut frame = read_pnm(&fp)?;
        if (frame.width, frame.height) != (w, h) {
            return Err(DatagenError::DimMismatch {
                frame: t,
                what: "frame".to_string(),
                got: (frame.width, frame.height),
                want: (w, h),
            });
        }
        frame.time_index = t;

        let mask = read_map(&dir.join(format!("masks/mask_{t:06}.pgm")), dir, "mask", t)?;
        let inst = read_map(
            &dir.join(format!("instances/inst_{t:06}.pgm")),
            dir,
            "instance map",
            t,
        )?;
        if mask.len() != w * h || inst.len() != w * h {
            return Err(DatagenError::DimMismatch {
                frame: t,
                what: "mask".to_string(),
                got: (mask.len(), 1),
                want: (w * h, 1),
            });
        }
        frames.push(frame);
        gt_frames.push(FrameGt {
            attended_id: jf.attended_id,
            attended_class: jf.attended_class,
            boxes: jf.boxes.clone(),
            attention: mask.iter().map(|&v| (v > 0) as u8).collect(),
            instance_map: inst.iter().map(|&v| v as u32).collect(),
        });
    }
    Ok((
        Video { frames },
        GroundTruth {
            config: json.config,
            frames: gt_frames,
        },
    ))
}

/// Write several videos as `video_000/`, `video_001/`, ... under one root.
pub fn write_videos(dir: &Path, sets: &[(Video, GroundTruth)]) -> Result<(), DatagenError> {
    for (i, (v, g)) in sets.iter().enumerate() {
        write_dataset(&dir.join(format!("video_{i:03}")), v, g)?;
    }
    Ok(())
}

pub fn read_videos(dir: &Path) -> Result<Vec<(Video, GroundTruth)>, DatagenError> {
    let mut out = Vec::new();
    loop {
        let sub = dir.join(format!("video_{:03}", out.len()));
        if !sub.is_dir() {
            break;
        }
        out.push(read_dataset(&sub)?);
    }
    if out.is_empty() {
        return Err(DatagenError::MissingFrame {
            path: dir.display().to_string(),
            what: "video_000 directory".to_string(),
            frame: 0,
        });
    }
    Ok(out)
}

/// Convenience: n videos from one base config, seeds base_seed + i.
pub fn generate_videos(
    config: &SceneConfig,
    n: usize,
    base_seed: u64,
) -> Result<Vec<(Video, GroundTruth)>, DatagenError> {
    (0..n)
        .map(|i| {
            let mut c = config.clone();
            c.seed = base_seed + i as u64;
            generate_video(&c)
        })
        .collect()
}
