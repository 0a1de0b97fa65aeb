//! Patch-addressable sensor model: frame partitioning, sensed-set masks,
//! and readout bandwidth/energy accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("frame data length {got} does not match {width}x{height}x{channels}")]
    BadFrameLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("frame values must lie in [0,1]")]
    ValueOutOfRange,
    #[error("channels must be 1 or 3, got {0}")]
    BadChannels(usize),
    #[error("patch size {patch} does not divide frame {width}x{height}")]
    NonDivisible {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("mask has {got} entries but grid has {expected} patches")]
    MaskMismatch { got: usize, expected: usize },
    #[error("grid built for {gw}x{gh} but frame is {fw}x{fh}")]
    GridFrameMismatch {
        gw: usize,
        gh: usize,
        fw: usize,
        fh: usize,
    },
}

/// A single image with pixel values in `[0,1]`, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub time_index: usize,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        time_index: usize,
    ) -> Result<Self, SensorError> {
        if channels != 1 && channels != 3 {
            return Err(SensorError::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(SensorError::BadFrameLength {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(SensorError::ValueOutOfRange);
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
            time_index,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Frame {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            time_index: 0,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Raster-ordered partition of a frame into square patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }

    /// Pixel rectangle of patch `i` as `(x0, y0)` top-left corner.
    pub fn patch_origin(&self, i: usize) -> (usize, usize) {
        let r = i / self.cols;
        let c = i % self.cols;
        (c * self.patch_size, r * self.patch_size)
    }

    /// Patch index owning pixel `(x, y)`.
    pub fn patch_of(&self, x: usize, y: usize) -> usize {
        (y / self.patch_size) * self.cols + x / self.patch_size
    }

    fn check_frame(&self, frame: &Frame) -> Result<(), SensorError> {
        if frame.width != self.frame_width || frame.height != self.frame_height {
            return Err(SensorError::GridFrameMismatch {
                gw: self.frame_width,
                gh: self.frame_height,
                fw: frame.width,
                fh: frame.height,
            });
        }
        Ok(())
    }
}

/// Partition `frame` into `patch_size`-square patches. Frames that do not
/// divide evenly are a hard configuration error; there is no padding.
pub fn partition(frame: &Frame, patch_size: usize) -> Result<PatchGrid, SensorError> {
    if patch_size == 0 || frame.width % patch_size != 0 || frame.height % patch_size != 0 {
        return Err(SensorError::NonDivisible {
            patch: patch_size,
            width: frame.width,
            height: frame.height,
        });
    }
    Ok(PatchGrid {
        patch_size,
        rows: frame.height / patch_size,
        cols: frame.width / patch_size,
        frame_width: frame.width,
        frame_height: frame.height,
    })
}

/// Boolean sensed-set over a grid's patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub sensed: Vec<bool>,
}

impl PatchMask {
    pub fn all_sensed(n: usize) -> Self {
        PatchMask {
            sensed: vec![true; n],
        }
    }

    pub fn none_sensed(n: usize) -> Self {
        PatchMask {
            sensed: vec![false; n],
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut sensed = vec![false; n];
        for &i in indices {
            sensed[i] = true;
        }
        PatchMask { sensed }
    }

    pub fn sensed_indices(&self) -> Vec<usize> {
        self.sensed
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.sensed.iter().filter(|&&s| s).count()
    }

    pub fn check_grid(&self, grid: &PatchGrid) -> Result<(), SensorError> {
        if self.sensed.len() != grid.n_patches() {
            return Err(SensorError::MaskMismatch {
                got: self.sensed.len(),
                expected: grid.n_patches(),
            });
        }
        Ok(())
    }
}

/// Pixel vector of one patch: row-major within the patch, channel-interleaved.
fn patch_pixels(frame: &Frame, grid: &PatchGrid, i: usize) -> Vec<f64> {
    let p = grid.patch_size;
    let (x0, y0) = grid.patch_origin(i);
    let mut out = Vec::with_capacity(p * p * frame.channels);
    for dy in 0..p {
        for dx in 0..p {
            for c in 0..frame.channels {
                out.push(frame.pixel(x0 + dx, y0 + dy, c));
            }
        }
    }
    out
}

/// Tokens for the sensed patches only, ascending by patch index. Pixel data
/// of unsensed patches is never touched.
pub fn extract_tokens(
    frame: &Frame,
    grid: &PatchGrid,
    mask: &PatchMask,
) -> Result<Vec<(usize, Vec<f64>)>, SensorError> {
    grid.check_frame(frame)?;
    mask.check_grid(grid)?;
    Ok(mask
        .sensed_indices()
        .into_iter()
        .map(|i| (i, patch_pixels(frame, grid, i)))
        .collect())
}

/// Frame with unsensed patches replaced by zeros; sensed pixels are copied
/// bit-identically. Input for the dense baseline and visual dumps.
pub fn zero_fill(frame: &Frame, grid: &PatchGrid, mask: &PatchMask) -> Result<Frame, SensorError> {
    grid.check_frame(frame)?;
    mask.check_grid(grid)?;
    let mut out = Frame::zeros(frame.width, frame.height, frame.channels);
    out.time_index = frame.time_index;
    let p = grid.patch_size;
    for i in mask.sensed_indices() {
        let (x0, y0) = grid.patch_origin(i);
        for dy in 0..p {
            for dx in 0..p {
                for c in 0..frame.channels {
                    *out.pixel_mut(x0 + dx, y0 + dy, c) = frame.pixel(x0 + dx, y0 + dy, c);
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel readout and digitization energies, in arbitrary units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostModel {
    pub e_read: f64,
    pub e_adc: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            e_read: 1.0,
            e_adc: 1.0,
        }
    }
}

/// Readout accounting for one masked frame. A patch that is not sensed is
/// never read from the pixel array nor digitized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub pixels_read: u64,
    pub adc_conversions: u64,
    pub fraction_sensed: f64,
    pub energy_estimate: f64,
}

pub fn readout_cost(
    mask: &PatchMask,
    grid: &PatchGrid,
    channels: usize,
    cost: &CostModel,
) -> Result<BandwidthReport, SensorError> {
    mask.check_grid(grid)?;
    let sensed = mask.count() as u64;
    let pixels_read = sensed * (grid.patch_size * grid.patch_size * channels) as u64;
    Ok(BandwidthReport {
        pixels_read,
        adc_conversions: pixels_read,
        fraction_sensed: sensed as f64 / grid.n_patches() as f64,
        energy_estimate: pixels_read as f64 * (cost.e_read + cost.e_adc),
    })
}
