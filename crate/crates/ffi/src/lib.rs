//! C ABI over the core library: version info, metric and policy primitives,
//! readout cost accounting, dataset generation, and an opaque multi-object
//! tracking accumulator. All functions return an error code; the last error
//! message is retrievable per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use saccade_core::datagen::{generate_video, write_dataset, SceneConfig};
use saccade_core::metrics::{auroc, clear_mot, FrameObjects};
use saccade_core::policy::{topk_select, Budget, Heatmap};
use saccade_core::sensor::CostModel;
use saccade_core::tracking::BBox;

/// Status codes returned by every fallible function.
pub const SACCADE_OK: i32 = 0;
/// A required pointer argument was null.
pub const SACCADE_ERR_NULL: i32 = 1;
/// Arguments were structurally invalid (bad sizes, values out of range).
pub const SACCADE_ERR_INVALID: i32 = 2;
/// The operation itself failed; see the last error message.
pub const SACCADE_ERR_RUNTIME: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(code: i32, msg: &str) -> i32 {
    set_error(msg);
    code
}

/// Copy the last error message of this thread into `buf` (truncated,
/// always NUL-terminated). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn saccade_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn saccade_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Area under the ROC curve of `scores` against binary `labels` (midrank tie
/// handling). Writes the result to `out`.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn saccade_auroc(
    scores: *const f64,
    labels: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    if scores.is_null() || labels.is_null() || out.is_null() {
        return fail(SACCADE_ERR_NULL, "saccade_auroc: null argument");
    }
    let scores = std::slice::from_raw_parts(scores, n);
    let labels = std::slice::from_raw_parts(labels, n);
    match auroc(scores, labels) {
        Ok(v) => {
            *out = v;
            SACCADE_OK
        }
        Err(e) => fail(SACCADE_ERR_INVALID, &e.to_string()),
    }
}

/// Indices of the `k` highest-scoring patches (ties broken by ascending
/// index), written ascending into `out_indices`.
///
/// # Safety
/// `scores` must point to `n` readable doubles in [0,1]; `out_indices` must
/// hold `k` writable size_t values.
#[no_mangle]
pub unsafe extern "C" fn saccade_topk_select(
    scores: *const f64,
    n: usize,
    k: usize,
    out_indices: *mut usize,
) -> i32 {
    if scores.is_null() || out_indices.is_null() {
        return fail(SACCADE_ERR_NULL, "saccade_topk_select: null argument");
    }
    let scores = std::slice::from_raw_parts(scores, n).to_vec();
    let heat = match Heatmap::new(scores) {
        Ok(h) => h,
        Err(e) => return fail(SACCADE_ERR_INVALID, &e.to_string()),
    };
    match topk_select(&heat, Budget::Count(k)) {
        Ok(mask) => {
            for (i, idx) in mask.sensed_indices().into_iter().enumerate() {
                *out_indices.add(i) = idx;
            }
            SACCADE_OK
        }
        Err(e) => fail(SACCADE_ERR_INVALID, &e.to_string()),
    }
}

/// Readout accounting for `sensed` patches of size `patch_size` with
/// `channels` channels: pixels read and the energy estimate under per-pixel
/// read and digitization costs.
///
/// # Safety
/// `out_pixels` and `out_energy` must be writable or null (skipped).
#[no_mangle]
pub unsafe extern "C" fn saccade_readout_cost(
    sensed: usize,
    patch_size: usize,
    channels: usize,
    e_read: f64,
    e_adc: f64,
    out_pixels: *mut u64,
    out_energy: *mut f64,
) -> i32 {
    if patch_size == 0 || channels == 0 {
        return fail(SACCADE_ERR_INVALID, "patch_size and channels must be positive");
    }
    let cost = CostModel { e_read, e_adc };
    let pixels = (sensed * patch_size * patch_size * channels) as u64;
    if !out_pixels.is_null() {
        *out_pixels = pixels;
    }
    if !out_energy.is_null() {
        *out_energy = pixels as f64 * (cost.e_read + cost.e_adc);
    }
    SACCADE_OK
}

/// Generate a synthetic video dataset and write it to `dir`. Deterministic
/// per seed; layout matches the library's dataset reader.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn saccade_generate_dataset(
    dir: *const c_char,
    width: usize,
    height: usize,
    channels: usize,
    n_frames: usize,
    objects_min: usize,
    objects_max: usize,
    shift_interval: usize,
    clutter: f64,
    seed: u64,
) -> i32 {
    if dir.is_null() {
        return fail(SACCADE_ERR_NULL, "saccade_generate_dataset: null dir");
    }
    let dir = match CStr::from_ptr(dir).to_str() {
        Ok(s) => s,
        Err(_) => return fail(SACCADE_ERR_INVALID, "dir is not valid UTF-8"),
    };
    let config = SceneConfig {
        width,
        height,
        channels,
        n_frames,
        objects_min,
        objects_max,
        shift_interval,
        clutter,
        seed,
        ..SceneConfig::default()
    };
    let (video, gt) = match generate_video(&config) {
        Ok(v) => v,
        Err(e) => return fail(SACCADE_ERR_INVALID, &e.to_string()),
    };
    match write_dataset(Path::new(dir), &video, &gt) {
        Ok(()) => SACCADE_OK,
        Err(e) => fail(SACCADE_ERR_RUNTIME, &e.to_string()),
    }
}

/// Opaque CLEAR-MOT accumulator. Push ground-truth and hypothesis objects
/// frame by frame, then finish to get MOTA and MOTP.
pub struct SaccadeMot {
    iou_min: f64,
    gt: Vec<FrameObjects>,
    hyp: Vec<FrameObjects>,
}

#[no_mangle]
pub extern "C" fn saccade_mot_new(iou_min: f64) -> *mut SaccadeMot {
    Box::into_raw(Box::new(SaccadeMot {
        iou_min,
        gt: Vec::new(),
        hyp: Vec::new(),
    }))
}

unsafe fn frame_objects(
    ids: *const u32,
    boxes: *const f64,
    n: usize,
) -> Result<FrameObjects, &'static str> {
    if n > 0 && (ids.is_null() || boxes.is_null()) {
        return Err("null object arrays with nonzero count");
    }
    let ids = std::slice::from_raw_parts(ids, n);
    let boxes = std::slice::from_raw_parts(boxes, n * 4);
    Ok(ids
        .iter()
        .zip(boxes.chunks_exact(4))
        .map(|(&id, b)| (id, BBox::new(b[0], b[1], b[2], b[3])))
        .collect())
}

/// Append one frame. Boxes are `x, y, w, h` quadruples, one per object.
///
/// # Safety
/// `mot` must come from `saccade_mot_new`; arrays must match their counts.
#[no_mangle]
pub unsafe extern "C" fn saccade_mot_push_frame(
    mot: *mut SaccadeMot,
    gt_ids: *const u32,
    gt_boxes: *const f64,
    n_gt: usize,
    hyp_ids: *const u32,
    hyp_boxes: *const f64,
    n_hyp: usize,
) -> i32 {
    let Some(mot) = mot.as_mut() else {
        return fail(SACCADE_ERR_NULL, "saccade_mot_push_frame: null handle");
    };
    let gt = match frame_objects(gt_ids, gt_boxes, n_gt) {
        Ok(v) => v,
        Err(m) => return fail(SACCADE_ERR_NULL, m),
    };
    let hyp = match frame_objects(hyp_ids, hyp_boxes, n_hyp) {
        Ok(v) => v,
        Err(m) => return fail(SACCADE_ERR_NULL, m),
    };
    mot.gt.push(gt);
    mot.hyp.push(hyp);
    SACCADE_OK
}

/// Evaluate the accumulated sequence. The handle stays valid and can keep
/// accumulating afterwards.
///
/// # Safety
/// `mot` must come from `saccade_mot_new`; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn saccade_mot_finish(
    mot: *const SaccadeMot,
    out_mota: *mut f64,
    out_motp: *mut f64,
) -> i32 {
    let Some(mot) = mot.as_ref() else {
        return fail(SACCADE_ERR_NULL, "saccade_mot_finish: null handle");
    };
    match clear_mot(&mot.gt, &mot.hyp, mot.iou_min) {
        Ok((mota, motp, _)) => {
            if !out_mota.is_null() {
                *out_mota = mota;
            }
            if !out_motp.is_null() {
                *out_motp = motp;
            }
            SACCADE_OK
        }
        Err(e) => fail(SACCADE_ERR_INVALID, &e.to_string()),
    }
}

/// Release the accumulator. Null is a no-op.
///
/// # Safety
/// `mot` must come from `saccade_mot_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn saccade_mot_free(mot: *mut SaccadeMot) {
    if !mot.is_null() {
        drop(Box::from_raw(mot));
    }
}
