//! C ABI over the cloneforge core.
//!
//! Every function returns a [`CfStatus`]. On failure the message is kept in a
//! thread-local slot readable through [`cf_last_error`]. Handles are opaque and
//! must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cloneforge::corpus::{load_cifar10_bin, load_image_dir, Corpus};
use cloneforge::encoder::MarginMode;
use cloneforge::trainer::{score_corpus, train_anchor, AnchorModel, TrainConfig, DEFAULT_SCORE_BATCH};
use cloneforge::{Error, IMAGE_LEN};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded image corpus.
pub struct CfCorpus {
    inner: Corpus,
}

/// A model trained for one anchor.
pub struct CfModel {
    inner: AnchorModel,
}

/// Training knobs exposed over the C ABI. Obtain defaults from
/// [`cf_train_options_default`] and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfTrainOptions {
    pub seed: u64,
    pub epochs: u32,
    pub embed_dim: u32,
    /// NaN selects the learned margin.
    pub fixed_margin: f32,
    pub lambda_var: f32,
    pub weight_decay: f32,
    pub n_pos: u32,
    pub n_unl: u32,
    pub batch_pos: u32,
    pub batch_unl: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfCandidate {
    pub index: u64,
    pub score: f32,
    pub is_clone: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::InvalidArgument(_) | Error::Shape(_) => CfStatus::InvalidArgument,
        Error::OutOfRange { .. } => CfStatus::OutOfRange,
        Error::Io { .. } => CfStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Corpus(_) => CfStatus::Format,
        Error::NonFinite { .. } => CfStatus::NonFinite,
    }
}

struct Fail(CfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(CfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if nothing has failed.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_load_store(path: *const c_char, out: *mut *mut CfCorpus) -> CfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, CfCorpus {
            inner: Corpus::load_store(&path)?,
        })
    })
}

/// Loads every decodable image in a directory, resized to 32×32.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_load_dir(dir: *const c_char, out: *mut *mut CfCorpus) -> CfStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        put(out, CfCorpus {
            inner: load_image_dir(&dir)?,
        })
    })
}

/// # Safety
/// `paths` must point to `n_paths` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_load_cifar(
    paths: *const *const c_char,
    n_paths: usize,
    out: *mut *mut CfCorpus,
) -> CfStatus {
    guard(|| {
        if paths.is_null() {
            return Err(null("paths"));
        }
        let files = std::slice::from_raw_parts(paths, n_paths)
            .iter()
            .map(|&p| path_arg(p, "paths[i]"))
            .collect::<Result<Vec<_>, _>>()?;
        put(out, CfCorpus {
            inner: load_cifar10_bin(&files)?,
        })
    })
}

/// Builds a corpus from `n_images` CHW float images in `[0, 1]`, each
/// `3·32·32` values. Image ids are their decimal indices.
///
/// # Safety
/// `pixels` must point to `n_images · 3072` floats.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_from_pixels(pixels: *const f32, n_images: usize, out: *mut *mut CfCorpus) -> CfStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let len = n_images
            .checked_mul(IMAGE_LEN)
            .ok_or_else(|| Fail(CfStatus::InvalidArgument, "n_images overflows".into()))?;
        let images = std::slice::from_raw_parts(pixels, len).to_vec();
        let ids = (0..n_images).map(|i| i.to_string()).collect();
        put(out, CfCorpus {
            inner: Corpus::from_images(images, ids)?,
        })
    })
}

/// # Safety
/// `corpus` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_len(corpus: *const CfCorpus, len: *mut usize) -> CfStatus {
    guard(|| {
        let c = deref(corpus, "corpus")?;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = c.inner.len();
        Ok(())
    })
}

/// Writes the 64-hex-digit corpus checksum plus a NUL into `buf`.
///
/// # Safety
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_checksum(corpus: *const CfCorpus, buf: *mut c_char, cap: usize) -> CfStatus {
    guard(|| {
        let c = deref(corpus, "corpus")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let sum = c.inner.checksum().as_bytes();
        if cap < sum.len() + 1 {
            return Err(Fail(CfStatus::BufferTooSmall, format!("need {} bytes", sum.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(sum.as_ptr().cast(), buf, sum.len());
        *buf.add(sum.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_corpus_free(corpus: *mut CfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

#[no_mangle]
pub extern "C" fn cf_train_options_default() -> CfTrainOptions {
    let d = TrainConfig::default();
    CfTrainOptions {
        seed: d.seed,
        epochs: d.epochs as u32,
        embed_dim: d.encoder.embed_dim as u32,
        fixed_margin: match d.encoder.margin {
            MarginMode::Fixed { value } => value,
            MarginMode::Learned => f32::NAN,
        },
        lambda_var: d.loss.lambda_var,
        weight_decay: d.weight_decay,
        n_pos: d.n_pos as u32,
        n_unl: d.n_unl as u32,
        batch_pos: d.batch_pos as u32,
        batch_unl: d.batch_unl as u32,
    }
}

fn train_config(o: &CfTrainOptions) -> Result<TrainConfig, Fail> {
    let mut t = TrainConfig {
        seed: o.seed,
        epochs: o.epochs as usize,
        weight_decay: o.weight_decay,
        n_pos: o.n_pos as usize,
        n_unl: o.n_unl as usize,
        batch_pos: o.batch_pos as usize,
        batch_unl: o.batch_unl as usize,
        ..TrainConfig::default()
    };
    t.encoder.embed_dim = o.embed_dim as usize;
    t.encoder.margin = if o.fixed_margin.is_nan() {
        MarginMode::Learned
    } else {
        MarginMode::Fixed { value: o.fixed_margin }
    };
    t.loss.lambda_var = o.lambda_var;
    t.validate()?;
    Ok(t)
}

/// Trains a model for corpus image `anchor`. `options` may be null for the
/// defaults.
///
/// # Safety
/// `corpus` must be a live handle; `options` null or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_model_train(
    corpus: *const CfCorpus,
    anchor: usize,
    options: *const CfTrainOptions,
    out: *mut *mut CfModel,
) -> CfStatus {
    guard(|| {
        let c = deref(corpus, "corpus")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| cf_train_options_default());
        let model = train_anchor(&c.inner, anchor, &train_config(&opts)?)?;
        put(out, CfModel { inner: model })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_model_load(path: *const c_char, anchor: usize, out: *mut *mut CfModel) -> CfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, CfModel {
            inner: AnchorModel::load(&path, anchor)?,
        })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cf_model_save(model: *const CfModel, path: *const c_char) -> CfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let path = path_arg(path, "path")?;
        m.inner.save(&path)?;
        Ok(())
    })
}

/// Mean positive norm, margin and threshold `τ = μ + m`. Any output pointer
/// may be null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_model_threshold(model: *const CfModel, mu: *mut f32, m: *mut f32, tau: *mut f32) -> CfStatus {
    guard(|| {
        let model = &deref(model, "model")?.inner;
        for (p, v) in [(mu, model.mu), (m, model.m), (tau, model.tau)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Writes `−‖f(x)‖₂` for every corpus image into `scores`, which must hold
/// the corpus length.
///
/// # Safety
/// `scores` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn cf_model_score(
    model: *const CfModel,
    corpus: *const CfCorpus,
    scores: *mut f32,
    cap: usize,
) -> CfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let c = deref(corpus, "corpus")?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        if cap < c.inner.len() {
            return Err(Fail(CfStatus::BufferTooSmall, format!("need {} floats", c.inner.len())));
        }
        let table = score_corpus(&m.inner, &c.inner, DEFAULT_SCORE_BATCH)?;
        std::ptr::copy_nonoverlapping(table.scores.as_ptr(), scores, table.scores.len());
        Ok(())
    })
}

/// The `k` most similar corpus images, best first, ties to the lower index.
/// Writes `min(k, corpus length)` entries and stores that count in `written`.
///
/// # Safety
/// `out` must hold `cap` entries; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cf_model_top_k(
    model: *const CfModel,
    corpus: *const CfCorpus,
    k: usize,
    out: *mut CfCandidate,
    cap: usize,
    written: *mut usize,
) -> CfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let c = deref(corpus, "corpus")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if written.is_null() {
            return Err(null("written"));
        }
        let n = k.min(c.inner.len());
        if cap < n {
            return Err(Fail(CfStatus::BufferTooSmall, format!("need {n} entries")));
        }
        let table = score_corpus(&m.inner, &c.inner, DEFAULT_SCORE_BATCH)?;
        for (slot, (i, s)) in table.top_k(n).into_iter().enumerate() {
            *out.add(slot) = CfCandidate {
                index: i as u64,
                score: s,
                is_clone: table.is_clone[i],
            };
        }
        *written = n;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_model_free(model: *mut CfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
