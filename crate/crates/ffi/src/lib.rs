//! C interface to the CVF engine.
//!
//! Every fallible function returns a [`CvfStatus`]. On failure the message
//! is kept per thread and can be read with [`cvf_last_error_message`].
//! Models are opaque handles created by [`cvf_model_load`] and released with
//! [`cvf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cvf::experiment::Model;
use cvf::io::load_container;
use cvf::process::{interpolate, noise_schedule, LatentBlock, LatentFrame, ProcessTime};
use cvf::rng::{rng_for, stream};
use cvf::sampler::SamplerConfig;
use cvf::CvfError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Loaded next-latent model.
pub struct CvfModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &CvfError) -> CvfStatus {
    match err {
        CvfError::DimensionMismatch { .. } => CvfStatus::DimensionMismatch,
        CvfError::TimeOutOfRange(_) | CvfError::InvalidArgument(_) | CvfError::Config { .. } => {
            CvfStatus::InvalidArgument
        }
        CvfError::NonFinite(_) | CvfError::Diverged(_) => CvfStatus::NonFinite,
        CvfError::Io { .. } => CvfStatus::Io,
        CvfError::BadMagic { .. }
        | CvfError::UnsupportedVersion { .. }
        | CvfError::Truncated { .. }
        | CvfError::Malformed { .. } => CvfStatus::Format,
        CvfError::DatasetExhausted(_) => CvfStatus::InvalidArgument,
    }
}

struct Failure(CvfStatus, String);

impl From<CvfError> for Failure {
    fn from(e: CvfError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CvfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CvfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CvfStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            CvfStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes excluding the terminator, so callers can size a buffer.
///
/// # Safety
/// `buf` must be null or point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cvf_last_error_message(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && buf_len > 0 {
            let n = msg.len().min(buf_len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Writes `g(t) = -t ln t` to `out`. `t` must lie in [0, 1].
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn cvf_noise_schedule(t: f64, out: *mut f64) -> CvfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = noise_schedule(ProcessTime::new(t)?);
        Ok(())
    })
}

/// Noisy interpolant between two latents of length `dim` at time `t`,
/// written to `out` (length `dim`).
///
/// # Safety
/// Each pointer must be valid for `dim` doubles; `out` must not alias inputs.
#[no_mangle]
pub unsafe extern "C" fn cvf_interpolate(
    current: *const f64,
    next: *const f64,
    eps: *const f64,
    dim: usize,
    t: f64,
    out: *mut f64,
) -> CvfStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(CvfStatus::InvalidArgument, "dim must be > 0".into()));
        }
        let a = LatentFrame::new(slice(current, dim, "current")?.to_vec())?;
        let b = LatentFrame::new(slice(next, dim, "next")?.to_vec())?;
        let e = LatentFrame::new(slice(eps, dim, "eps")?.to_vec())?;
        let z = interpolate(&a, &b, ProcessTime::new(t)?, &e)?;
        slice_mut(out, dim, "out")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Loads a model checkpoint written by the `cvf train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn cvf_model_load(path: *const c_char, out: *mut *mut CvfModel) -> CvfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(CvfStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let path = Path::new(path);
        let inner = Model::from_tensors(&load_container(path)?, path)?;
        *out = Box::into_raw(Box::new(CvfModel { inner }));
        Ok(())
    })
}

/// Releases a handle from [`cvf_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cvf_model_free(model: *mut CvfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of latent frames the model conditions on. Returns 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvf_model_context_len(model: *const CvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.context_len())
}

/// Latent dimension. Returns 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvf_model_latent_dim(model: *const CvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

/// Samples the latent following `context` (`context_len * latent_dim`
/// doubles, oldest frame first) with `num_steps` sampler steps and writes it
/// to `out` (`latent_dim` doubles). Equal seeds give equal outputs.
///
/// # Safety
/// `model` must be a live handle and the buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn cvf_model_sample_next(
    model: *const CvfModel,
    context: *const f64,
    context_values: usize,
    num_steps: usize,
    stochastic: bool,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CvfStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let (len, dim) = (model.context_len(), model.latent_dim());
        if context_values != len * dim {
            return Err(CvfError::DimensionMismatch {
                expected: len * dim,
                got: context_values,
            }
            .into());
        }
        if out_len != dim {
            return Err(CvfError::DimensionMismatch {
                expected: dim,
                got: out_len,
            }
            .into());
        }
        let block = LatentBlock::from_flat(slice(context, context_values, "context")?, len, dim)?;
        let sampler = SamplerConfig {
            num_steps,
            stochastic,
            seed,
            ..SamplerConfig::default()
        };
        let mut rng = rng_for(seed, stream::SAMPLE);
        let next = model.sample_next(&block, num_steps, &sampler, &mut rng)?;
        slice_mut(out, dim, "out")?.copy_from_slice(next.as_slice());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_and_errors() {
        let mut g = 0.0;
        assert_eq!(unsafe { cvf_noise_schedule(0.5, &mut g) }, CvfStatus::Ok);
        assert_eq!(g, -0.5 * 0.5f64.ln());
        assert_eq!(unsafe { cvf_noise_schedule(1.5, &mut g) }, CvfStatus::InvalidArgument);
        let n = unsafe { cvf_last_error_message(std::ptr::null_mut(), 0) };
        assert!(n > 0);
        assert_eq!(unsafe { cvf_noise_schedule(0.5, std::ptr::null_mut()) }, CvfStatus::NullPointer);
    }

    #[test]
    fn message_truncates() {
        unsafe { cvf_noise_schedule(-1.0, std::ptr::null_mut()) };
        let mut buf = [1 as c_char; 4];
        let n = unsafe { cvf_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 3);
        assert_eq!(buf[3], 0);
    }

    #[test]
    fn interpolate_endpoints() {
        let (a, b, e) = ([1.0, 2.0], [3.0, -4.0], [0.3, 0.7]);
        let mut out = [0.0; 2];
        let s = unsafe { cvf_interpolate(a.as_ptr(), b.as_ptr(), e.as_ptr(), 2, 1.0, out.as_mut_ptr()) };
        assert_eq!(s, CvfStatus::Ok);
        assert_eq!(out, b);
    }

    #[test]
    fn load_missing_file() {
        let mut h = std::ptr::null_mut();
        let s = unsafe { cvf_model_load(c"/nonexistent/m.cvf".as_ptr(), &mut h) };
        assert_eq!(s, CvfStatus::Io);
        assert!(h.is_null());
    }
}
