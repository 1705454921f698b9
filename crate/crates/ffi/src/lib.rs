//! C ABI over the `anchored` library.
//!
//! Conventions:
//! - every fallible function returns an [`AncStatus`]; on failure a message
//!   is available from [`anc_last_error_message`] on the same thread;
//! - matrices are dense, row-major `double` arrays (`rows * cols` values);
//! - objects are opaque handles created by `*_new`/`*_fit`/`*_load` and
//!   released with the matching `*_free`;
//! - output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use anchored::ensemble::PriorSpec;
use anchored::gp::{KernelHyper, KernelKind, KernelSpec};
use anchored::network::{Activation, Batch, NetworkShape, Optimizer, TrainConfig};
use anchored::{build_ensemble, gp_fit, Ensemble, Error, GpPosterior};
use nalgebra::{DMatrix, DVector};

pub const ANC_ACTIVATION_RELU: u32 = 0;
pub const ANC_ACTIVATION_ERF: u32 = 1;
pub const ANC_ACTIVATION_RBF: u32 = 2;
pub const ANC_ACTIVATION_LINEAR: u32 = 3;

pub const ANC_KERNEL_RELU: u32 = 0;
pub const ANC_KERNEL_ERF: u32 = 1;
pub const ANC_KERNEL_RBF: u32 = 2;

pub const ANC_OPTIMIZER_GRADIENT_DESCENT: u32 = 0;
pub const ANC_OPTIMIZER_ADAM: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Singular or non-PSD matrices, non-finite values, training divergence.
    Numerical = 4,
    Io = 5,
    /// Malformed files or text.
    Format = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Prior variances of an ensemble; see the library's `PriorSpec`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AncPrior {
    pub first_layer_var: f64,
    pub bias_var: f64,
    pub output_layer_var_base: f64,
    pub output_bias_var: f64,
    pub center_var: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AncTrainConfig {
    pub learning_rate: f64,
    pub epochs: u64,
    /// `ANC_OPTIMIZER_*`
    pub optimizer: u32,
    /// Zero disables early stopping.
    pub early_stop_tol: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AncKernelHyper {
    pub weight_var: f64,
    pub bias_var: f64,
    pub output_var: f64,
    pub output_bias_var: f64,
    pub center_var: f64,
    pub rbf_width_sq: f64,
}

/// Opaque ensemble handle.
pub struct AncEnsemble(Ensemble);

/// Opaque fitted-GP handle.
pub struct AncGp(GpPosterior);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> AncStatus {
    match err {
        Error::DimensionMismatch { .. } => AncStatus::DimensionMismatch,
        Error::Singular { .. }
        | Error::NotPsd { .. }
        | Error::NotSymmetric { .. }
        | Error::NonFinite(_)
        | Error::Divergence { .. } => AncStatus::Numerical,
        Error::Member { source, .. } => status_of(source),
        Error::InvalidArgument(_) => AncStatus::InvalidArgument,
        Error::Io(_) => AncStatus::Io,
        Error::Parse { .. } | Error::Format { .. } | Error::Json(_) | Error::Csv(_) => AncStatus::Format,
    }
}

struct Failure(AncStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AncStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AncStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AncStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AncStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AncStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `rows * cols` readable doubles.
unsafe fn matrix_arg(ptr: *const f64, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("`{what}` size overflows")))?;
    let data = slice::from_raw_parts(ptr, len);
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

/// # Safety
/// `ptr` must be null or point to `len` readable doubles.
unsafe fn vector_arg(ptr: *const f64, len: usize, what: &str) -> Result<DVector<f64>, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(DVector::from_column_slice(slice::from_raw_parts(ptr, len)))
}

/// # Safety
/// `ptr` must be null or a valid nul-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn activation_arg(code: u32) -> Result<Activation, Failure> {
    Ok(match code {
        ANC_ACTIVATION_RELU => Activation::Relu,
        ANC_ACTIVATION_ERF => Activation::Erf,
        ANC_ACTIVATION_RBF => Activation::Rbf,
        ANC_ACTIVATION_LINEAR => Activation::Linear,
        other => return Err(invalid(format!("unknown activation code {other}"))),
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn anc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null when the last call
/// succeeded. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn anc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Prior with every variance set to 1.
#[no_mangle]
pub extern "C" fn anc_prior_default() -> AncPrior {
    let p = PriorSpec::default();
    AncPrior {
        first_layer_var: p.first_layer_var,
        bias_var: p.bias_var,
        output_layer_var_base: p.output_layer_var_base,
        output_bias_var: p.output_bias_var,
        center_var: p.center_var,
    }
}

#[no_mangle]
pub extern "C" fn anc_train_config_default() -> AncTrainConfig {
    let c = TrainConfig::default();
    AncTrainConfig {
        learning_rate: c.learning_rate,
        epochs: c.epochs as u64,
        optimizer: ANC_OPTIMIZER_ADAM,
        early_stop_tol: c.early_stop_tol,
    }
}

/// Builds an untrained ensemble of `members` networks, each anchored at its
/// own prior draw (seeds `seed`, `seed + 1`, ...). `prior` may be null for
/// unit variances. `rbf_width_sq` is ignored unless the activation is rbf.
///
/// # Safety
/// `prior` must be null or valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_new(
    activation: u32,
    input_dim: usize,
    hidden_width: usize,
    rbf_width_sq: f64,
    members: usize,
    prior: *const AncPrior,
    sigma_eps_sq: f64,
    seed: u64,
    out: *mut *mut AncEnsemble,
) -> AncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let activation = activation_arg(activation)?;
        let shape = if activation == Activation::Linear {
            NetworkShape::linear(input_dim)?
        } else {
            NetworkShape::with_rbf_width(input_dim, hidden_width, activation, rbf_width_sq)?
        };
        let spec = match prior.as_ref() {
            None => PriorSpec::default(),
            Some(p) => PriorSpec {
                first_layer_var: p.first_layer_var,
                bias_var: p.bias_var,
                output_layer_var_base: p.output_layer_var_base,
                output_bias_var: p.output_bias_var,
                center_var: p.center_var,
            },
        };
        let ens = build_ensemble(members, shape, &spec, sigma_eps_sq, seed)?;
        *out = Box::into_raw(Box::new(AncEnsemble(ens)));
        Ok(())
    })
}

/// Trains every member on `n` rows of `x` (`n x input_dim`) and `y`.
/// `config` may be null for defaults; `threads == 0` uses all cores.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_train(
    ensemble: *mut AncEnsemble,
    x: *const f64,
    y: *const f64,
    n: usize,
    config: *const AncTrainConfig,
    threads: usize,
) -> AncStatus {
    guard(|| {
        let ens = &mut ensemble.as_mut().ok_or_else(|| null("ensemble"))?.0;
        let d = ens.shape().input_dim;
        let x = matrix_arg(x, n, d, "x")?;
        let y = vector_arg(y, n, "y")?;
        let cfg = match config.as_ref() {
            None => TrainConfig::default(),
            Some(c) => TrainConfig {
                learning_rate: c.learning_rate,
                epochs: usize::try_from(c.epochs).map_err(|_| invalid("epochs too large"))?,
                optimizer: match c.optimizer {
                    ANC_OPTIMIZER_GRADIENT_DESCENT => Optimizer::GradientDescent,
                    ANC_OPTIMIZER_ADAM => Optimizer::AdaptiveMoment,
                    other => return Err(invalid(format!("unknown optimizer code {other}"))),
                },
                early_stop_tol: c.early_stop_tol,
            },
        };
        let threads = (threads > 0).then_some(threads);
        ens.train(Batch::new(&x, &y)?, &cfg, threads)?;
        Ok(())
    })
}

/// Predictive mean, epistemic variance and total variance at `q` rows of
/// `x` (`q x input_dim`). Each output array holds `q` doubles; any of them
/// may be null when not needed.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_predict(
    ensemble: *const AncEnsemble,
    x: *const f64,
    q: usize,
    mean: *mut f64,
    epistemic_var: *mut f64,
    total_var: *mut f64,
) -> AncStatus {
    guard(|| {
        let ens = &ensemble.as_ref().ok_or_else(|| null("ensemble"))?.0;
        let x = matrix_arg(x, q, ens.shape().input_dim, "x")?;
        let dists = ens.predict(&x)?;
        for (i, d) in dists.iter().enumerate() {
            if !mean.is_null() {
                *mean.add(i) = d.mean;
            }
            if !epistemic_var.is_null() {
                *epistemic_var.add(i) = d.epistemic_var;
            }
            if !total_var.is_null() {
                *total_var.add(i) = d.total_var();
            }
        }
        Ok(())
    })
}

/// Number of members, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_len(ensemble: *const AncEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.len())
}

/// Writes the ensemble into directory `dir` (created if missing).
///
/// # Safety
/// `ensemble` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_save(ensemble: *const AncEnsemble, dir: *const c_char) -> AncStatus {
    guard(|| {
        let ens = &ensemble.as_ref().ok_or_else(|| null("ensemble"))?.0;
        ens.save(path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_load(dir: *const c_char, out: *mut *mut AncEnsemble) -> AncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ens = Ensemble::load(path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(AncEnsemble(ens)));
        Ok(())
    })
}

/// Releases an ensemble; null is ignored.
///
/// # Safety
/// `ensemble` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn anc_ensemble_free(ensemble: *mut AncEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Exact GP regression with an infinite-width network kernel on `n` rows of
/// `x` (`n x input_dim`).
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn anc_gp_fit(
    kernel: u32,
    hyper: *const AncKernelHyper,
    x: *const f64,
    y: *const f64,
    n: usize,
    input_dim: usize,
    noise_var: f64,
    out: *mut *mut AncGp,
) -> AncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let h = hyper.as_ref().ok_or_else(|| null("hyper"))?;
        let kind = match kernel {
            ANC_KERNEL_RELU => KernelKind::ReluArccos,
            ANC_KERNEL_ERF => KernelKind::Erf,
            ANC_KERNEL_RBF => KernelKind::RbfFinite,
            other => return Err(invalid(format!("unknown kernel code {other}"))),
        };
        let spec = KernelSpec {
            kind,
            hyper: KernelHyper {
                weight_var: h.weight_var,
                bias_var: h.bias_var,
                output_var: h.output_var,
                output_bias_var: h.output_bias_var,
                center_var: h.center_var,
                rbf_width_sq: h.rbf_width_sq,
            },
        };
        let x = matrix_arg(x, n, input_dim, "x")?;
        let y = vector_arg(y, n, "y")?;
        let post = gp_fit(&x, &y, &spec, noise_var)?;
        *out = Box::into_raw(Box::new(AncGp(post)));
        Ok(())
    })
}

/// Predictive mean and epistemic (latent) variance at `q` rows of `x`
/// (`q x input_dim`); either output may be null.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn anc_gp_predict(
    gp: *const AncGp,
    x: *const f64,
    q: usize,
    input_dim: usize,
    mean: *mut f64,
    epistemic_var: *mut f64,
) -> AncStatus {
    guard(|| {
        let post = &gp.as_ref().ok_or_else(|| null("gp"))?.0;
        let x = matrix_arg(x, q, input_dim, "x")?;
        for (i, d) in post.predict(&x)?.iter().enumerate() {
            if !mean.is_null() {
                *mean.add(i) = d.mean;
            }
            if !epistemic_var.is_null() {
                *epistemic_var.add(i) = d.epistemic_var;
            }
        }
        Ok(())
    })
}

/// Releases a GP; null is ignored.
///
/// # Safety
/// `gp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn anc_gp_free(gp: *mut AncGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}
