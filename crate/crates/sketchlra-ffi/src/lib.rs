//! C ABI over `sketchlra`.
//!
//! Objects are opaque handles created by `slra_*_new`/`slra_*_read` functions
//! and released with the matching `slra_*_free`. Every fallible call returns a
//! [`SlraStatus`]; on failure a message is available from
//! [`slra_last_error_message`] on the same thread. Indices are 0-based and
//! dense buffers are row-major.

use sketchlra::distsim::{distsim_run, DistOptions};
use sketchlra::fro_lra::{bicriteria_cubic, bicriteria_quadratic, fro_rank_k, AlgoParams};
use sketchlra::l1_lra::{l1_bicriteria, L1Params};
use sketchlra::streaming::{FinalizeMode, StreamState, Update};
use sketchlra::tensor::{residual_fro2, residual_l1};
use sketchlra::{Error, FactorTriple, Mat, Tensor3};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlraStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Parse = 3,
    InvalidParam = 4,
    Degenerate = 5,
    Numerical = 6,
    Index = 7,
    Io = 8,
    Panic = 9,
}

/// Solver used by [`slra_decompose`] and the finalizers.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlraMode {
    RankK = 0,
    Quadratic = 1,
    Cubic = 2,
}

/// Third-order tensor.
pub struct SlraTensor {
    inner: Tensor3,
}

/// Parameters of the Frobenius pipeline.
pub struct SlraParams {
    inner: AlgoParams,
}

/// CP factors `U` (`n1 × rank`), `V` (`n2 × rank`), `W` (`n3 × rank`).
pub struct SlraFactors {
    inner: FactorTriple,
}

/// Turnstile stream state.
pub struct SlraStream {
    inner: StreamState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SlraStatus {
    match e {
        Error::Shape(_) => SlraStatus::Shape,
        Error::Parse { .. } => SlraStatus::Parse,
        Error::InvalidParam(_) => SlraStatus::InvalidParam,
        Error::Degenerate(_) => SlraStatus::Degenerate,
        Error::Numerical(_) => SlraStatus::Numerical,
        Error::Index(_) => SlraStatus::Index,
        Error::Io(_) => SlraStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SlraStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlraStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SlraStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SlraStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn dims_of(dims: *const usize) -> Result<[usize; 3], Fail> {
    let d = slice(dims, 3, "dims")?;
    Ok([d[0], d[1], d[2]])
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn slra_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Force sequential execution inside the library.
#[no_mangle]
pub extern "C" fn slra_set_reproducible(on: bool) {
    sketchlra::par::set_reproducible(on);
}

/// Zero tensor with dimensions `dims[0..3]`.
///
/// # Safety
/// `dims` points to three values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_new(dims: *const usize, out: *mut *mut SlraTensor) -> SlraStatus {
    guard(|| {
        let d = dims_of(dims)?;
        put(out, SlraTensor { inner: Tensor3::zeros(d) }, "out")
    })
}

/// Dense tensor from `n1·n2·n3` values with entry `(i, j, l)` at `(i·n2 + j)·n3 + l`.
///
/// # Safety
/// `dims` points to three values, `data` to `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_from_dense(
    dims: *const usize,
    data: *const f64,
    len: usize,
    out: *mut *mut SlraTensor,
) -> SlraStatus {
    guard(|| {
        let d = dims_of(dims)?;
        let vals = slice(data, len, "data")?;
        let t = Tensor3::from_dense(d, vals.to_vec())?;
        put(out, SlraTensor { inner: t }, "out")
    })
}

/// Sparse tensor from `nnz` coordinate entries; duplicates are summed.
///
/// # Safety
/// `dims` points to three values; `is`, `js`, `ls`, `vals` to `nnz` values each; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_from_entries(
    dims: *const usize,
    is: *const usize,
    js: *const usize,
    ls: *const usize,
    vals: *const f64,
    nnz: usize,
    out: *mut *mut SlraTensor,
) -> SlraStatus {
    guard(|| {
        let d = dims_of(dims)?;
        let (i, j, l, v) = (slice(is, nnz, "is")?, slice(js, nnz, "js")?, slice(ls, nnz, "ls")?, slice(vals, nnz, "vals")?);
        let entries = (0..nnz).map(|n| (i[n], j[n], l[n], v[n])).collect();
        put(out, SlraTensor { inner: Tensor3::from_entries(d, entries)? }, "out")
    })
}

/// Read a `.tns` file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_read_tns(path: *const c_char, out: *mut *mut SlraTensor) -> SlraStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| Error::InvalidParam("path is not UTF-8".into()))?;
        let t = sketchlra::io::read_tns_file(std::path::Path::new(p))?;
        put(out, SlraTensor { inner: t }, "out")
    })
}

/// # Safety
/// `t` is a live tensor handle; `dims` has room for three values.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_dims(t: *const SlraTensor, dims: *mut usize) -> SlraStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        let d = t.inner.dims();
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&d);
        Ok(())
    })
}

/// # Safety
/// `t` is a live tensor handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_fro_norm2(t: *const SlraTensor, out: *mut f64) -> SlraStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        *deref_mut(out, "out")? = t.inner.fro_norm2();
        Ok(())
    })
}

/// # Safety
/// `t` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slra_tensor_free(t: *mut SlraTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Parameters with rank `k`, accuracy `eps` and root `seed`; other fields take defaults.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_params_new(k: usize, eps: f64, seed: u64, out: *mut *mut SlraParams) -> SlraStatus {
    guard(|| {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::InvalidParam(format!("eps must be positive, got {eps}")).into());
        }
        put(out, SlraParams { inner: AlgoParams::new(k, eps, seed) }, "out")
    })
}

/// Set the number of independent trials (at least 1).
///
/// # Safety
/// `p` is a live params handle.
#[no_mangle]
pub unsafe extern "C" fn slra_params_set_trials(p: *mut SlraParams, trials: usize) -> SlraStatus {
    guard(|| {
        let p = deref_mut(p, "params")?;
        if trials == 0 {
            return Err(Error::InvalidParam("trials must be at least 1".into()).into());
        }
        p.inner.trials = trials;
        Ok(())
    })
}

/// Set ALS restarts and sweeps for the rank-`k` solver.
///
/// # Safety
/// `p` is a live params handle.
#[no_mangle]
pub unsafe extern "C" fn slra_params_set_als(p: *mut SlraParams, restarts: usize, sweeps: usize) -> SlraStatus {
    guard(|| {
        let p = deref_mut(p, "params")?;
        p.inner.restarts = restarts.max(1);
        p.inner.sweeps = sweeps;
        Ok(())
    })
}

/// # Safety
/// `p` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slra_params_free(p: *mut SlraParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn zero_or<F: FnOnce() -> sketchlra::Result<FactorTriple>>(a: &Tensor3, k: usize, f: F) -> sketchlra::Result<FactorTriple> {
    if k == 0 {
        Ok(FactorTriple::zeros(a.dims(), 0))
    } else {
        f()
    }
}

/// Frobenius-norm low-rank approximation. Writes the factors and their squared residual.
///
/// # Safety
/// `t` and `p` are live handles; `out` and `cost_fro2` are writable (`cost_fro2` may be null).
#[no_mangle]
pub unsafe extern "C" fn slra_decompose(
    t: *const SlraTensor,
    p: *const SlraParams,
    mode: SlraMode,
    out: *mut *mut SlraFactors,
    cost_fro2: *mut f64,
) -> SlraStatus {
    guard(|| {
        let a = &deref(t, "tensor")?.inner;
        let params = &deref(p, "params")?.inner;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let f = zero_or(a, params.k, || match mode {
            SlraMode::RankK => fro_rank_k(a, params).map(|f| f.factors),
            SlraMode::Quadratic => bicriteria_quadratic(a, params).map(|f| f.factors),
            SlraMode::Cubic => bicriteria_cubic(a, params).map(|f| f.factors),
        })?;
        if let Some(c) = cost_fro2.as_mut() {
            *c = residual_fro2(a, &f)?;
        }
        put(out, SlraFactors { inner: f }, "out")
    })
}

/// Entrywise ℓ1 bicriteria approximation of target rank `k`.
///
/// # Safety
/// `t` is a live handle; `out` is writable; `cost_l1` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn slra_decompose_l1(
    t: *const SlraTensor,
    k: usize,
    seed: u64,
    out: *mut *mut SlraFactors,
    cost_l1: *mut f64,
) -> SlraStatus {
    guard(|| {
        let a = &deref(t, "tensor")?.inner;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let f = zero_or(a, k, || l1_bicriteria(a, &L1Params::new(k, seed)).map(|f| f.factors))?;
        if let Some(c) = cost_l1.as_mut() {
            *c = residual_l1(a, &f)?;
        }
        put(out, SlraFactors { inner: f }, "out")
    })
}

/// # Safety
/// `f` is a live factors handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_factors_rank(f: *const SlraFactors, out: *mut usize) -> SlraStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(f, "factors")?.inner.rank();
        Ok(())
    })
}

/// Copy factor `which` (0 = U, 1 = V, 2 = W) row-major into `buf`, which
/// must hold `n_which · rank` values.
///
/// # Safety
/// `f` is a live handle; `buf` has room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn slra_factors_copy(f: *const SlraFactors, which: usize, buf: *mut f64, len: usize) -> SlraStatus {
    guard(|| {
        let f = &deref(f, "factors")?.inner;
        let m: &Mat = match which {
            0 => &f.u,
            1 => &f.v,
            2 => &f.w,
            _ => return Err(Error::Index(format!("factor index {which} not in 0..3")).into()),
        };
        if len != m.len() {
            return Err(Error::Shape(format!("buffer holds {len} values, factor has {}", m.len())).into());
        }
        if m.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Squared Frobenius residual of `f` against `t`.
///
/// # Safety
/// `t`, `f` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_residual_fro2(t: *const SlraTensor, f: *const SlraFactors, out: *mut f64) -> SlraStatus {
    guard(|| {
        let v = residual_fro2(&deref(t, "tensor")?.inner, &deref(f, "factors")?.inner)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}

/// # Safety
/// `f` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slra_factors_free(f: *mut SlraFactors) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// New stream over an `n1 × n2 × n3` tensor. Uses trial 0 of `p`'s seed.
///
/// # Safety
/// `dims` points to three values; `p` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_new(dims: *const usize, p: *const SlraParams, out: *mut *mut SlraStream) -> SlraStatus {
    guard(|| {
        let d = dims_of(dims)?;
        let params = &deref(p, "params")?.inner;
        put(out, SlraStream { inner: StreamState::new(d, params)? }, "out")
    })
}

/// Apply `A[i, j, l] += delta`.
///
/// # Safety
/// `s` is a live stream handle.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_update(s: *mut SlraStream, i: usize, j: usize, l: usize, delta: f64) -> SlraStatus {
    guard(|| {
        deref_mut(s, "stream")?.inner.update(Update::new(i, j, l, delta))?;
        Ok(())
    })
}

/// Apply `n` updates in order; stops at the first invalid one.
///
/// # Safety
/// `s` is a live handle; the four arrays hold `n` values each.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_update_batch(
    s: *mut SlraStream,
    is: *const usize,
    js: *const usize,
    ls: *const usize,
    deltas: *const f64,
    n: usize,
) -> SlraStatus {
    guard(|| {
        let st = &mut deref_mut(s, "stream")?.inner;
        let (i, j, l, d) = (slice(is, n, "is")?, slice(js, n, "js")?, slice(ls, n, "ls")?, slice(deltas, n, "deltas")?);
        st.consume((0..n).map(|x| Update::new(i[x], j[x], l[x], d[x])))?;
        Ok(())
    })
}

/// Words of state held by the stream.
///
/// # Safety
/// `s` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_space_words(s: *const SlraStream, out: *mut usize) -> SlraStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(s, "stream")?.inner.space_words();
        Ok(())
    })
}

/// Solve from the stream sketches: `RankK` runs ALS, `Cubic` the Tucker regression.
///
/// # Safety
/// `s` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_finalize(s: *const SlraStream, mode: SlraMode, out: *mut *mut SlraFactors) -> SlraStatus {
    guard(|| {
        let st = &deref(s, "stream")?.inner;
        let m = match mode {
            SlraMode::RankK => FinalizeMode::RankK,
            SlraMode::Cubic => FinalizeMode::Bicriteria,
            SlraMode::Quadratic => {
                return Err(Error::InvalidParam("streams finalize with rank-k or cubic".into()).into());
            }
        };
        put(out, SlraFactors { inner: st.finalize(m)? }, "out")
    })
}

/// # Safety
/// `s` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slra_stream_free(s: *mut SlraStream) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Simulate the distributed protocol over `count` partitions whose sum is
/// the input. Writes the collected factors and the total words sent.
///
/// # Safety
/// `parts` holds `count` live tensor handles; `p` is live; `out` and `words` are writable.
#[no_mangle]
pub unsafe extern "C" fn slra_distsim_run(
    parts: *const *const SlraTensor,
    count: usize,
    p: *const SlraParams,
    mode: SlraMode,
    out: *mut *mut SlraFactors,
    words: *mut usize,
) -> SlraStatus {
    guard(|| {
        let handles = slice(parts, count, "parts")?;
        let tensors: Vec<Tensor3> =
            handles.iter().map(|&h| deref(h, "part").map(|t| t.inner.clone())).collect::<Result<_, _>>()?;
        let params = &deref(p, "params")?.inner;
        let m = match mode {
            SlraMode::RankK => FinalizeMode::RankK,
            SlraMode::Cubic => FinalizeMode::Bicriteria,
            SlraMode::Quadratic => {
                return Err(Error::InvalidParam("the protocol solves with rank-k or cubic".into()).into());
            }
        };
        let res = distsim_run(&tensors, &params.clone().with_trials(1), &DistOptions { mode: m, ..Default::default() })?;
        *deref_mut(words, "words")? = res.ledger.total();
        put(out, SlraFactors { inner: res.factors.expect("shares are collected") }, "out")
    })
}
