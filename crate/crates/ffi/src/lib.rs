//! C ABI for static counting, checkpoints, dense forward passes and the
//! delta inference engine.
//!
//! Every fallible function returns a status code (`DDQN_OK` on success).
//! On failure a message is available from [`ddqn_last_error`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use deltadqn::checkpoint::Checkpoint;
use deltadqn::delta::{DeltaNetwork, OpCounter, Thresholds};
use deltadqn::network::{build_reference_dqn, forward, static_network_multiplications, NetworkSpec, WeightSet};
use deltadqn::pruning::schedule_fraction;
use deltadqn::tensor::Tensor;
use deltadqn::Error;

pub const DDQN_OK: i32 = 0;
pub const DDQN_ERR_NULL_POINTER: i32 = 1;
pub const DDQN_ERR_INVALID_ARGUMENT: i32 = 2;
pub const DDQN_ERR_SHAPE: i32 = 3;
pub const DDQN_ERR_IO: i32 = 4;
pub const DDQN_ERR_CHECKPOINT: i32 = 5;
pub const DDQN_ERR_BUFFER_TOO_SMALL: i32 = 6;
pub const DDQN_ERR_PANIC: i32 = 7;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(code: i32, msg: impl Into<String>) -> i32 {
    set_error(msg);
    code
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::ShapeMismatch { .. } => DDQN_ERR_SHAPE,
        Error::Io(_) => DDQN_ERR_IO,
        Error::Checkpoint(_) => DDQN_ERR_CHECKPOINT,
        _ => DDQN_ERR_INVALID_ARGUMENT,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DDQN_OK,
        Ok(Err(code)) => code,
        Err(_) => fail(DDQN_ERR_PANIC, "internal panic"),
    }
}

fn check<T>(r: deltadqn::Result<T>) -> Result<T, i32> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), i32> {
    if p.is_null() {
        Err(fail(DDQN_ERR_NULL_POINTER, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// A network description together with its weights.
pub struct DdqnNetwork {
    spec: NetworkSpec,
    weights: WeightSet,
}

/// Event-driven inference state for one input stream.
pub struct DdqnDeltaEngine {
    net: DeltaNetwork,
    counter: OpCounter,
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ddqn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Cumulative pruned fraction after `iteration` rounds at `rate`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn ddqn_schedule_fraction(rate: f64, iteration: u32, out: *mut f64) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(fail(DDQN_ERR_INVALID_ARGUMENT, format!("rate {rate} outside [0, 1]")));
        }
        *out = schedule_fraction(rate, iteration);
        Ok(())
    })
}

/// Builds the reference 84x84x4 DQN with seeded uniform initial weights.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_reference(n_output: usize, seed: u64, out: *mut *mut DdqnNetwork) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        let spec = check(build_reference_dqn(n_output))?;
        let weights = WeightSet::init_uniform(&spec, seed);
        *out = Box::into_raw(Box::new(DdqnNetwork { spec, weights }));
        Ok(())
    })
}

/// Loads a checkpoint file. Pruned weights are already zero in it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_load(path: *const c_char, out: *mut *mut DdqnNetwork) -> i32 {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(DDQN_ERR_INVALID_ARGUMENT, "path is not UTF-8"))?;
        let ckpt = check(Checkpoint::load(path))?;
        *out = Box::into_raw(Box::new(DdqnNetwork {
            spec: ckpt.spec,
            weights: ckpt.weights,
        }));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_free(net: *mut DdqnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of input values, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_input_len(net: *const DdqnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.spec.input_len())
}

/// Number of outputs, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_output_len(net: *const DdqnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.spec.n_output())
}

/// Unoptimised multiplication counts. Writes one entry per report row
/// (weighted layers plus a zero flatten row) into `rows` and the row count
/// into `n_rows`. With `rows` null only the counts are returned.
///
/// # Safety
/// `net` must be a live handle; `rows` must hold `capacity` values if
/// non-null; `n_rows` and `total` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_static_count(
    net: *const DdqnNetwork,
    rows: *mut u64,
    capacity: usize,
    n_rows: *mut usize,
    total: *mut u64,
) -> i32 {
    guard(|| {
        non_null(net, "net")?;
        let report = static_network_multiplications(&(*net).spec);
        if !n_rows.is_null() {
            *n_rows = report.rows.len();
        }
        if !total.is_null() {
            *total = report.total_multiplications;
        }
        if !rows.is_null() {
            if capacity < report.rows.len() {
                return Err(fail(
                    DDQN_ERR_BUFFER_TOO_SMALL,
                    format!("{} rows do not fit in {capacity}", report.rows.len()),
                ));
            }
            let dst = std::slice::from_raw_parts_mut(rows, report.rows.len());
            for (d, r) in dst.iter_mut().zip(&report.rows) {
                *d = r.multiplications;
            }
        }
        Ok(())
    })
}

unsafe fn io_slices<'a>(
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
    spec: &NetworkSpec,
) -> Result<(&'a [f64], &'a mut [f64]), i32> {
    non_null(input, "input")?;
    non_null(output, "output")?;
    if input_len != spec.input_len() {
        return Err(fail(
            DDQN_ERR_SHAPE,
            format!("input has {input_len} values, expected {}", spec.input_len()),
        ));
    }
    if output_len < spec.n_output() {
        return Err(fail(
            DDQN_ERR_BUFFER_TOO_SMALL,
            format!("output holds {output_len} values, need {}", spec.n_output()),
        ));
    }
    Ok((
        std::slice::from_raw_parts(input, input_len),
        std::slice::from_raw_parts_mut(output, output_len),
    ))
}

/// Dense forward pass.
///
/// # Safety
/// `net` must be a live handle, `input` must hold `input_len` values and
/// `output` `output_len` values.
#[no_mangle]
pub unsafe extern "C" fn ddqn_network_forward(
    net: *const DdqnNetwork,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> i32 {
    guard(|| {
        non_null(net, "net")?;
        let net = &*net;
        let (x, y) = io_slices(input, input_len, output, output_len, &net.spec)?;
        let x = check(Tensor::from_vec(x.to_vec()))?;
        let q = check(forward(&net.spec, &net.weights, &x))?;
        y[..q.len()].copy_from_slice(q.data());
        Ok(())
    })
}

/// Creates a delta engine with one threshold for the input and every layer.
///
/// # Safety
/// `net` must be a live handle and `out` a valid handle slot. The engine
/// copies what it needs, so `net` may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_new(
    net: *const DdqnNetwork,
    threshold: f64,
    out: *mut *mut DdqnDeltaEngine,
) -> i32 {
    guard(|| {
        non_null(net, "net")?;
        non_null(out, "out")?;
        let net = &*net;
        let t = Thresholds::uniform(threshold, net.spec.num_layers());
        let engine = check(DeltaNetwork::new(net.spec.clone(), net.weights.clone(), t))?;
        let counter = engine.new_counter();
        *out = Box::into_raw(Box::new(DdqnDeltaEngine { net: engine, counter }));
        Ok(())
    })
}

/// Feeds one frame and writes the transmitted output values.
///
/// # Safety
/// As for [`ddqn_network_forward`], with a live engine handle.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_step(
    engine: *mut DdqnDeltaEngine,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> i32 {
    guard(|| {
        non_null(engine, "engine")?;
        let engine = &mut *engine;
        let (x, y) = io_slices(input, input_len, output, output_len, engine.net.spec())?;
        let x = check(Tensor::from_vec(x.to_vec()))?;
        let q = check(engine.net.step(&x, &mut engine.counter))?;
        y[..q.len()].copy_from_slice(q.data());
        Ok(())
    })
}

/// Returns the engine to its initial state and clears its counters.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_reset(engine: *mut DdqnDeltaEngine) -> i32 {
    guard(|| {
        non_null(engine, "engine")?;
        let engine = &mut *engine;
        engine.net.reset();
        engine.counter = engine.net.new_counter();
        Ok(())
    })
}

/// Timesteps processed and significant multiplications so far.
///
/// # Safety
/// `engine` must be a live handle; the out pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_counters(
    engine: *const DdqnDeltaEngine,
    timesteps: *mut u64,
    multiplications: *mut u64,
) -> i32 {
    guard(|| {
        non_null(engine, "engine")?;
        let c = &(*engine).counter;
        if !timesteps.is_null() {
            *timesteps = c.timesteps;
        }
        if !multiplications.is_null() {
            *multiplications = c.total_multiplications();
        }
        Ok(())
    })
}

/// Significant multiplications per weighted layer.
///
/// # Safety
/// `engine` must be a live handle, `out` must hold `capacity` values and
/// `n_layers` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_layer_multiplications(
    engine: *const DdqnDeltaEngine,
    out: *mut u64,
    capacity: usize,
    n_layers: *mut usize,
) -> i32 {
    guard(|| {
        non_null(engine, "engine")?;
        let layers = &(*engine).counter.layers;
        if !n_layers.is_null() {
            *n_layers = layers.len();
        }
        non_null(out, "out")?;
        if capacity < layers.len() {
            return Err(fail(
                DDQN_ERR_BUFFER_TOO_SMALL,
                format!("{} layers do not fit in {capacity}", layers.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, layers.len());
        for (d, l) in dst.iter_mut().zip(layers) {
            *d = l.significant_multiplications;
        }
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddqn_delta_free(engine: *mut DdqnDeltaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}
