//! C ABI over `qtrain`.
//!
//! Every fallible call returns a [`QtStatus`]. On failure the message is
//! available from [`qt_last_error`] on the same thread until the next
//! failing call. Handles are opaque and must be released with their `_free`
//! function. Panics are caught at the boundary and reported as
//! `QT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qtrain::data::{great_circle, GeoPoint};
use qtrain::lora::plan_lora;
use qtrain::mapping::MappingModel;
use qtrain::paramgen::{backprop_pass, generate_pass, plan_chunks, ChunkPlan, Generation};
use qtrain::quantum_sim::{circuit_probabilities, CircuitSpec, GradMethod};
use qtrain::train::{train, DataSource, TrainConfig};
use qtrain::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QtStatus {
    Ok = 0,
    InvalidArgument = 1,
    ShapeMismatch = 2,
    TooManyQubits = 3,
    NonFiniteLoss = 4,
    Parse = 5,
    Config = 6,
    Io = 7,
    Json = 8,
    NullPointer = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QtChunkPlan {
    pub m: usize,
    pub chunk_size: usize,
    pub num_chunks: usize,
    pub num_qubits: usize,
    pub tail_len: usize,
}

impl From<ChunkPlan> for QtChunkPlan {
    fn from(p: ChunkPlan) -> Self {
        Self {
            m: p.m,
            chunk_size: p.chunk_size,
            num_chunks: p.num_chunks,
            num_qubits: p.num_qubits,
            tail_len: p.tail_len,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QtGeneratorSizes {
    pub plan: QtChunkPlan,
    pub circuit_params: usize,
    pub mapping_params: usize,
}

/// Circuit + mapping model generating `m` parameters.
pub struct QtGenerator {
    circuit: CircuitSpec,
    mapping: MappingModel,
    plan: ChunkPlan,
    last: Option<Generation>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QtStatus {
    match e {
        Error::InvalidArgument(_) => QtStatus::InvalidArgument,
        Error::ShapeMismatch { .. } => QtStatus::ShapeMismatch,
        Error::TooManyQubits(_) => QtStatus::TooManyQubits,
        Error::NonFiniteLoss { .. } => QtStatus::NonFiniteLoss,
        Error::Parse { .. } => QtStatus::Parse,
        Error::Config(_) => QtStatus::Config,
        Error::Io { .. } => QtStatus::Io,
        Error::Json(_) => QtStatus::Json,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Length(&'static str, usize, usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QtStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            QtStatus::NullPointer
        }
        Ok(Err(Fail::Length(what, expected, got))) => {
            set_error(format!("shape mismatch: {what}: expected {expected}, got {got}"));
            QtStatus::ShapeMismatch
        }
        Err(_) => {
            set_error("panic inside qtrain".into());
            QtStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Fail::Length(what, expected, got))
    }
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn qt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_plan_chunks(m: usize, chunk_size: usize, out: *mut QtChunkPlan) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = plan_chunks(m, chunk_size)?.into();
        Ok(())
    })
}

/// Plan for generating the `r * (d + k)` factors of a `d x k` LoRA update.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_plan_lora(
    d: usize,
    k: usize,
    r: usize,
    chunk_size: usize,
    out: *mut QtChunkPlan,
) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = plan_lora(d, k, r, chunk_size)?.into();
        Ok(())
    })
}

/// Great-circle distance in km between two (lat, lon) points in degrees.
#[no_mangle]
pub extern "C" fn qt_great_circle(lat1: f64, lon1: f64, lat2: f64, lon2: f64, radius_km: f64) -> f64 {
    great_circle(GeoPoint::new(lat1, lon1), GeoPoint::new(lat2, lon2), radius_km)
}

/// Measurement probabilities of the layered RY/CNOT circuit. `theta` is
/// `layers x qubits` row-major; `out` must hold `2^qubits` values.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn qt_circuit_probabilities(
    num_qubits: usize,
    num_layers: usize,
    theta: *const f64,
    theta_len: usize,
    out: *mut f64,
    out_len: usize,
) -> QtStatus {
    guard(|| {
        let theta = slice_in(theta, theta_len, "theta")?;
        let spec = CircuitSpec::new(num_qubits, num_layers, theta.to_vec())?;
        let out = slice_out(out, out_len, "out")?;
        check("probability buffer", spec.dim(), out.len())?;
        out.copy_from_slice(circuit_probabilities(&spec).as_slice());
        Ok(())
    })
}

/// New generator for `m` parameters with random angles and mapping weights.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_new(
    m: usize,
    chunk_size: usize,
    num_layers: usize,
    seed: u64,
    out: *mut *mut QtGenerator,
) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let plan = plan_chunks(m, chunk_size)?;
        let n = plan.num_qubits;
        // deterministic angle spread so the handle does not need an RNG crate
        let theta = (0..n * num_layers)
            .map(|i| (seed.wrapping_add(i as u64) as f64 * 0.618_033_988_749_895).fract() * std::f64::consts::TAU)
            .collect();
        let circuit = CircuitSpec::new(n, num_layers, theta)?;
        let mapping = MappingModel::new(n, chunk_size, &qtrain::mapping::DEFAULT_HIDDEN, seed)?;
        *out = Box::into_raw(Box::new(QtGenerator {
            circuit,
            mapping,
            plan,
            last: None,
        }));
        Ok(())
    })
}

/// # Safety
/// `gen` must come from [`qt_generator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_free(gen: *mut QtGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

unsafe fn handle<'a>(gen: *mut QtGenerator) -> Result<&'a mut QtGenerator, Fail> {
    gen.as_mut().ok_or(Fail::Null("generator"))
}

/// # Safety
/// `gen` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_sizes(gen: *mut QtGenerator, out: *mut QtGeneratorSizes) -> QtStatus {
    guard(|| {
        let g = handle(gen)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = QtGeneratorSizes {
            plan: g.plan.into(),
            circuit_params: g.circuit.num_params(),
            mapping_params: g.mapping.num_params(),
        };
        Ok(())
    })
}

/// Copy the circuit angles into `out` (length = circuit parameter count).
///
/// # Safety
/// `gen` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_get_theta(gen: *mut QtGenerator, out: *mut f64, len: usize) -> QtStatus {
    guard(|| {
        let g = handle(gen)?;
        let out = slice_out(out, len, "out")?;
        check("theta buffer", g.circuit.num_params(), out.len())?;
        out.copy_from_slice(g.circuit.params());
        Ok(())
    })
}

/// # Safety
/// `gen` must be a live handle; `theta` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_set_theta(gen: *mut QtGenerator, theta: *const f64, len: usize) -> QtStatus {
    guard(|| {
        let g = handle(gen)?;
        let theta = slice_in(theta, len, "theta")?;
        g.circuit.set_params(theta)?;
        g.last = None;
        Ok(())
    })
}

/// Generate the `m` target parameters into `out`.
///
/// # Safety
/// `gen` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_generate(gen: *mut QtGenerator, out: *mut f64, len: usize) -> QtStatus {
    guard(|| {
        let g = handle(gen)?;
        let out = slice_out(out, len, "out")?;
        check("parameter buffer", g.plan.m, out.len())?;
        let pass = generate_pass(&g.circuit, &g.mapping, &g.plan)?;
        out.copy_from_slice(pass.params.as_slice());
        g.last = Some(pass);
        Ok(())
    })
}

/// Pull `dL/da` back to the circuit angles and mapping weights.
/// `method` is 0 for the exact adjoint, 1 for parameter shift.
///
/// # Safety
/// `gen` must be a live handle; all buffers valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn qt_generator_backprop(
    gen: *mut QtGenerator,
    grad_a: *const f64,
    grad_a_len: usize,
    method: u32,
    grad_theta: *mut f64,
    grad_theta_len: usize,
    grad_b: *mut f64,
    grad_b_len: usize,
) -> QtStatus {
    guard(|| {
        let g = handle(gen)?;
        let method = match method {
            0 => GradMethod::ExactAdjoint,
            1 => GradMethod::ParameterShift,
            other => {
                return Err(Fail::Core(Error::InvalidArgument(format!(
                    "unknown gradient method {other}"
                ))))
            }
        };
        let grad_a = slice_in(grad_a, grad_a_len, "grad_a")?;
        let out_theta = slice_out(grad_theta, grad_theta_len, "grad_theta")?;
        let out_b = slice_out(grad_b, grad_b_len, "grad_b")?;
        check("theta gradient buffer", g.circuit.num_params(), out_theta.len())?;
        check("mapping gradient buffer", g.mapping.num_params(), out_b.len())?;
        if g.last.is_none() {
            g.last = Some(generate_pass(&g.circuit, &g.mapping, &g.plan)?);
        }
        let pass = g.last.as_ref().expect("just set");
        let hg = backprop_pass(&g.circuit, &g.mapping, &g.plan, pass, grad_a, method)?;
        out_theta.copy_from_slice(&hg.grad_theta);
        out_b.copy_from_slice(&hg.grad_b);
        Ok(())
    })
}

/// Train from a JSON config on `data` (CSV path or `synth:SEED:COUNT[:STEPS]`).
/// On success `*report_json` receives the run report; release it with
/// [`qt_string_free`].
///
/// # Safety
/// Strings must be NUL-terminated; `report_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_train_json(
    config_json: *const c_char,
    data: *const c_char,
    report_json: *mut *mut c_char,
) -> QtStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(Fail::Null("report_json"));
        }
        let cfg: TrainConfig = serde_json::from_str(str_in(config_json, "config_json")?)
            .map_err(|e| Error::Config(e.to_string()))?;
        let source: DataSource = str_in(data, "data")?.parse()?;
        let outcome = train(&cfg, &source.load()?)?;
        let text = serde_json::to_string(&outcome.report).map_err(Error::from)?;
        *report_json = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
