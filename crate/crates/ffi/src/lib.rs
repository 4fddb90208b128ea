//! C ABI over the memloop engine.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! and released by the matching `*_free`. Every fallible call returns an
//! [`MlStatus`]; on failure [`ml_last_error`] describes the most recent error
//! on the calling thread. Strings returned through out-parameters are owned
//! by the caller and must be released with [`ml_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use memloop::case_memory::RetrievalMode;
use memloop::geometry;
use memloop::metrics::aggregate_metrics;
use memloop::rng;
use memloop::sim::{ExperimentConfig, Phase, Simulation};
use memloop::skill_memory::SkillStore;
use memloop::{Error, HyperParams};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    InvalidInput = 1,
    Conflict = 2,
    NotFound = 3,
    Numeric = 4,
    DegenerateGeometry = 5,
    NonWatertight = 6,
    Construction = 7,
    InvalidComparison = 8,
    Parse = 9,
    Io = 10,
    NullPointer = 11,
    Panic = 12,
}

impl From<&Error> for MlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => MlStatus::InvalidInput,
            Error::Conflict(_) => MlStatus::Conflict,
            Error::NotFound(_) => MlStatus::NotFound,
            Error::Numeric(_) => MlStatus::Numeric,
            Error::DegenerateGeometry(_) => MlStatus::DegenerateGeometry,
            Error::NonWatertight { .. } => MlStatus::NonWatertight,
            Error::Construction(_) => MlStatus::Construction,
            Error::InvalidComparison(_) => MlStatus::InvalidComparison,
            Error::Parse { .. } | Error::Json(_) => MlStatus::Parse,
            Error::Io { .. } => MlStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlMode {
    Learned = 0,
    Semantic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlPhase {
    Train = 0,
    Eval = 1,
}

/// Aggregate process metrics. `avg_re` is meaningful only when
/// `avg_re_defined` is non-zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MlMetrics {
    pub n_samples: usize,
    pub suc: f64,
    pub pass_at_1: f64,
    pub avg_re: f64,
    pub avg_re_defined: u8,
}

/// Geometry scores. `iou` is meaningful only when `iou_defined` is non-zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MlComparison {
    pub iou: f64,
    pub chamfer: f64,
    pub hausdorff: f64,
    pub iou_defined: u8,
}

/// Opaque simulation handle.
pub struct MlSimulation(Simulation);

/// Opaque skill store handle.
pub struct MlSkillStore(SkillStore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last-error message.
fn guard(f: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MlStatus::Panic
        }
    }
}

fn fail(e: Error) -> (MlStatus, String) {
    (MlStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (MlStatus, String) {
    (MlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MlStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_json<T: Default + for<'de> serde::Deserialize<'de>>(p: *const c_char, what: &str) -> Result<T, (MlStatus, String)> {
    if p.is_null() {
        return Ok(T::default());
    }
    let s = str_arg(p, what)?;
    serde_json::from_str(s).map_err(|e| fail(Error::Json(e)))
}

fn to_c_string(s: String) -> Result<*mut c_char, (MlStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (MlStatus::InvalidInput, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a simulation from an experiment config JSON (null for defaults).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_new(config_json: *const c_char, mode: MlMode, seed: u64, out: *mut *mut MlSimulation) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: ExperimentConfig = opt_json(config_json, "config_json")?;
        let mode = match mode {
            MlMode::Learned => RetrievalMode::Learned,
            MlMode::Semantic => RetrievalMode::Semantic,
        };
        let sim = Simulation::new(config, mode, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(MlSimulation(sim)));
        Ok(())
    })
}

/// Runs `episodes` episodes in the given phase.
///
/// # Safety
/// `sim` must be a live handle from [`ml_sim_new`].
#[no_mangle]
pub unsafe extern "C" fn ml_sim_run(sim: *mut MlSimulation, episodes: usize, phase: MlPhase) -> MlStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let phase = match phase {
            MlPhase::Train => Phase::Train,
            MlPhase::Eval => Phase::Eval,
        };
        sim.0.run(episodes, phase).map_err(fail)?;
        Ok(())
    })
}

/// Number of outcomes recorded so far.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_len(sim: *const MlSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.0.outcomes.len())
}

/// Metrics over the outcomes of one phase.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_metrics(sim: *const MlSimulation, phase: MlPhase, out: *mut MlMetrics) -> MlStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let want = match phase {
            MlPhase::Train => Phase::Train,
            MlPhase::Eval => Phase::Eval,
        };
        let picked: Vec<_> = sim.0.outcomes.iter().filter(|o| o.phase == want).cloned().collect();
        let r = aggregate_metrics(&picked).map_err(fail)?;
        *out = MlMetrics {
            n_samples: r.n_samples,
            suc: r.suc,
            pass_at_1: r.pass_at_1,
            avg_re: r.avg_re.unwrap_or(0.0),
            avg_re_defined: r.avg_re.is_some() as u8,
        };
        Ok(())
    })
}

/// The outcome log as JSONL; free with [`ml_string_free`].
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_outcomes_jsonl(sim: *const MlSimulation, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut text = String::new();
        for o in &sim.0.outcomes {
            text.push_str(&serde_json::to_string(o).map_err(|e| fail(Error::Json(e)))?);
            text.push('\n');
        }
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Writes the outcome log and final stores into `dir`.
///
/// # Safety
/// `sim` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_save(sim: *const MlSimulation, dir: *const c_char) -> MlStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        sim.0.save(dir).map_err(fail)
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_sim_free(sim: *mut MlSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Loads a skill store from JSONL.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_skills_load(path: *const c_char, out: *mut *mut MlSkillStore) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let store = SkillStore::load_jsonl(str_arg(path, "path")?).map_err(fail)?;
        *out = Box::into_raw(Box::new(MlSkillStore(store)));
        Ok(())
    })
}

/// Applies reward `reward` (0 or 1) to each called skill id. Known ids are
/// updated even when some are unknown; the call then returns
/// `NotFound`.
///
/// # Safety
/// `store` must be a live handle; `ids` must point to `n` NUL-terminated
/// strings; `hyper_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn ml_skills_update(
    store: *mut MlSkillStore,
    ids: *const *const c_char,
    n: usize,
    reward: u8,
    hyper_json: *const c_char,
) -> MlStatus {
    guard(|| {
        let store = store.as_mut().ok_or_else(|| null("store"))?;
        if reward > 1 {
            return Err((MlStatus::InvalidInput, format!("reward {reward} is not 0 or 1")));
        }
        if ids.is_null() && n > 0 {
            return Err(null("ids"));
        }
        let hp: HyperParams = opt_json(hyper_json, "hyper_json")?;
        hp.validate().map_err(fail)?;
        let called = (0..n)
            .map(|i| str_arg(*ids.add(i), "id").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        store.0.update_utilities(&called, reward == 1, &hp).into_result().map_err(fail)?;
        Ok(())
    })
}

/// Current utility of one skill.
///
/// # Safety
/// `store` must be a live handle, `id` a NUL-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_skills_utility(store: *const MlSkillStore, id: *const c_char, out: *mut f64) -> MlStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let id = str_arg(id, "id")?;
        let skill = store.0.get(id).ok_or_else(|| fail(Error::NotFound(format!("skill {id:?}"))))?;
        *out = skill.utility;
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ml_skills_save(store: *const MlSkillStore, path: *const c_char) -> MlStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        store.0.save_jsonl(str_arg(path, "path")?).map_err(fail)
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_skills_free(store: *mut MlSkillStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Normalizes both models, samples `points` per mesh surface and scores
/// them.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ml_geo_compare(
    generated: *const c_char,
    reference: *const c_char,
    points: usize,
    resolution: usize,
    seed: u64,
    out: *mut MlComparison,
) -> MlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (g, _) = geometry::load_geometry(str_arg(generated, "generated")?).map_err(fail)?;
        let (r, _) = geometry::load_geometry(str_arg(reference, "reference")?).map_err(fail)?;
        let c = geometry::compare(&g, &r, points, resolution, &mut rng::stream(seed, rng::ENVIRONMENT)).map_err(fail)?;
        *out = MlComparison {
            iou: c.iou.unwrap_or(0.0),
            chamfer: c.chamfer,
            hausdorff: c.hausdorff,
            iou_defined: c.iou.is_some() as u8,
        };
        Ok(())
    })
}
