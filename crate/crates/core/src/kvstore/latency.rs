//! Latency injection and request tracing.
//!
//! A [`LatencyStore`] delays every request by a sample drawn from a
//! [`LatencyProfile`]. With a real clock it sleeps; with a [`SimClock`] it only
//! accounts the delay on the calling thread, which [`measure`] picks up. This
//! lets long multi-interval experiments run in milliseconds.
//!
//! Delays are sampled independently per request.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution as _, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Direction, KvError, KvRecord, KvStore, OpKind};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("reading {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("invalid profile: {0}")]
    Invalid(String),
}

/// One delay distribution, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Delay {
    Constant {
        ms: f64,
    },
    Uniform {
        min_ms: f64,
        max_ms: f64,
    },
    Lognormal {
        median_ms: f64,
        sigma: f64,
    },
    /// Samples drawn uniformly from a list, either inline or read from a file
    /// with one value per line.
    Empirical {
        #[serde(default)]
        file: Option<String>,
        #[serde(default)]
        samples: Vec<f64>,
    },
}

impl Default for Delay {
    fn default() -> Self {
        Delay::Constant { ms: 0.0 }
    }
}

impl Delay {
    fn sample(&self, rng: &mut StdRng) -> f64 {
        let v = match self {
            Delay::Constant { ms } => *ms,
            Delay::Uniform { min_ms, max_ms } => rng.random_range(*min_ms..=*max_ms),
            Delay::Lognormal { median_ms, sigma } => LogNormal::new(median_ms.ln(), *sigma)
                .map(|d| d.sample(rng))
                .unwrap_or(*median_ms),
            Delay::Empirical { samples, .. } => {
                if samples.is_empty() {
                    0.0
                } else {
                    samples[rng.random_range(0..samples.len())]
                }
            }
        };
        v.max(0.0)
    }

    /// Mean of the distribution, where it has a closed form.
    pub fn mean(&self) -> f64 {
        match self {
            Delay::Constant { ms } => *ms,
            Delay::Uniform { min_ms, max_ms } => (min_ms + max_ms) / 2.0,
            Delay::Lognormal { median_ms, sigma } => median_ms * (sigma * sigma / 2.0).exp(),
            Delay::Empirical { samples, .. } => {
                samples.iter().sum::<f64>() / samples.len().max(1) as f64
            }
        }
    }

    fn validate(&self) -> Result<(), ProfileError> {
        let ok = match self {
            Delay::Constant { ms } => *ms >= 0.0,
            Delay::Uniform { min_ms, max_ms } => *min_ms >= 0.0 && max_ms >= min_ms,
            Delay::Lognormal { median_ms, sigma } => *median_ms > 0.0 && *sigma >= 0.0,
            Delay::Empirical { samples, .. } => samples.iter().all(|s| *s >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(ProfileError::Invalid(format!(
                "negative or inverted delay parameters in {self:?}"
            )))
        }
    }
}

/// A delay distribution plus a per-record surcharge for range results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelaySpec {
    #[serde(flatten)]
    pub delay: Delay,
    #[serde(default)]
    pub per_record_ms: f64,
}

/// A time window during which every delay is multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_min: f64,
    pub end_min: f64,
    pub scale: f64,
}

/// Per-operation delay distributions, optionally varying over time.
///
/// TOML form:
///
/// ```toml
/// seed = 7
/// [default]
/// kind = "lognormal"
/// median_ms = 5.0
/// sigma = 0.25
/// [op.range]
/// kind = "constant"
/// ms = 5.0
/// per_record_ms = 0.01
/// [[window]]
/// start_min = 30
/// end_min = 40
/// scale = 3.0
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub default: DelaySpec,
    #[serde(default)]
    pub op: BTreeMap<String, DelaySpec>,
    #[serde(default)]
    pub window: Vec<Window>,
}

impl LatencyProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(ms: f64) -> Self {
        LatencyProfile {
            default: DelaySpec {
                delay: Delay::Constant { ms },
                per_record_ms: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn lognormal(median_ms: f64, sigma: f64, seed: u64) -> Self {
        LatencyProfile {
            seed,
            default: DelaySpec {
                delay: Delay::Lognormal { median_ms, sigma },
                per_record_ms: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn with_per_record_ms(mut self, ms: f64) -> Self {
        self.default.per_record_ms = ms;
        for spec in self.op.values_mut() {
            spec.per_record_ms = ms;
        }
        self
    }

    pub fn with_window(mut self, start_min: f64, end_min: f64, scale: f64) -> Self {
        self.window.push(Window {
            start_min,
            end_min,
            scale,
        });
        self
    }

    pub fn with_op(mut self, op: OpKind, spec: DelaySpec) -> Self {
        self.op.insert(op.as_str().to_string(), spec);
        self
    }

    /// Parses the TOML form. Relative empirical file paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ProfileError> {
        let mut profile: LatencyProfile = toml::from_str(text)?;
        for spec in std::iter::once(&mut profile.default).chain(profile.op.values_mut()) {
            if let Delay::Empirical {
                file: Some(file),
                samples,
            } = &mut spec.delay
            {
                let path = match base_dir {
                    Some(dir) => dir.join(&*file),
                    None => std::path::PathBuf::from(&*file),
                };
                let body = std::fs::read_to_string(&path).map_err(|source| ProfileError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
                    samples.push(line.parse().map_err(|_| {
                        ProfileError::Invalid(format!("bad sample {line:?} in {}", path.display()))
                    })?);
                }
            }
        }
        for key in profile.op.keys() {
            if OpKind::parse(key).is_none() {
                return Err(ProfileError::Invalid(format!(
                    "unknown operation kind {key:?}"
                )));
            }
        }
        for spec in std::iter::once(&profile.default).chain(profile.op.values()) {
            spec.delay.validate()?;
            if spec.per_record_ms < 0.0 {
                return Err(ProfileError::Invalid("per_record_ms must be >= 0".into()));
            }
        }
        if profile
            .window
            .iter()
            .any(|w| w.scale < 0.0 || w.end_min < w.start_min)
        {
            return Err(ProfileError::Invalid(
                "windows need end >= start and scale >= 0".into(),
            ));
        }
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, path.parent())
    }

    pub fn spec(&self, op: OpKind) -> &DelaySpec {
        self.op.get(op.as_str()).unwrap_or(&self.default)
    }

    /// Product of the scales of every window containing `now_ms`.
    pub fn scale_at(&self, now_ms: f64) -> f64 {
        let minute = now_ms / 60_000.0;
        self.window
            .iter()
            .filter(|w| minute >= w.start_min && minute < w.end_min)
            .map(|w| w.scale)
            .product()
    }

    pub fn sample(&self, op: OpKind, records: usize, now_ms: f64, rng: &mut StdRng) -> f64 {
        let spec = self.spec(op);
        (spec.delay.sample(rng) + spec.per_record_ms * records as f64) * self.scale_at(now_ms)
    }
}

/// A manually advanced clock, in milliseconds.
#[derive(Debug, Default)]
pub struct SimClock {
    micros: AtomicU64,
}

impl SimClock {
    pub fn new() -> Arc<Self> {
        Arc::new(SimClock::default())
    }

    pub fn now_ms(&self) -> f64 {
        self.micros.load(Ordering::SeqCst) as f64 / 1000.0
    }

    pub fn set_ms(&self, ms: f64) {
        self.micros
            .store((ms * 1000.0).round() as u64, Ordering::SeqCst);
    }

    pub fn advance_ms(&self, ms: f64) {
        self.micros
            .fetch_add((ms * 1000.0).round() as u64, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
enum Clock {
    Real(Instant),
    Simulated(Arc<SimClock>),
}

thread_local! {
    static SIMULATED_MS: Cell<f64> = const { Cell::new(0.0) };
    static SIMULATED_SEEN: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` and returns its result with the elapsed latency in milliseconds.
///
/// If a simulated-clock [`LatencyStore`] served requests on this thread during
/// `f`, the simulated delay total is returned instead of wall time.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let saved_ms = SIMULATED_MS.with(|c| c.replace(0.0));
    let saved_seen = SIMULATED_SEEN.with(|c| c.replace(false));
    let start = Instant::now();
    let out = f();
    let wall = start.elapsed().as_secs_f64() * 1000.0;
    let sim = SIMULATED_MS.with(|c| c.get());
    let seen = SIMULATED_SEEN.with(|c| c.get());
    SIMULATED_MS.with(|c| c.set(saved_ms + sim));
    SIMULATED_SEEN.with(|c| c.set(saved_seen || seen));
    (out, if seen { sim } else { wall })
}

/// Removes and returns the simulated delay accumulated on this thread, if
/// any simulated request ran on it.
pub fn take_simulated() -> Option<f64> {
    let seen = SIMULATED_SEEN.with(|c| c.replace(false));
    let ms = SIMULATED_MS.with(|c| c.replace(0.0));
    seen.then_some(ms)
}

/// Charges `ms` of simulated delay to this thread.
pub fn charge_simulated(ms: f64) {
    SIMULATED_MS.with(|c| c.set(c.get() + ms));
    SIMULATED_SEEN.with(|c| c.set(true));
}

/// Operation-count parameter of a trace row: a plain count for scans and
/// store requests, or `child x per_key` for joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alpha {
    pub count: u64,
    pub per_key: Option<u64>,
}

impl Alpha {
    pub fn scan(count: u64) -> Self {
        Alpha {
            count,
            per_key: None,
        }
    }

    pub fn join(child: u64, per_key: u64) -> Self {
        Alpha {
            count: child,
            per_key: Some(per_key),
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.per_key {
            None => write!(f, "{}", self.count),
            Some(j) => write!(f, "{}x{}", self.count, j),
        }
    }
}

impl FromStr for Alpha {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad alpha {s:?}");
        match s.split_once('x') {
            None => Ok(Alpha::scan(s.trim().parse().map_err(|_| bad())?)),
            Some((c, j)) => Ok(Alpha::join(
                c.trim().parse().map_err(|_| bad())?,
                j.trim().parse().map_err(|_| bad())?,
            )),
        }
    }
}

/// One latency observation: `timestamp_ms,op_kind,alpha,beta_bytes,latency_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub timestamp_ms: f64,
    pub op_kind: String,
    pub alpha: Alpha,
    pub beta_bytes: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace row {row}: {message}")]
    Row { row: usize, message: String },
}

pub const TRACE_HEADER: [&str; 5] = [
    "timestamp_ms",
    "op_kind",
    "alpha",
    "beta_bytes",
    "latency_ms",
];

pub fn write_trace_csv<W: io::Write>(out: W, rows: &[TraceRow]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:.3}", r.timestamp_ms),
            r.op_kind.clone(),
            r.alpha.to_string(),
            r.beta_bytes.to_string(),
            format!("{:.3}", r.latency_ms),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv<R: io::Read>(input: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let err = |message: String| TraceError::Row {
            row: i + 1,
            message,
        };
        if rec.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |j: usize| {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| err(format!("{}: {e}", TRACE_HEADER[j])))
        };
        rows.push(TraceRow {
            timestamp_ms: num(0)?,
            op_kind: rec[1].trim().to_string(),
            alpha: rec[2].parse().map_err(err)?,
            beta_bytes: rec[3]
                .trim()
                .parse()
                .map_err(|e| err(format!("beta_bytes: {e}")))?,
            latency_ms: num(4)?,
        });
    }
    Ok(rows)
}

/// Store decorator injecting per-request latency and recording a trace.
pub struct LatencyStore<S> {
    inner: S,
    profile: LatencyProfile,
    clock: Clock,
    rng: Mutex<StdRng>,
    trace: Option<Mutex<Vec<TraceRow>>>,
}

impl<S: KvStore> LatencyStore<S> {
    /// Real-time decorator: requests sleep for their sampled delay.
    pub fn new(inner: S, profile: LatencyProfile) -> Self {
        let rng = Mutex::new(StdRng::seed_from_u64(profile.seed));
        LatencyStore {
            inner,
            profile,
            clock: Clock::Real(Instant::now()),
            rng,
            trace: Some(Mutex::default()),
        }
    }

    /// Simulated-time decorator: delays are accounted, never slept.
    pub fn simulated(inner: S, profile: LatencyProfile, clock: Arc<SimClock>) -> Self {
        let rng = Mutex::new(StdRng::seed_from_u64(profile.seed));
        LatencyStore {
            inner,
            profile,
            clock: Clock::Simulated(clock),
            rng,
            trace: Some(Mutex::default()),
        }
    }

    pub fn without_trace(mut self) -> Self {
        self.trace = None;
        self
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    pub fn take_trace(&self) -> Vec<TraceRow> {
        self.trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.lock().unwrap()))
            .unwrap_or_default()
    }

    fn now_ms(&self) -> f64 {
        match &self.clock {
            Clock::Real(start) => start.elapsed().as_secs_f64() * 1000.0,
            Clock::Simulated(c) => c.now_ms(),
        }
    }

    fn delay(&self, op: OpKind, records: usize, beta: u64) {
        let now = self.now_ms();
        let ms = {
            let mut rng = self.rng.lock().unwrap();
            self.profile.sample(op, records, now, &mut rng)
        };
        match &self.clock {
            Clock::Real(_) => {
                if ms > 0.0 {
                    std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
                }
            }
            Clock::Simulated(_) => {
                SIMULATED_MS.with(|c| c.set(c.get() + ms));
                SIMULATED_SEEN.with(|c| c.set(true));
            }
        }
        if let Some(trace) = &self.trace {
            trace.lock().unwrap().push(TraceRow {
                timestamp_ms: now,
                op_kind: op.as_str().to_string(),
                alpha: Alpha::scan(records as u64),
                beta_bytes: beta,
                latency_ms: ms,
            });
        }
    }
}

impl<S: KvStore> KvStore for LatencyStore<S> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError> {
        let r = self.inner.get(key)?;
        let n = usize::from(r.is_some());
        self.delay(OpKind::Get, n, r.as_ref().map_or(0, |v| v.len() as u64));
        Ok(r)
    }
    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError> {
        self.inner.put(key, value)?;
        self.delay(OpKind::Put, 1, value.len() as u64);
        Ok(())
    }
    fn delete(&self, key: &[u8]) -> Result<(), KvError> {
        self.inner.delete(key)?;
        self.delay(OpKind::Delete, 0, 0);
        Ok(())
    }
    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError> {
        let r = self.inner.get_range(start, end, limit, direction)?;
        let beta = r
            .iter()
            .map(|rec| rec.value.len() as u64)
            .max()
            .unwrap_or(0);
        self.delay(OpKind::Range, r.len(), beta);
        Ok(r)
    }
    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError> {
        let r = self.inner.count_range(start, end)?;
        self.delay(OpKind::Count, 0, 0);
        Ok(r)
    }
    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError> {
        let r = self.inner.test_and_set(key, expected, new)?;
        self.delay(OpKind::TestAndSet, 1, new.len() as u64);
        Ok(r)
    }
}
