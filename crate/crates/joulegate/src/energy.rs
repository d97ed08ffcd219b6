//! Energy and carbon model, per-query cost records, and the append-only
//! ledger they aggregate into.
//!
//! The model is a linear token-time estimate: a query's energy is the
//! hardware's average power draw, times the token count over throughput,
//! times the datacenter PUE overhead. Carbon derives from energy via the
//! grid intensity of the profile that served the query. Joules are the
//! canonical unit; watt-hours and grams are derived.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JOULES_PER_KWH: f64 = 3.6e6;
const JOULES_PER_WH: f64 = 3600.0;

/// Physical constants of one serving path's hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Free-text identifier, e.g. "green-2b", "deep-8b".
    pub label: String,
    /// Datacenter power-usage-effectiveness overhead, >= 1.
    pub pue: f64,
    /// Average power draw under load, watts.
    pub avg_power_watts: f64,
    /// Sustained inference speed, tokens per second.
    pub throughput_tokens_per_sec: f64,
    /// Local grid carbon intensity, gCO2e per kWh.
    pub grid_intensity_g_per_kwh: f64,
}

impl HardwareProfile {
    pub fn new(
        label: impl Into<String>,
        pue: f64,
        avg_power_watts: f64,
        throughput_tokens_per_sec: f64,
        grid_intensity_g_per_kwh: f64,
    ) -> Self {
        Self {
            label: label.into(),
            pue,
            avg_power_watts,
            throughput_tokens_per_sec,
            grid_intensity_g_per_kwh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // NaN fails every comparison below, so it is rejected everywhere
        if self.pue.is_nan() || self.pue < 1.0 {
            return Err(Error::Config(format!(
                "profile `{}`: pue must be >= 1.0, got {}",
                self.label, self.pue
            )));
        }
        if self.avg_power_watts.is_nan() || self.avg_power_watts <= 0.0 {
            return Err(Error::Config(format!(
                "profile `{}`: avg_power_watts must be > 0, got {}",
                self.label, self.avg_power_watts
            )));
        }
        if self.throughput_tokens_per_sec.is_nan() || self.throughput_tokens_per_sec <= 0.0 {
            return Err(Error::Config(format!(
                "profile `{}`: throughput_tokens_per_sec must be > 0, got {}",
                self.label, self.throughput_tokens_per_sec
            )));
        }
        if self.grid_intensity_g_per_kwh.is_nan() || self.grid_intensity_g_per_kwh < 0.0 {
            return Err(Error::Config(format!(
                "profile `{}`: grid_intensity_g_per_kwh must be >= 0, got {}",
                self.label, self.grid_intensity_g_per_kwh
            )));
        }
        Ok(())
    }
}

/// Prompt and generated token counts for one model call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStats {
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
}

impl TokenStats {
    pub fn new(prompt_tokens: u64, generated_tokens: u64) -> Self {
        Self { prompt_tokens, generated_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.generated_tokens
    }
}

impl std::ops::Add for TokenStats {
    type Output = TokenStats;
    fn add(self, rhs: TokenStats) -> TokenStats {
        TokenStats {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            generated_tokens: self.generated_tokens + rhs.generated_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenStats {
    fn add_assign(&mut self, rhs: TokenStats) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.generated_tokens += rhs.generated_tokens;
    }
}

/// Energy cost of a call or an aggregate of calls. Joules are canonical;
/// watt-hours are always joules / 3600; grams track the grid intensity of
/// whichever profile produced each contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub joules: f64,
    pub watt_hours: f64,
    pub grams_co2e: f64,
}

impl EnergyEstimate {
    pub const ZERO: EnergyEstimate = EnergyEstimate { joules: 0.0, watt_hours: 0.0, grams_co2e: 0.0 };

    /// Builds an estimate from joules under a given grid intensity.
    pub fn from_joules(joules: f64, grid_intensity_g_per_kwh: f64) -> Self {
        Self {
            joules,
            watt_hours: joules / JOULES_PER_WH,
            grams_co2e: joules / JOULES_PER_KWH * grid_intensity_g_per_kwh,
        }
    }
}

impl std::ops::Add for EnergyEstimate {
    type Output = EnergyEstimate;
    fn add(self, rhs: EnergyEstimate) -> EnergyEstimate {
        EnergyEstimate {
            joules: self.joules + rhs.joules,
            watt_hours: self.watt_hours + rhs.watt_hours,
            grams_co2e: self.grams_co2e + rhs.grams_co2e,
        }
    }
}

impl std::ops::AddAssign for EnergyEstimate {
    fn add_assign(&mut self, rhs: EnergyEstimate) {
        self.joules += rhs.joules;
        self.watt_hours += rhs.watt_hours;
        self.grams_co2e += rhs.grams_co2e;
    }
}

/// Estimates the energy and carbon cost of one call from its token counts
/// and the hardware profile that served it.
pub fn estimate_query_energy(stats: TokenStats, profile: &HardwareProfile) -> Result<EnergyEstimate> {
    profile.validate()?;
    let seconds = stats.total() as f64 / profile.throughput_tokens_per_sec;
    let joules = profile.pue * profile.avg_power_watts * seconds;
    Ok(EnergyEstimate::from_joules(joules, profile.grid_intensity_g_per_kwh))
}

/// Percentage saved relative to a baseline cost; negative when `actual`
/// exceeds the baseline.
pub fn energy_saving(baseline_joules: f64, actual_joules: f64) -> Result<f64> {
    if baseline_joules.is_nan() || baseline_joules <= 0.0 {
        return Err(Error::Domain(format!(
            "energy_saving baseline must be > 0, got {baseline_joules}"
        )));
    }
    Ok(100.0 * (baseline_joules - actual_joules) / baseline_joules)
}

/// Which serving path a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Green,
    Deep,
    RouterOverhead,
}

impl PathKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathKind::Green => "green",
            PathKind::Deep => "deep",
            PathKind::RouterOverhead => "router_overhead",
        }
    }

    pub fn parse(s: &str) -> Option<PathKind> {
        match s {
            "green" => Some(PathKind::Green),
            "deep" => Some(PathKind::Deep),
            "router_overhead" => Some(PathKind::RouterOverhead),
            _ => None,
        }
    }
}

/// Which pipeline stage incurred the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Retrieval,
    Generation,
    Verification,
    Routing,
}

impl Component {
    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Retrieval => "retrieval",
            Component::Generation => "generation",
            Component::Verification => "verification",
            Component::Routing => "routing",
        }
    }
}

/// One metered cost: a single (query, path, component) contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub query_id: String,
    pub path: PathKind,
    pub component: Component,
    pub token_stats: TokenStats,
    pub estimate: EnergyEstimate,
    pub timestamp: DateTime<Utc>,
}

impl EnergyRecord {
    /// Meters a call: estimates energy under `profile` and stamps now.
    pub fn meter(
        query_id: impl Into<String>,
        path: PathKind,
        component: Component,
        stats: TokenStats,
        profile: &HardwareProfile,
    ) -> Result<EnergyRecord> {
        let query_id = query_id.into();
        if query_id.is_empty() {
            return Err(Error::Domain("record query_id must be non-empty".into()));
        }
        Ok(EnergyRecord {
            query_id,
            path,
            component,
            token_stats: stats,
            estimate: estimate_query_energy(stats, profile)?,
            timestamp: Utc::now(),
        })
    }
}

/// On-disk shape of one ledger line: a flat key-value document. Watt-hours
/// are derived at read time and not stored.
#[derive(Debug, Serialize, Deserialize)]
struct LedgerLine {
    query_id: String,
    path: PathKind,
    component: Component,
    prompt_tokens: u64,
    generated_tokens: u64,
    joules: f64,
    grams_co2e: f64,
    timestamp: String,
}

impl LedgerLine {
    fn from_record(rec: &EnergyRecord) -> Self {
        LedgerLine {
            query_id: rec.query_id.clone(),
            path: rec.path,
            component: rec.component,
            prompt_tokens: rec.token_stats.prompt_tokens,
            generated_tokens: rec.token_stats.generated_tokens,
            joules: rec.estimate.joules,
            grams_co2e: rec.estimate.grams_co2e,
            timestamp: rec.timestamp.to_rfc3339_opts(SecondsFormat::Micros, true),
        }
    }

    fn into_record(self) -> Result<EnergyRecord> {
        let timestamp = DateTime::parse_from_rfc3339(&self.timestamp)
            .map_err(|e| Error::Serde(format!("bad ledger timestamp `{}`: {e}", self.timestamp)))?
            .with_timezone(&Utc);
        Ok(EnergyRecord {
            query_id: self.query_id,
            path: self.path,
            component: self.component,
            token_stats: TokenStats::new(self.prompt_tokens, self.generated_tokens),
            estimate: EnergyEstimate {
                joules: self.joules,
                watt_hours: self.joules / JOULES_PER_WH,
                grams_co2e: self.grams_co2e,
            },
            timestamp,
        })
    }
}

/// Aggregated emissions with per-path and per-component breakdowns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionReport {
    pub total: EnergyEstimate,
    pub per_path: BTreeMap<PathKind, EnergyEstimate>,
    pub per_component: BTreeMap<Component, EnergyEstimate>,
    pub query_count: u64,
    /// Fraction of distinct queries served by the green path (0 when empty).
    pub green_fraction: f64,
}

/// Optional time-range and path restriction for [`aggregate_records`].
#[derive(Debug, Clone, Default)]
pub struct ReportFilter {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub paths: Option<BTreeSet<PathKind>>,
}

impl ReportFilter {
    pub fn matches(&self, rec: &EnergyRecord) -> bool {
        if let Some(from) = self.from {
            if rec.timestamp < from {
                return false;
            }
        }
        if let Some(to) = self.to {
            if rec.timestamp > to {
                return false;
            }
        }
        if let Some(paths) = &self.paths {
            if !paths.contains(&rec.path) {
                return false;
            }
        }
        true
    }
}

/// Aggregates records into an [`EmissionReport`]. A query counts as green
/// when it has at least one green-path record and no deep-path record.
pub fn aggregate_records<'a, I>(records: I, filter: &ReportFilter) -> EmissionReport
where
    I: IntoIterator<Item = &'a EnergyRecord>,
{
    let mut report = EmissionReport::default();
    let mut query_paths: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for rec in records {
        if !filter.matches(rec) {
            continue;
        }
        report.total += rec.estimate;
        *report.per_path.entry(rec.path).or_default() += rec.estimate;
        *report.per_component.entry(rec.component).or_default() += rec.estimate;
        let entry = query_paths.entry(rec.query_id.as_str()).or_default();
        match rec.path {
            PathKind::Green => entry.0 = true,
            PathKind::Deep => entry.1 = true,
            PathKind::RouterOverhead => {}
        }
    }
    report.query_count = query_paths.len() as u64;
    if report.query_count > 0 {
        let green = query_paths.values().filter(|(g, d)| *g && !*d).count();
        report.green_fraction = green as f64 / report.query_count as f64;
    }
    report
}

struct LedgerInner {
    writer: Option<BufWriter<File>>,
}

/// Append-only, line-delimited energy ledger. Many writers may append
/// concurrently; reads see a consistent prefix of the file.
pub struct Ledger {
    path: PathBuf,
    inner: Mutex<LedgerInner>,
}

impl Ledger {
    /// Opens (creating if needed) a ledger file for appending.
    pub fn open(path: impl Into<PathBuf>) -> Result<Ledger> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Ledger {
            path,
            inner: Mutex::new(LedgerInner { writer: Some(BufWriter::new(file)) }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends one record. Returns the record inside the error on
    /// failure so callers can retry.
    pub fn record(&self, rec: &EnergyRecord) -> Result<()> {
        if rec.query_id.is_empty() {
            return Err(Error::Domain("record query_id must be non-empty".into()));
        }
        // one write per record keeps lines whole under crashes
        let mut line = serde_json::to_string(&LedgerLine::from_record(rec))?;
        line.push('\n');
        let mut inner = self.inner.lock().expect("ledger lock poisoned");
        let writer = inner
            .writer
            .as_mut()
            .ok_or_else(|| Error::LedgerClosed { record: Box::new(rec.clone()) })?;
        let io_err = |source| Error::LedgerIo { source, record: Some(Box::new(rec.clone())) };
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.flush().map_err(io_err)?;
        Ok(())
    }

    /// Closes the ledger; subsequent appends fail with a lifecycle error.
    pub fn close(&self) {
        let mut inner = self.inner.lock().expect("ledger lock poisoned");
        if let Some(mut w) = inner.writer.take() {
            let _ = w.flush();
        }
    }

    /// Reads back every record currently persisted.
    pub fn read_all(&self) -> Result<Vec<EnergyRecord>> {
        {
            let mut inner = self.inner.lock().expect("ledger lock poisoned");
            if let Some(w) = inner.writer.as_mut() {
                w.flush().map_err(|source| Error::LedgerIo { source, record: None })?;
            }
        }
        read_ledger_file(&self.path)
    }

    /// Aggregates the persisted records under an optional filter.
    pub fn aggregate(&self, filter: &ReportFilter) -> Result<EmissionReport> {
        let records = self.read_all()?;
        Ok(aggregate_records(records.iter(), filter))
    }
}

/// Parses a ledger file into records. Unknown or blank lines are errors:
/// the ledger is append-only and fully owned by this crate.
pub fn read_ledger_file(path: impl AsRef<Path>) -> Result<Vec<EnergyRecord>> {
    let file = match File::open(path.as_ref()) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LedgerLine = serde_json::from_str(&line)?;
        records.push(parsed.into_record()?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> HardwareProfile {
        HardwareProfile::new("test", 1.2, 300.0, 100.0, 400.0)
    }

    #[test]
    fn zero_tokens_cost_nothing() {
        let est = estimate_query_energy(TokenStats::new(0, 0), &profile()).unwrap();
        assert_eq!(est.joules, 0.0);
        assert_eq!(est.grams_co2e, 0.0);
    }

    #[test]
    fn hand_evaluated_energy_model() {
        // 1000 tokens at 100 tok/s = 10 s; 1.2 * 300 W * 10 s = 3600 J
        // 3600 J = 0.001 kWh; at 400 g/kWh = 0.4 g
        let est = estimate_query_energy(TokenStats::new(400, 600), &profile()).unwrap();
        assert!((est.joules - 3600.0).abs() / 3600.0 < 1e-9);
        assert!((est.watt_hours - 1.0).abs() < 1e-9);
        assert!((est.grams_co2e - 0.4).abs() / 0.4 < 1e-9);
    }

    #[test]
    fn zero_throughput_is_a_configuration_error() {
        let bad = HardwareProfile::new("bad", 1.2, 300.0, 0.0, 400.0);
        let err = estimate_query_energy(TokenStats::new(100, 0), &bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn pue_below_one_rejected() {
        let bad = HardwareProfile::new("bad", 0.9, 300.0, 100.0, 400.0);
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn saving_reproduces_published_rows() {
        // average, web-questions, and grade-school-math rows
        assert!((energy_saving(470.0, 280.0).unwrap() - 40.4).abs() < 0.05);
        assert!((energy_saving(320.0, 58.0).unwrap() - 81.9).abs() < 0.05);
        assert!((energy_saving(610.0, 645.0).unwrap() - (-5.7)).abs() < 0.05);
    }

    #[test]
    fn saving_rejects_nonpositive_baseline() {
        assert!(matches!(energy_saving(0.0, 10.0), Err(Error::Domain(_))));
        assert!(matches!(energy_saving(-1.0, 10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ledger_roundtrip_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        let p = profile();
        for (i, joules_tokens) in [(1u64, 100u64), (2, 100), (3, 100)].iter().enumerate() {
            let rec = EnergyRecord::meter(
                format!("q-{}", joules_tokens.0),
                PathKind::Green,
                Component::Generation,
                TokenStats::new(joules_tokens.1, 0),
                &p,
            )
            .unwrap();
            ledger.record(&rec).unwrap();
            let _ = i;
        }
        let deep = EnergyRecord::meter("q-4", PathKind::Deep, Component::Generation,
            TokenStats::new(100, 0), &p).unwrap();
        ledger.record(&deep).unwrap();

        let report = ledger.aggregate(&ReportFilter::default()).unwrap();
        assert_eq!(report.query_count, 4);
        assert!((report.green_fraction - 0.75).abs() < 1e-12);
        let per_path_sum: f64 = report.per_path.values().map(|e| e.joules).sum();
        let per_comp_sum: f64 = report.per_component.values().map(|e| e.joules).sum();
        assert!((report.total.joules - per_path_sum).abs() <= 1e-6 * report.total.joules);
        assert!((report.total.joules - per_comp_sum).abs() <= 1e-6 * report.total.joules);
    }

    #[test]
    fn shared_query_id_counts_once() {
        let p = profile();
        let a = EnergyRecord::meter("q-1", PathKind::Green, Component::Retrieval,
            TokenStats::new(10, 0), &p).unwrap();
        let b = EnergyRecord::meter("q-1", PathKind::Green, Component::Generation,
            TokenStats::new(40, 50), &p).unwrap();
        let report = aggregate_records([&a, &b], &ReportFilter::default());
        assert_eq!(report.query_count, 1);
        let expect = estimate_query_energy(TokenStats::new(10, 0), &p).unwrap().joules
            + estimate_query_energy(TokenStats::new(40, 50), &p).unwrap().joules;
        assert!((report.total.joules - expect).abs() < 1e-9);
    }

    #[test]
    fn closed_ledger_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        ledger.close();
        let rec = EnergyRecord::meter("q-1", PathKind::Green, Component::Generation,
            TokenStats::new(1, 1), &profile()).unwrap();
        match ledger.record(&rec) {
            Err(Error::LedgerClosed { record }) => assert_eq!(record.query_id, "q-1"),
            other => panic!("expected LedgerClosed, got {other:?}"),
        }
    }

    #[test]
    fn empty_ledger_reports_zero() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        let report = ledger.aggregate(&ReportFilter::default()).unwrap();
        assert_eq!(report.query_count, 0);
        assert_eq!(report.total.joules, 0.0);
        assert_eq!(report.green_fraction, 0.0);
    }

    #[test]
    fn filter_excludes_paths() {
        let p = profile();
        let g = EnergyRecord::meter("q-1", PathKind::Green, Component::Generation,
            TokenStats::new(50, 0), &p).unwrap();
        let d = EnergyRecord::meter("q-2", PathKind::Deep, Component::Generation,
            TokenStats::new(850, 0), &p).unwrap();
        let filter = ReportFilter {
            paths: Some([PathKind::Green].into_iter().collect()),
            ..Default::default()
        };
        let report = aggregate_records([&g, &d], &filter);
        let green_only = estimate_query_energy(TokenStats::new(50, 0), &p).unwrap().joules;
        assert!((report.total.joules - green_only).abs() < 1e-9);
    }
}
