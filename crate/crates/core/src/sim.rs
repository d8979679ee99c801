//! End-to-end runs: meters deal shares, one engine per region aggregates,
//! a grid engine adds the regions up and hands results to the recipients.

use std::time::Instant;

use serde::Serialize;

use crate::abb::{CostMeter, Engine, EngineConfig, Mutation, OpenRecord, Schedule, TranscriptRecord};
use crate::aggregation::{
    distribute_outputs, grid_aggregate, naa_region, ncaa_region, niaa_region, AggregateMatrix, AggregateRow,
    NaaShared, NcaaLeakage, NiaaShared, RecipientBundle, RegionBatch, RegionTuples, NAA_EXP_PHASE, NAA_IMP_PHASE,
};
use crate::costs::{
    extrapolate_cpu, formula_comm, formula_mults, formula_mults_ncaa_batcher, Algorithm, CostParams, CostReport,
    CostRow, Protocol, ReportMetadata, Requirement, Segment, Verdict,
};
use crate::error::{Error, Result};
use crate::field::{Reading, ELEMENT_BITS, MODULUS};
use crate::gates::PermutationNetwork;
use crate::metering::{
    encode, generate_meters, generate_readings, plaintext_oracle, submit, MeterTuple, Scenario, SmartMeter,
    SubmitStats,
};
use crate::seed::{derive_seed, TAG_GRID, TAG_REGION};
use crate::shamir::Share;

pub const INPUT_PHASE: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// After inputs arrive, before any region computation.
    BeforeAggregation,
    /// After grid aggregation, before results go out.
    BeforeOutput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crash {
    pub server: usize,
    pub point: CrashPoint,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Regions processed concurrently; 1 runs them in order.
    pub threads: usize,
    pub schedule: Schedule,
    pub record_transcript: bool,
    pub slot: u64,
    pub crash: Option<Crash>,
    /// Servers that never reach the output parties.
    pub silent_output_servers: Vec<usize>,
    #[doc(hidden)]
    pub mutation: Option<Mutation>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            schedule: Schedule::Lockstep,
            record_transcript: true,
            slot: 0,
            crash: None,
            silent_output_servers: Vec::new(),
            mutation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegionOutcome {
    pub region: usize,
    pub meters: usize,
    pub meter: CostMeter,
    pub open_log: Vec<OpenRecord>,
    pub leakage: Option<NcaaLeakage>,
    pub submit: SubmitStats,
    transcript: Vec<TranscriptRecord>,
    rounds: u64,
    handles: u32,
    row: Option<Vec<Vec<Option<Share>>>>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub meters: Vec<SmartMeter>,
    pub readings: Vec<(Reading, Reading)>,
    pub oracle: AggregateMatrix,
    /// Rebuilt from the TSO's bundle.
    pub matrix: AggregateMatrix,
    pub bundles: Vec<RecipientBundle>,
    pub regions: Vec<RegionOutcome>,
    pub grid_meter: CostMeter,
    /// Region meters under `region{j}/`, grid phases unprefixed.
    pub meter: CostMeter,
    pub transcript: Vec<TranscriptRecord>,
    pub complete: Vec<bool>,
    pub report: CostReport,
    /// Not part of any artifact; varies between runs.
    pub wall_seconds: f64,
}

impl RunOutcome {
    pub fn matches_oracle(&self) -> bool {
        self.matrix == self.oracle
    }

    pub fn region_aggregation_counters(&self) -> crate::abb::PhaseCounters {
        let mut acc = crate::abb::PhaseCounters::default();
        for r in &self.regions {
            for (label, c) in r.meter.phases() {
                if label != INPUT_PHASE {
                    acc += *c;
                }
            }
        }
        acc
    }
}

fn engine_config(opts: &RunOptions) -> EngineConfig {
    EngineConfig {
        record_transcript: opts.record_transcript,
        schedule: opts.schedule,
        mutation: opts.mutation,
    }
}

fn run_region(
    scenario: &Scenario,
    region: usize,
    batch: &[(SmartMeter, MeterTuple)],
    opts: &RunOptions,
) -> Result<RegionOutcome> {
    let params = scenario.params()?;
    let seed = derive_seed(scenario.seed, &[TAG_REGION, region as u64]);
    let mut engine = Engine::with_config(params, seed, engine_config(opts));
    engine.set_phase(INPUT_PHASE);
    let (handles, stats) = submit(&mut engine, scenario, batch)?;
    if let Some(Crash { server, point: CrashPoint::BeforeAggregation }) = opts.crash {
        engine.fail_party(server)?;
    }
    engine.set_phase("aggregate");

    let suppliers = scenario.supplier_ids();
    let mut leakage = None;
    let row = if batch.is_empty() {
        None
    } else {
        let tuples = match scenario.algorithm {
            Algorithm::Naa | Algorithm::Ncaa => RegionTuples::Naa(
                handles
                    .iter()
                    .map(|h| NaaShared::from_handles(h, scenario.sigma))
                    .collect::<Result<_>>()?,
            ),
            Algorithm::Niaa => RegionTuples::Niaa(
                handles
                    .iter()
                    .map(|h| NiaaShared::from_handles(h))
                    .collect::<Result<_>>()?,
            ),
        };
        let batch = RegionBatch { region, tuples };
        let row = match scenario.algorithm {
            Algorithm::Naa => naa_region(&mut engine, &batch, &suppliers)?,
            Algorithm::Ncaa => {
                let (row, leak) = ncaa_region(&mut engine, &batch, &suppliers)?;
                leakage = Some(leak);
                row
            }
            Algorithm::Niaa => niaa_region(&mut engine, &batch, scenario.n_suppliers)?,
        };
        Some(engine.export(&row.handles())?)
    };
    Ok(RegionOutcome {
        region,
        meters: batch.len(),
        meter: engine.meter().clone(),
        open_log: engine.open_log().to_vec(),
        leakage,
        submit: stats,
        transcript: engine.transcript().to_vec(),
        rounds: engine.round(),
        handles: engine.handle_count() as u32,
        row,
    })
}

/// Runs one time slot of a scenario end to end.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    scenario.validate()?;
    let started = Instant::now();
    let meters = generate_meters(scenario);
    let readings = generate_readings(scenario, &meters, opts.slot);
    let oracle = plaintext_oracle(scenario, &meters, &readings);

    let mut per_region: Vec<Vec<(SmartMeter, MeterTuple)>> = vec![Vec::new(); scenario.n_dno];
    for (sm, &r) in meters.iter().zip(&readings) {
        per_region[sm.region - 1].push((*sm, encode(scenario, sm, r)?));
    }

    let regions: Vec<RegionOutcome> = if opts.threads <= 1 {
        per_region
            .iter()
            .enumerate()
            .map(|(j, b)| run_region(scenario, j + 1, b, opts))
            .collect::<Result<_>>()?
    } else {
        let mut results: Vec<Option<Result<RegionOutcome>>> = (0..per_region.len()).map(|_| None).collect();
        let jobs: Vec<(usize, &Vec<(SmartMeter, MeterTuple)>)> = per_region.iter().enumerate().collect();
        for chunk in jobs.chunks(opts.threads) {
            std::thread::scope(|s| {
                let workers: Vec<_> = chunk
                    .iter()
                    .map(|&(j, b)| (j, s.spawn(move || run_region(scenario, j + 1, b, opts))))
                    .collect();
                for (j, w) in workers {
                    results[j] = Some(w.join().expect("region thread panicked"));
                }
            });
        }
        results
            .into_iter()
            .map(|r| r.expect("every region ran"))
            .collect::<Result<_>>()?
    };

    let params = scenario.params()?;
    let mut grid = Engine::with_config(params, derive_seed(scenario.seed, &[TAG_GRID]), engine_config(opts));
    if let Some(Crash { server, point: CrashPoint::BeforeAggregation }) = opts.crash {
        grid.fail_party(server)?;
    }
    grid.set_phase("grid");
    let mut rows = Vec::with_capacity(regions.len());
    for r in &regions {
        rows.push(match &r.row {
            Some(shares) => Some(AggregateRow::from_handles(&grid.adopt(shares)?)),
            None => None,
        });
    }
    let shared = grid_aggregate(&mut grid, rows, scenario.n_suppliers)?;
    if let Some(Crash { server, point: CrashPoint::BeforeOutput }) = opts.crash {
        grid.fail_party(server)?;
    }
    let bundles = distribute_outputs(&mut grid, &shared, &opts.silent_output_servers)?;
    let tso = bundles
        .iter()
        .find(|b| b.recipient == crate::aggregation::Recipient::Tso)
        .expect("TSO bundle");
    let matrix = AggregateMatrix::from_bundle(tso, scenario.n_dno, scenario.n_suppliers);

    let mut transcript = Vec::new();
    let mut meter = CostMeter::default();
    let (mut round_base, mut handle_base) = (0u64, 0u32);
    for r in &regions {
        meter.absorb(&format!("region{}/", r.region), &r.meter);
        transcript.extend(r.transcript.iter().map(|t| TranscriptRecord {
            round: t.round + round_base,
            handle: t.handle + handle_base,
            ..*t
        }));
        round_base += r.rounds;
        handle_base += r.handles;
    }
    meter.absorb("", grid.meter());
    transcript.extend(grid.transcript().iter().map(|t| TranscriptRecord {
        round: t.round + round_base,
        handle: t.handle + handle_base,
        ..*t
    }));

    let output_faults = !opts.silent_output_servers.is_empty() || opts.crash.is_some();
    let report = build_report(scenario, &regions, grid.meter(), opts.threads, output_faults);
    Ok(RunOutcome {
        scenario: scenario.clone(),
        meters,
        readings,
        oracle,
        matrix,
        bundles,
        complete: shared.complete,
        grid_meter: grid.meter().clone(),
        meter,
        transcript,
        report,
        regions,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn region_params(scenario: &Scenario, m: usize) -> CostParams {
    CostParams {
        n_d: 1,
        n_s: scenario.n_suppliers as u64,
        sigma: scenario.sigma as u64,
        m: m as u64,
        ..CostParams::default()
    }
}

/// Mult-equivalents of NCAA on `m` rows as built here: per stream, a
/// Batcher network with two control-bit mult-equivalents and one swap per
/// item (ID and payload) per gate, then one open per row.
pub fn ncaa_network_mult_equivalents(m: usize) -> u64 {
    let gates = PermutationNetwork::batcher(m).gate_count() as u64;
    2 * (gates * (2 + 2) + m as u64)
}

fn build_report(
    scenario: &Scenario,
    regions: &[RegionOutcome],
    grid: &CostMeter,
    threads: usize,
    output_faults: bool,
) -> CostReport {
    let alg = scenario.algorithm;
    let protocol = Protocol::from(alg);
    let share_bits = u64::from(ELEMENT_BITS);
    let cpu = CostParams {
        threads: threads.max(1) as u64,
        ..CostParams::default()
    };
    let per_region: Vec<CostParams> = regions.iter().map(|r| region_params(scenario, r.meters)).collect();
    let sum_formula = |f: &dyn Fn(&CostParams) -> f64| per_region.iter().map(f).sum::<f64>();

    let mut agg = crate::abb::PhaseCounters::default();
    let mut upstream = SubmitStats::default();
    for r in regions {
        upstream += r.submit;
        for (label, c) in r.meter.phases() {
            if label != INPUT_PHASE {
                agg += *c;
            }
        }
    }
    let out = grid.phase("output");
    let full = CostParams {
        n_d: scenario.n_dno as u64,
        ..region_params(scenario, 0)
    };
    let measured_mults = agg.mult_equivalents();
    let formula_region_mults = sum_formula(&|p| formula_mults(alg, p));

    let row = |segment, formula_bits, measured_bits, fm: Option<f64>, mm: Option<u64>| CostRow {
        protocol,
        segment,
        n_d: scenario.n_dno as u64,
        n_s: scenario.n_suppliers as u64,
        sigma: scenario.sigma as u64,
        m: scenario.total_meters() as u64,
        formula_bits,
        measured_bits: Some(measured_bits),
        formula_mults: fm,
        measured_mult_equivalents: mm,
        cpu_seconds: mm.map(|v| extrapolate_cpu(v as f64, &cpu)),
    };
    let rows = vec![
        row(
            Segment::SmsToDcc,
            sum_formula(&|p| formula_comm(protocol, Segment::SmsToDcc, p)),
            upstream.bits(scenario.byte_accounting),
            None,
            None,
        ),
        row(
            Segment::BetweenDcc,
            sum_formula(&|p| formula_comm(protocol, Segment::BetweenDcc, p)),
            agg.messages_between_dcc * share_bits,
            Some(formula_region_mults),
            Some(measured_mults),
        ),
        row(
            Segment::DccToRecipients,
            formula_comm(protocol, Segment::DccToRecipients, &full),
            out.output_messages * share_bits,
            None,
            None,
        ),
    ];

    let mut checks = Vec::new();
    match alg {
        Algorithm::Naa => {
            for (stream, phase) in [("imp", NAA_IMP_PHASE), ("exp", NAA_EXP_PHASE)] {
                let measured: u64 = regions.iter().map(|r| r.meter.phase_tree(phase).multiplications).sum();
                checks.push(Verdict::new(
                    format!("naa multiplications ({stream} stream)"),
                    measured as f64,
                    formula_region_mults,
                    Requirement::Exact,
                ));
            }
        }
        Algorithm::Ncaa => {
            checks.push(Verdict::new(
                "ncaa mult-equivalents vs network count",
                measured_mults as f64,
                regions.iter().map(|r| ncaa_network_mult_equivalents(r.meters)).sum::<u64>() as f64,
                Requirement::Exact,
            ));
            checks.push(Verdict::new(
                "ncaa mult-equivalents vs m log m formula",
                measured_mults as f64,
                formula_region_mults,
                Requirement::Informational,
            ));
            checks.push(Verdict::new(
                "ncaa mult-equivalents vs m log^2 m formula",
                measured_mults as f64,
                sum_formula(&formula_mults_ncaa_batcher),
                Requirement::Informational,
            ));
        }
        Algorithm::Niaa => {
            checks.push(Verdict::new("niaa region multiplications", agg.multiplications as f64, 0.0, Requirement::Exact));
            checks.push(Verdict::new(
                "niaa region between-dcc messages",
                agg.messages_between_dcc as f64,
                0.0,
                Requirement::Exact,
            ));
        }
    }
    checks.push(Verdict::new(
        "between-dcc bits vs table",
        rows[1].measured_bits.unwrap_or(0) as f64,
        rows[1].formula_bits,
        Requirement::Informational,
    ));
    let exact_upstream = scenario.n_servers == 3 && scenario.byte_accounting == crate::metering::ByteAccounting::Paper;
    checks.push(Verdict::new(
        "sms-to-dcc bits vs table",
        rows[0].measured_bits.unwrap_or(0) as f64,
        rows[0].formula_bits,
        if exact_upstream { Requirement::Exact } else { Requirement::Informational },
    ));
    checks.push(Verdict::new(
        "dcc-to-recipients bits vs table",
        rows[2].measured_bits.unwrap_or(0) as f64,
        rows[2].formula_bits,
        if scenario.n_servers == 3 && !output_faults {
            Requirement::Exact
        } else {
            Requirement::Informational
        },
    ));

    CostReport {
        metadata: ReportMetadata {
            prime: MODULUS,
            accounting: match scenario.byte_accounting {
                crate::metering::ByteAccounting::Paper => "paper".into(),
                crate::metering::ByteAccounting::Measured => "measured".into(),
            },
            network: "batcher-odd-even-merge".into(),
            per_mult_seconds: cpu.per_mult_seconds,
            threads: cpu.threads,
        },
        rows,
        checks,
    }
}

/// Errors a run can end with that say the data is gone, not that the
/// setup is wrong.
pub fn is_availability_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InsufficientShares { .. } | Error::InsufficientParties { .. }
    )
}

/// Serializable summary of a run for the JSON report.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary<'a> {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub oracle_match: bool,
    pub complete_regions: &'a [bool],
    pub ncaa_leakage: Vec<Option<&'a NcaaLeakage>>,
    pub report: &'a CostReport,
    pub phases: Vec<(&'a str, &'a crate::abb::PhaseCounters)>,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary<'_> {
        RunSummary {
            algorithm: self.scenario.algorithm,
            seed: self.scenario.seed,
            oracle_match: self.matches_oracle(),
            complete_regions: &self.complete,
            ncaa_leakage: self.regions.iter().map(|r| r.leakage.as_ref()).collect(),
            report: &self.report,
            phases: self.meter.phases().collect(),
        }
    }
}
