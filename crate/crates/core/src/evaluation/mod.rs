//! Metrics, grouped reports, the masked-timestep probe, recorded-motion
//! evaluation, and the latency benchmark.
//!
//! Rotation error is reported two ways, since "MSE in degrees" is
//! ambiguous for angle-axis vectors: the primary column is the squared
//! component error in degrees (summed over the three components, averaged
//! over timesteps — the same convention as the training loss, in degree
//! units), and the geodesic angle in degrees rides alongside. Slice
//! position errors are squared index differences. Aggregation is
//! associative and runs in input order, so reports are byte-reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{autoregressive_predict, zero_velocity_predict};
use crate::error::{Error, Result};
use crate::network::{PoseLstm, TrackerModel};
use crate::parallel::map_ordered;
use crate::phantom::Volume;
use crate::rigid3d::{geodesic_distance, rotvec_to_matrix, Pose};
use crate::rng::derive_seed;
use crate::sampler::{acquire_sequence, interleaved_order, MaskPolicy, SliceSequence};
use crate::trajectory::load_recorded_trace;

const RAD2DEG: f64 = 180.0 / std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalOptions {
    pub m: usize,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            m: 10,
            parallel: true,
        }
    }
}

/// Provenance stamp carried into every emitted report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_hash: String,
}

/// Raw per-timestep errors for one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEval {
    pub subject_id: String,
    pub speed_class: u32,
    pub age_label: f64,
    /// Predicted poses, all n+m timesteps.
    pub outputs: Vec<Pose>,
    /// Squared angle-axis component error in degrees^2, summed over the
    /// three components, per timestep.
    pub rot_err_deg2: Vec<f64>,
    /// Geodesic angle between emitted and target orientation, degrees.
    pub geodesic_deg: Vec<f64>,
    /// Squared slice-position error, index units^2.
    pub z_err: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStat {
    pub key: String,
    pub count: usize,
    pub mean: f64,
    pub sem: f64,
}

/// Aggregates for one phase (estimation or prediction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    pub rot_mse_deg2: f64,
    /// Standard error over per-sequence means.
    pub rot_sem: f64,
    /// Standard error between group means, per grouping dimension.
    pub rot_sem_time: f64,
    pub rot_sem_age: f64,
    pub rot_sem_speed: f64,
    pub geodesic_deg_mean: f64,
    pub z_mse: f64,
    pub by_timestep: Vec<GroupStat>,
    pub by_age: Vec<GroupStat>,
    pub by_speed: Vec<GroupStat>,
    /// Loss-convention components (radians^2 / index^2), for Eq-15-style
    /// decomposition checks: loss_total = rot_xy + rot_z + z.
    pub loss_rot_xy: f64,
    pub loss_rot_z: f64,
    pub loss_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub m: usize,
    pub num_sequences: usize,
    pub estimation: PhaseReport,
    pub prediction: PhaseReport,
    /// One-step prediction error (first prediction step).
    pub osp_rot_deg2: f64,
    /// Multi-step prediction error (steps 2..m, OSP excluded).
    pub msp_rot_deg2: f64,
    pub sequences: Vec<SequenceEval>,
    pub provenance: Option<Provenance>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-timestep errors of an output sequence against targets.
fn sequence_errors(seq: &SliceSequence, outputs: &[Pose]) -> Result<SequenceEval> {
    let mut rot = Vec::with_capacity(outputs.len());
    let mut geo = Vec::with_capacity(outputs.len());
    let mut zer = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(&seq.targets) {
        let dx = (o.rotation.vx - t.rotation.vx) * RAD2DEG;
        let dy = (o.rotation.vy - t.rotation.vy) * RAD2DEG;
        let dz = (o.rotation.vz - t.rotation.vz) * RAD2DEG;
        rot.push(dx * dx + dy * dy + dz * dz);
        let ro = rotvec_to_matrix(&o.rotation)?;
        let rt = rotvec_to_matrix(&t.rotation)?;
        geo.push(geodesic_distance(&ro, &rt) * RAD2DEG);
        let d = o.z - t.z;
        zer.push(d * d);
    }
    Ok(SequenceEval {
        subject_id: seq.subject_id.clone(),
        speed_class: seq.speed_class,
        age_label: seq.age_label,
        outputs: outputs.to_vec(),
        rot_err_deg2: rot,
        geodesic_deg: geo,
        z_err: zer,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sem(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn group_stats(pairs: &[(String, f64)]) -> Vec<GroupStat> {
    let mut keys: Vec<&String> = pairs.iter().map(|(k, _)| k).collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|key| {
            let vals: Vec<f64> = pairs
                .iter()
                .filter(|(k, _)| k == *key)
                .map(|(_, v)| *v)
                .collect();
            GroupStat {
                key: (*key).clone(),
                count: vals.len(),
                mean: mean(&vals),
                sem: sem(&vals),
            }
        })
        .collect()
}

fn sem_of_group_means(groups: &[GroupStat]) -> f64 {
    let means: Vec<f64> = groups.iter().map(|g| g.mean).collect();
    sem(&means)
}

fn phase_report(evals: &[SequenceEval], targets_of: &[&SliceSequence], lo: usize, hi: usize) -> PhaseReport {
    let mut all_rot = Vec::new();
    let mut seq_means = Vec::new();
    let mut geo = Vec::new();
    let mut zall = Vec::new();
    let mut by_t: Vec<(String, f64)> = Vec::new();
    let mut by_age: Vec<(String, f64)> = Vec::new();
    let mut by_speed: Vec<(String, f64)> = Vec::new();
    let (mut l_xy, mut l_rz, mut l_z) = (0.0, 0.0, 0.0);
    let mut count = 0usize;

    for (ev, seq) in evals.iter().zip(targets_of) {
        let mut seq_sum = 0.0;
        for t in lo..hi {
            let r = ev.rot_err_deg2[t];
            all_rot.push(r);
            geo.push(ev.geodesic_deg[t]);
            zall.push(ev.z_err[t]);
            seq_sum += r;
            by_t.push((format!("{:02}", t - lo + 1), r));
            by_age.push((format!("{}", ev.age_label), r));
            by_speed.push((format!("{}", ev.speed_class), r));
            let o = &ev.outputs[t];
            let y = &seq.targets[t];
            l_xy += (o.rotation.vx - y.rotation.vx).powi(2)
                + (o.rotation.vy - y.rotation.vy).powi(2);
            l_rz += (o.rotation.vz - y.rotation.vz).powi(2);
            l_z += (o.z - y.z).powi(2);
            count += 1;
        }
        seq_means.push(seq_sum / (hi - lo) as f64);
    }
    let by_timestep = group_stats(&by_t);
    let by_age = group_stats(&by_age);
    let by_speed = group_stats(&by_speed);
    PhaseReport {
        rot_mse_deg2: mean(&all_rot),
        rot_sem: sem(&seq_means),
        rot_sem_time: sem_of_group_means(&by_timestep),
        rot_sem_age: sem_of_group_means(&by_age),
        rot_sem_speed: sem_of_group_means(&by_speed),
        geodesic_deg_mean: mean(&geo),
        z_mse: mean(&zall),
        by_timestep,
        by_age,
        by_speed,
        loss_rot_xy: l_xy / count.max(1) as f64,
        loss_rot_z: l_rz / count.max(1) as f64,
        loss_z: l_z / count.max(1) as f64,
    }
}

fn build_report(
    seqs: &[&SliceSequence],
    evals: Vec<SequenceEval>,
    n: usize,
    m: usize,
) -> EvalReport {
    let estimation = phase_report(&evals, seqs, 0, n);
    let prediction = phase_report(&evals, seqs, n, n + m);
    let osp = mean(&evals.iter().map(|e| e.rot_err_deg2[n]).collect::<Vec<_>>());
    let msp_vals: Vec<f64> = evals
        .iter()
        .flat_map(|e| e.rot_err_deg2[n + 1..n + m].iter().copied())
        .collect();
    EvalReport {
        n,
        m,
        num_sequences: evals.len(),
        estimation,
        prediction,
        osp_rot_deg2: osp,
        msp_rot_deg2: mean(&msp_vals),
        sequences: evals,
        provenance: None,
    }
}

/// Run the model over a test set and aggregate errors.
pub fn evaluate(
    model: &TrackerModel<f32>,
    testset: &[SliceSequence],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let n = testset[0].n();
    let evals = map_ordered(opts.parallel, testset, |seq| {
        let outputs = model.predict(seq, opts.m)?;
        sequence_errors(seq, &outputs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&SliceSequence> = testset.iter().collect();
    Ok(build_report(&refs, evals, n, opts.m))
}

/// Which engine produced a prediction row in the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predictor {
    FullModel,
    ZeroVelocity,
    AutoRegressive,
    DirectLstm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub predictor: Predictor,
    /// Mean rotation error (deg^2) per prediction step 1..m.
    pub per_step_rot_deg2: Vec<f64>,
    pub osp_rot_deg2: f64,
    pub msp_rot_deg2: f64,
    pub overall_rot_deg2: f64,
    pub z_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PredictionSummary>,
    pub num_sequences: usize,
    pub provenance: Option<Provenance>,
}

impl ComparisonReport {
    pub fn row(&self, which: Predictor) -> &PredictionSummary {
        self.rows
            .iter()
            .find(|r| r.predictor == which)
            .expect("all predictors present")
    }
}

/// Prediction-task comparison of the full model against the three
/// baselines. Zero-velocity and the auto-regressive model consume the full
/// model's estimation-side outputs; the direct LSTM is its own end-to-end
/// model.
pub fn compare_predictors(
    model: &TrackerModel<f32>,
    ar_engine: &PoseLstm<f32>,
    direct: &TrackerModel<f32>,
    testset: &[SliceSequence],
    opts: &EvalOptions,
) -> Result<ComparisonReport> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let n = testset[0].n();
    let m = opts.m;

    struct PerSeq {
        rows: [Vec<f64>; 4], // per predictor: per-step rot err
        z: [f64; 4],
    }

    let per_seq = map_ordered(opts.parallel, testset, |seq| -> Result<PerSeq> {
        let full = model.predict(seq, m)?;
        let estimates = &full[..n];
        let zv = zero_velocity_predict(estimates, m)?;
        let ar = autoregressive_predict(ar_engine, estimates, m, n)?;
        let dl = direct.predict(seq, m)?;
        let preds: [&[Pose]; 4] = [&full[n..], &zv, &ar, &dl[n..]];
        let mut rows: [Vec<f64>; 4] = Default::default();
        let mut z = [0.0f64; 4];
        for (k, pred) in preds.iter().enumerate() {
            for (j, p) in pred.iter().enumerate() {
                let t = &seq.targets[n + j];
                let dx = (p.rotation.vx - t.rotation.vx) * RAD2DEG;
                let dy = (p.rotation.vy - t.rotation.vy) * RAD2DEG;
                let dz = (p.rotation.vz - t.rotation.vz) * RAD2DEG;
                rows[k].push(dx * dx + dy * dy + dz * dz);
                let zd = p.z - t.z;
                z[k] += zd * zd / m as f64;
            }
        }
        Ok(PerSeq { rows, z })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let predictors = [
        Predictor::FullModel,
        Predictor::ZeroVelocity,
        Predictor::AutoRegressive,
        Predictor::DirectLstm,
    ];
    let rows = predictors
        .iter()
        .enumerate()
        .map(|(k, &predictor)| {
            let per_step: Vec<f64> = (0..m)
                .map(|j| mean(&per_seq.iter().map(|s| s.rows[k][j]).collect::<Vec<_>>()))
                .collect();
            let all: Vec<f64> = per_seq.iter().flat_map(|s| s.rows[k].clone()).collect();
            let msp: Vec<f64> = per_seq
                .iter()
                .flat_map(|s| s.rows[k][1..].to_vec())
                .collect();
            PredictionSummary {
                predictor,
                osp_rot_deg2: per_step[0],
                msp_rot_deg2: mean(&msp),
                overall_rot_deg2: mean(&all),
                z_mse: mean(&per_seq.iter().map(|s| s.z[k]).collect::<Vec<_>>()),
                per_step_rot_deg2: per_step,
            }
        })
        .collect();
    Ok(ComparisonReport {
        rows,
        num_sequences: testset.len(),
        provenance: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    /// 1-based masked timestep; None is the unmasked reference row.
    pub masked_timestep: Option<usize>,
    pub est_rot_deg2: f64,
    pub osp_rot_deg2: f64,
    pub msp_rot_deg2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    pub num_sequences: usize,
    pub provenance: Option<Provenance>,
}

/// Masked-timestep robustness probe: for every position, re-mask all test
/// sequences at that position and measure estimation, one-step, and
/// multi-step errors. Targets are never touched.
pub fn probe_masked(
    model: &TrackerModel<f32>,
    testset: &[SliceSequence],
    opts: &EvalOptions,
) -> Result<ProbeTable> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if testset.iter().any(|s| s.mask_flags.iter().any(|&f| f)) {
        return Err(Error::invalid(
            "probe requires sequences without pre-existing masks",
        ));
    }
    let n = testset[0].n();
    let mut rows = Vec::with_capacity(n + 1);
    for probe in 0..=n {
        let masked: Vec<SliceSequence> = if probe == 0 {
            testset.to_vec()
        } else {
            testset
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.slices[probe - 1].fill(0.0);
                    s.mask_flags[probe - 1] = true;
                    s
                })
                .collect()
        };
        let report = evaluate(model, &masked, opts)?;
        rows.push(ProbeRow {
            masked_timestep: if probe == 0 { None } else { Some(probe) },
            est_rot_deg2: report.estimation.rot_mse_deg2,
            osp_rot_deg2: report.osp_rot_deg2,
            msp_rot_deg2: report.msp_rot_deg2,
        });
    }
    Ok(ProbeTable {
        rows,
        num_sequences: testset.len(),
        provenance: None,
    })
}

/// Geometry parameters for applying recorded traces to volumes.
#[derive(Debug, Clone, Copy)]
pub struct RecordedEvalParams {
    pub n: usize,
    pub m: usize,
    pub gap_mm: f64,
    pub slice_size: usize,
    pub seed: u64,
}

/// Apply each recorded trace to each volume through the sampler, then
/// evaluate. Slice positions come from the interleaved acquisition order;
/// the trace contributes the rotation trajectory.
pub fn build_recorded_testset(
    volumes: &[Volume],
    trace_files: &[std::path::PathBuf],
    p: &RecordedEvalParams,
) -> Result<Vec<SliceSequence>> {
    let mut out = Vec::with_capacity(volumes.len() * trace_files.len());
    for (ti, path) in trace_files.iter().enumerate() {
        let traj = load_recorded_trace(path)?;
        if traj.poses.len() < p.n + p.m {
            return Err(Error::invalid(format!(
                "trace {} has {} poses, need {}",
                path.display(),
                traj.poses.len(),
                p.n + p.m
            )));
        }
        for (vi, v) in volumes.iter().enumerate() {
            let order = interleaved_order(
                v.dim(),
                p.gap_mm,
                v.spacing_mm,
                derive_seed(p.seed, (ti * volumes.len() + vi) as u64),
                p.n + p.m,
            )?;
            out.push(acquire_sequence(
                v,
                &traj,
                &order,
                MaskPolicy::NoMask,
                0,
                p.n,
                p.m,
                p.slice_size,
            )?);
        }
    }
    Ok(out)
}

pub fn evaluate_recorded(
    model: &TrackerModel<f32>,
    volumes: &[Volume],
    trace_files: &[std::path::PathBuf],
    p: &RecordedEvalParams,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let testset = build_recorded_testset(volumes, trace_files, p)?;
    evaluate(model, &testset, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub reps: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

/// Wall-clock inference latency per sequence (n slices in, n+m poses out).
pub fn latency_benchmark(
    model: &TrackerModel<f32>,
    seq: &SliceSequence,
    m: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps == 0 {
        return Err(Error::invalid("no samples: reps must be >= 1"));
    }
    // Warm-up runs outside the measurement.
    for _ in 0..2 {
        let _ = model.predict(seq, m)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = std::time::Instant::now();
        let out = model.predict(seq, m)?;
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        assert_eq!(out.len(), seq.n() + m);
        times.push(dt);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    let p95 = times[((times.len() as f64 * 0.95) as usize).min(times.len() - 1)];
    Ok(LatencyStats {
        reps,
        median_ms: median,
        p95_ms: p95,
        mean_ms: mean(&times),
    })
}

/// Spearman rank correlation between two equal-length samples.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..rx.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Grouped tables as CSV: `section,phase,key,count,mean,sem`.
pub fn write_report_csv(path: &Path, report: &EvalReport, provenance: Option<&str>) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(f, "# {p}")?;
    }
    writeln!(f, "section,phase,key,count,mean,sem")?;
    for (phase, rep) in [("estimation", &report.estimation), ("prediction", &report.prediction)] {
        writeln!(
            f,
            "overall,{phase},all,{},{},{}",
            report.num_sequences, rep.rot_mse_deg2, rep.rot_sem
        )?;
        for (section, groups) in [
            ("timestep", &rep.by_timestep),
            ("age", &rep.by_age),
            ("speed", &rep.by_speed),
        ] {
            for g in groups.iter() {
                writeln!(f, "{section},{phase},{},{},{},{}", g.key, g.count, g.mean, g.sem)?;
            }
        }
    }
    Ok(())
}
