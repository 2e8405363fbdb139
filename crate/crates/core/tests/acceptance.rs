//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use canline::annotation::{
    parse_annotation_file, split_dataset, write_annotation_file, GroundTruthAnnotation,
};
use canline::eval::{map_at, map_range, precision_recall_at, Scene, COCO_IOU_THRESHOLDS};
use canline::line::{
    plan_arm_sequence, run_simulation, sequence_duration, ArmCommand, BinSide, Decision,
    InspectionVerdict, LineConfig, ServoState, SimulationSetup,
};
use canline::model::{BoundingBox, ClassLabel, ClassList, Detection, NormalizedBox, TruthBox};
use canline::ocr::{is_valid_date, parse_label, LabelFields};
use canline::synthetic::{DetectorProfile, FaultRates};
use canline::telemetry::{
    decode_event, decode_log_line, encode_event, encode_log_line, DetectionRecord, EventPayload,
    InspectionEvent,
};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < budget_s,
        format!("took {:.2}s, budget {budget_s}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 1. Metric oracle

fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let ua = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min)
        - inter;
    if inter <= 0.0 || ua <= 0.0 {
        0.0
    } else {
        (inter / ua).min(1.0)
    }
}

/// Per-detection preference key; larger is better.
fn assignment_key(choice: Option<usize>, ious: &[f64]) -> (u8, f64, i64) {
    match choice {
        None => (0, 0.0, 0),
        Some(j) => (1, ious[j], -(j as i64)),
    }
}

/// Enumerates every injective partial assignment of detections (in rank
/// order) to truths with IoU >= t, and keeps the lexicographically best one.
fn brute_force_assignment(iou: &[Vec<f64>], t: f64) -> Vec<Option<usize>> {
    fn rec(
        k: usize,
        iou: &[Vec<f64>],
        t: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<Vec<Option<usize>>>,
    ) {
        if k == iou.len() {
            let better = match best {
                None => true,
                Some(b) => {
                    let mut ord = std::cmp::Ordering::Equal;
                    for (i, (x, y)) in cur.iter().zip(b.iter()).enumerate() {
                        let kx = assignment_key(*x, &iou[i]);
                        let ky = assignment_key(*y, &iou[i]);
                        ord = kx.partial_cmp(&ky).unwrap();
                        if ord != std::cmp::Ordering::Equal {
                            break;
                        }
                    }
                    ord == std::cmp::Ordering::Greater
                }
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push(None);
        rec(k + 1, iou, t, used, cur, best);
        cur.pop();
        for j in 0..used.len() {
            if !used[j] && iou[k][j] >= t {
                used[j] = true;
                cur.push(Some(j));
                rec(k + 1, iou, t, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let n_gt = iou.first().map_or(0, |r| r.len());
    let mut best = None;
    rec(
        0,
        iou,
        t,
        &mut vec![false; n_gt],
        &mut Vec::new(),
        &mut best,
    );
    best.unwrap_or_default()
}

/// AP as the mean, over truths, of the best precision reached at or after
/// the rank where that truth was recovered.
fn oracle_ap(tp: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
    }
    let mut sum = 0.0;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            sum += precision[i..].iter().cloned().fold(0.0, f64::max);
        }
    }
    sum / n_gt as f64
}

fn oracle_map(scene: &Scene, t: f64) -> f64 {
    let classes: BTreeSet<usize> = scene.truths.iter().map(|g| g.label.id).collect();
    let mut total = 0.0;
    for &c in &classes {
        let gts: Vec<&TruthBox> = scene.truths.iter().filter(|g| g.label.id == c).collect();
        let mut dets: Vec<&Detection> = scene
            .detections
            .iter()
            .filter(|d| d.label.id == c)
            .collect();
        dets.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
        let iou: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| oracle_iou(&d.bbox, &g.bbox)).collect())
            .collect();
        let tp: Vec<bool> = brute_force_assignment(&iou, t)
            .iter()
            .map(Option::is_some)
            .collect();
        total += oracle_ap(&tp, gts.len());
    }
    total / classes.len() as f64
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(5.0..30.0);
    let h = rng.random_range(5.0..30.0);
    let x = rng.random_range(0.0..70.0);
    let y = rng.random_range(0.0..70.0);
    BoundingBox::new(x, y, x + w, y + h).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let n_classes = rng.random_range(1..=3usize);
    let label = |id: usize| ClassLabel {
        id,
        name: format!("c{id}"),
    };
    let truths: Vec<TruthBox> = (0..rng.random_range(1..=6))
        .map(|_| TruthBox {
            bbox: random_box(rng),
            label: label(rng.random_range(0..n_classes)),
        })
        .collect();
    let detections = (0..rng.random_range(0..=8))
        .map(|_| {
            let (bbox, class) = if rng.random_bool(0.75) {
                let g = &truths[rng.random_range(0..truths.len())];
                let s = rng.random_range(-4.0..4.0);
                let grow = rng.random_range(0.8..1.2);
                let b = &g.bbox;
                let bbox = BoundingBox::new(
                    b.x_min + s,
                    b.y_min + s * 0.5,
                    b.x_min + s + b.width() * grow,
                    b.y_min + s * 0.5 + b.height() * grow,
                )
                .unwrap();
                let class = if rng.random_bool(0.85) {
                    g.label.id
                } else {
                    rng.random_range(0..n_classes)
                };
                (bbox, class)
            } else {
                (random_box(rng), rng.random_range(0..n_classes))
            };
            Detection::new(bbox, label(class), rng.random::<f64>()).unwrap()
        })
        .collect();
    Scene { detections, truths }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let scene = random_scene(&mut rng);
        for &t in COCO_IOU_THRESHOLDS.iter() {
            let got = map_at(std::slice::from_ref(&scene), t).map_err(|e| e.to_string())?;
            let want = oracle_map(&scene, t);
            let diff = (got - want).abs();
            worst = worst.max(diff);
            check(
                diff <= 1e-9,
                format!("scene {i} t={t}: map_at {got} vs oracle {want}"),
            )?;
        }
    }
    within_budget(start.elapsed(), 5.0)?;
    Ok(format!(
        "200 scenes x 10 thresholds, max |diff| {worst:e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. Hand-computed AP

fn criterion_2() -> Outcome {
    let label = ClassLabel {
        id: 0,
        name: "c0".into(),
    };
    let g1 = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let g2 = BoundingBox::new(50.0, 50.0, 60.0, 60.0).unwrap();
    let far = BoundingBox::new(100.0, 100.0, 110.0, 110.0).unwrap();
    let scene = Scene {
        detections: vec![
            Detection::new(g1, label.clone(), 0.9).unwrap(),
            Detection::new(far, label.clone(), 0.8).unwrap(),
            Detection::new(g2, label.clone(), 0.7).unwrap(),
        ],
        truths: vec![
            TruthBox {
                bbox: g1,
                label: label.clone(),
            },
            TruthBox { bbox: g2, label },
        ],
    };
    let ap = map_at(&[scene], 0.5).map_err(|e| e.to_string())?;
    check(
        (ap - 5.0 / 6.0).abs() <= 1e-12,
        format!("AP {ap}, expected 5/6"),
    )?;
    Ok(format!("AP = {ap}"))
}

// ---------------------------------------------------------------------------
// 3. Perfect pipeline

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let setup = SimulationSetup {
        detector: DetectorProfile::perfect(),
        fault_rates: FaultRates::uniform(0.2),
        ..SimulationSetup::default()
    };
    let run = run_simulation(&setup, 1000, 7).map_err(|e| e.to_string())?;
    let s = &run.summary;
    check(
        s.confusion.sorting_errors() == 0,
        format!("{} sorting errors", s.confusion.sorting_errors()),
    )?;
    check(
        s.bins.accepted + s.bins.rejected == 1000,
        format!(
            "accepted {} + rejected {} != 1000",
            s.bins.accepted, s.bins.rejected
        ),
    )?;
    let (p, r, _) = precision_recall_at(&run.scenes, 0.5, setup.line.decision_threshold);
    check(p == 1.0 && r == 1.0, format!("precision {p}, recall {r}"))?;
    let m = map_range(&run.scenes).map_err(|e| e.to_string())?;
    check(m == 1.0, format!("mAP@0.5:0.95 {m}"))?;
    within_budget(start.elapsed(), 5.0)?;
    Ok(format!(
        "accepted {} rejected {}, P=R=1, mAP@0.5:0.95=1, {:.2}s",
        s.bins.accepted,
        s.bins.rejected,
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 4. Calibrated noise

fn criterion_4() -> Outcome {
    let detector = DetectorProfile {
        miss_rate: 0.1,
        false_positive_rate: 0.3,
        confusion_rate: 0.0,
        localization_jitter: 0.0,
        ..DetectorProfile::default()
    };
    // Three truth boxes per can, each kept with probability 1 - miss; a
    // Poisson(λ) number of spurious boxes per can. With exact localization
    // every kept box is a true positive, so
    //   recall    = 1 - miss
    //   precision = 3(1 - miss) / (3(1 - miss) + λ)
    let kept = 3.0 * (1.0 - detector.miss_rate);
    let expected_recall = 1.0 - detector.miss_rate;
    let expected_precision = kept / (kept + detector.false_positive_rate);

    let setup = SimulationSetup {
        detector,
        ..SimulationSetup::default()
    };
    let run = run_simulation(&setup, 10_000, 11).map_err(|e| e.to_string())?;
    let (p, r, _) = precision_recall_at(&run.scenes, 0.5, 0.0);
    check(
        (r - expected_recall).abs() <= 0.02,
        format!("recall {r} vs {expected_recall}"),
    )?;
    check(
        (p - expected_precision).abs() <= 0.03,
        format!("precision {p} vs {expected_precision}"),
    )?;
    Ok(format!(
        "recall {r:.4} (expected {expected_recall}), precision {p:.4} (expected {expected_precision})"
    ))
}

// ---------------------------------------------------------------------------
// 5. Determinism of the CLI

fn simulate_into(dir: &Path, config: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_canline"))
        .arg("simulate")
        .arg("--config")
        .arg(config)
        .args(["--seed", "1234", "--n", "200", "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        status.status.success(),
        format!(
            "simulate failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ),
    )
}

fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        "line_id = \"L2\"\n[ocr]\nsubstitution_rate = 0.05\ndeletion_rate = 0.02\n",
    )
    .map_err(|e| e.to_string())?;
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate_into(&a, &config)?;
    simulate_into(&b, &config)?;
    let mut bytes = 0;
    for name in ["events.jsonl", "telemetry.log"] {
        let x = fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(name)).map_err(|e| e.to_string())?;
        check(!x.is_empty(), format!("{name} is empty"))?;
        check(x == y, format!("{name} differs between runs"))?;
        bytes += x.len();
    }
    Ok(format!(
        "events.jsonl and telemetry.log identical ({bytes} bytes)"
    ))
}

// ---------------------------------------------------------------------------
// 6. Training-metrics report

fn criterion_6() -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table1.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_canline"))
        .arg("report")
        .arg(&fixture)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), "report exited non-zero")?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let want = "final epoch 199: precision 0.95917 recall 0.94134 map50 0.979 map50_95 0.76313";
    check(
        stdout.lines().any(|l| l == want),
        format!("missing line {want:?} in output:\n{stdout}"),
    )?;
    Ok(want.to_string())
}

// ---------------------------------------------------------------------------
// 7. Round-trips and splits

fn random_event(rng: &mut ChaCha8Rng, seq: u64) -> InspectionEvent {
    let side = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            BinSide::Left
        } else {
            BinSide::Right
        }
    };
    let decision = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    };
    let names = ClassList::default().names().to_vec();
    let payload = match rng.random_range(0..7) {
        0 => EventPayload::Arrival,
        1 => EventPayload::Capture,
        2 => EventPayload::Detection {
            detections: (0..rng.random_range(0..5))
                .map(|_| DetectionRecord {
                    class: names[rng.random_range(0..names.len())].clone(),
                    confidence: rng.random(),
                    bbox: [
                        rng.random_range(0.0..320.0),
                        rng.random_range(0.0..320.0),
                        rng.random_range(320.0..640.0),
                        rng.random_range(320.0..640.0),
                    ],
                })
                .collect(),
            ocr: (0..rng.random_range(0..4))
                .map(|i| format!("LINE {i} {}", rng.random::<u16>()))
                .collect(),
        },
        3 => EventPayload::Verdict {
            decision: decision(rng),
            reasons: (0..rng.random_range(0..3))
                .map(|i| format!("reason_{i}"))
                .collect(),
            max_confidence: names
                .iter()
                .map(|n| (n.clone(), rng.random::<f64>()))
                .filter(|(_, c)| *c < 0.5)
                .collect(),
        },
        4 => EventPayload::ArmStart { bin: side(rng) },
        5 => EventPayload::ArmDone {
            bin: side(rng),
            duration_s: rng.random_range(0.0..10.0),
        },
        _ => EventPayload::Binned {
            bin: side(rng),
            decision: decision(rng),
        },
    };
    InspectionEvent {
        seq,
        line_id: format!("L{}", rng.random_range(1..10)),
        t_sim_s: rng.random_range(0.0..1e5),
        can_id: rng.random_range(1..1_000_000),
        payload,
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let classes = ClassList::default();
    for file in 0..100 {
        let anns: Vec<GroundTruthAnnotation> = (0..rng.random_range(0..12))
            .map(|_| {
                let w = rng.random_range(0.0..=1.0);
                let h = rng.random_range(0.0..=1.0);
                GroundTruthAnnotation {
                    label: classes.label(rng.random_range(0..classes.len())).unwrap(),
                    bbox: NormalizedBox::new(
                        rng.random_range(w / 2.0..=1.0 - w / 2.0),
                        rng.random_range(h / 2.0..=1.0 - h / 2.0),
                        w,
                        h,
                    )
                    .unwrap(),
                }
            })
            .collect();
        let parsed = parse_annotation_file(&write_annotation_file(&anns), &classes)
            .map_err(|e| e.to_string())?;
        check(
            parsed.len() == anns.len(),
            format!("file {file}: line count"),
        )?;
        for (a, b) in anns.iter().zip(&parsed) {
            let close = [
                (a.bbox.cx, b.bbox.cx),
                (a.bbox.cy, b.bbox.cy),
                (a.bbox.w, b.bbox.w),
                (a.bbox.h, b.bbox.h),
            ]
            .iter()
            .all(|(x, y)| (x - y).abs() <= 1e-6);
            check(
                a.label == b.label && close,
                format!("file {file}: {a:?} vs {b:?}"),
            )?;
        }
    }

    for seq in 1..=100 {
        let e = random_event(&mut rng, seq);
        let wire = decode_event(&encode_event(&e)).map_err(|err| err.to_string())?;
        check(wire == e, format!("telemetry round-trip of {e:?}"))?;
        let log = decode_log_line(&encode_log_line(&e)).map_err(|err| err.to_string())?;
        check(log == e, format!("event-log round-trip of {e:?}"))?;
    }

    for n in [1usize, 2, 5, 10, 1000] {
        let ids: Vec<usize> = (0..n).collect();
        let s = split_dataset(&ids, 0.8, 5).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).cloned().collect();
        all.sort_unstable();
        check(all == ids, format!("N={n}: not a partition"))?;
        let n_train = (0.8 * n as f64).round() as usize;
        check(
            s.train.len() == n_train,
            format!("N={n}: train size {}", s.train.len()),
        )?;
    }
    Ok("100 annotation files, 100 events, splits N in {1,2,5,10,1000}".into())
}

// ---------------------------------------------------------------------------
// 8. Arm safety

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..10_000 {
        let decision = if rng.random_bool(0.5) {
            Decision::Accept
        } else {
            Decision::Reject
        };
        let config = LineConfig {
            accept_bin_side: if rng.random_bool(0.5) {
                BinSide::Left
            } else {
                BinSide::Right
            },
            servo_speed_deg_per_s: rng.random_range(30.0..360.0),
            suction_dwell_s: rng.random_range(0.0..1.0),
            ..LineConfig::default()
        };
        let verdict = InspectionVerdict {
            decision,
            ..InspectionVerdict::accept(i)
        };
        let mut pose = ServoState::home();
        let mut suction = false;
        for cmd in plan_arm_sequence(&verdict, &config) {
            match cmd {
                ArmCommand::Move { servo, target_deg } => {
                    check(
                        (0.0..=180.0).contains(&target_deg),
                        format!("verdict {i}: target {target_deg}"),
                    )?;
                    pose.set(servo, target_deg).map_err(|e| e.to_string())?;
                }
                ArmCommand::SuctionOn => suction = true,
                ArmCommand::SuctionOff => suction = false,
                ArmCommand::Dwell { .. } => {}
            }
            check(
                pose.angles().iter().all(|a| (0.0..=180.0).contains(a)),
                format!("verdict {i}: pose out of range"),
            )?;
        }
        check(
            pose.angles().iter().all(|&a| a == 90.0) && !suction,
            format!("verdict {i}: does not end at home with suction off"),
        )?;
    }

    // 90 -> 180 -> 90 on the shoulder twice, 90 -> 0 -> 90 on the base, all
    // at 180 deg/s (six 0.5 s moves), plus two 0.3 s suction dwells.
    let hand = 6.0 * 90.0 / 180.0 + 2.0 * 0.3;
    let cfg = LineConfig::default();
    let d = sequence_duration(
        &plan_arm_sequence(&InspectionVerdict::accept(1), &cfg),
        &cfg,
    );
    check(
        (d - hand).abs() <= 1e-9 && (hand - 3.6).abs() <= 1e-12,
        format!("accept sequence {d}s"),
    )?;
    Ok(format!(
        "10000 sequences safe, default accept duration {d}s"
    ))
}

// ---------------------------------------------------------------------------
// 9. Label grammar

fn oracle_days_in_month(month: u32, year: i32) -> u32 {
    const DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    if month == 2 && leap {
        29
    } else {
        DAYS[(month - 1) as usize]
    }
}

fn criterion_9() -> Outcome {
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let lot: String = (0..6)
            .map(|_| ALNUM[rng.random_range(0..ALNUM.len())] as char)
            .collect();
        let product = format!("{:04}", rng.random_range(0..10_000));
        let year = rng.random_range(2000..=2099);
        let month = rng.random_range(1..=12);
        let day = rng.random_range(1..=oracle_days_in_month(month, year));
        let date = NaiveDate::from_ymd_opt(year, month, day).unwrap();
        let fields = LabelFields::new(lot, date, product).map_err(|e| e.to_string())?;
        let parsed = parse_label(&fields.render_lines()).map_err(|e| format!("label {i}: {e}"))?;
        check(
            parsed == fields,
            format!("label {i}: {parsed:?} vs {fields:?}"),
        )?;
    }

    let mut checked = 0;
    for year in 2000..=2099 {
        for month in 0..=13u32 {
            for day in 0..=32u32 {
                let want = (1..=12).contains(&month)
                    && day >= 1
                    && day <= oracle_days_in_month(month, year);
                check(
                    is_valid_date(day, month, year) == want,
                    format!("{day:02}/{month:02}/{year}: expected {want}"),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "1000 labels round-trip, {checked} dates agree with day-count oracle"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", criterion_1),
        ("hand-computed AP fixture", criterion_2),
        ("perfect pipeline end-to-end", criterion_3),
        ("calibrated noise", criterion_4),
        ("simulate determinism", criterion_5),
        ("training-metrics report", criterion_6),
        ("parser round-trips and splits", criterion_7),
        ("arm safety", criterion_8),
        ("label grammar", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
