//! Reference study: four interfaces, two modes, seven trials per group.
//! Every trial in a group shares the group's mean per-task times; integer
//! counts are split so their group sums match the reference totals.

#![allow(dead_code)]

use teleop_core::metrics::{SessionRecord, TaskTimes};

pub const TRIALS: usize = 7;
pub const LABELS: [&str; 4] = ["IM1", "IM2", "IM3", "IM4"];

/// Total time per interface, mm:ss.
pub const TOTALS: [[&str; 4]; 2] = [["09:58", "11:41", "11:41", "09:49"], ["10:15", "11:42", "11:33", "09:44"]];

/// Busbar, cover and cell times per interface, mm:ss.
pub const OTHER_TASKS: [[[&str; 3]; 4]; 2] = [
    [["00:38", "01:08", "02:38"], ["00:40", "01:05", "02:45"], ["00:35", "01:05", "03:00"], ["00:33", "01:03", "02:48"]],
    [["00:35", "01:05", "02:55"], ["00:32", "01:07", "02:45"], ["00:33", "01:05", "02:48"], ["00:39", "01:02", "02:36"]],
];

/// Violations summed over the seven trials.
pub const VIOLATIONS: [[u64; 4]; 2] = [[15, 13, 12, 12], [9, 9, 7, 6]];

/// Sorted bolts summed over the seven trials.
pub const BOLTS: [[u32; 4]; 2] = [[47, 44, 45, 34], [48, 45, 45, 35]];

pub fn mmss(s: &str) -> f64 {
    let (m, s) = s.split_once(':').expect("mm:ss");
    m.parse::<f64>().unwrap() * 60.0 + s.parse::<f64>().unwrap()
}

/// `total` as `TRIALS` integers differing by at most one.
pub fn split(total: u64) -> Vec<u64> {
    let base = total / TRIALS as u64;
    let extra = (total % TRIALS as u64) as usize;
    (0..TRIALS).map(|i| base + u64::from(i < extra)).collect()
}

pub fn reference_records() -> Vec<SessionRecord> {
    let mut out = Vec::new();
    for (m, mode) in [1u8, 2].into_iter().enumerate() {
        for (i, label) in LABELS.into_iter().enumerate() {
            let [busbar, cover, modules] = OTHER_TASKS[m][i].map(mmss);
            let bolts = mmss(TOTALS[m][i]) - busbar - cover - modules;
            let times = TaskTimes { bolts, busbar, cover, modules };
            let v = split(VIOLATIONS[m][i]);
            let b = split(u64::from(BOLTS[m][i]));
            for k in 0..TRIALS {
                out.push(SessionRecord {
                    mode,
                    im_label: label.into(),
                    per_task_s: times,
                    sorted_bolts: b[k] as u32,
                    violations: v[k],
                });
            }
        }
    }
    out
}
