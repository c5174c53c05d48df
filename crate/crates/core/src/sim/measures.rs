use serde::{Deserialize, Serialize};

use super::config::GroupSpec;
use super::ReplicationRecord;
use crate::numerics::{mean, median};

/// Largest number of delete-a-block jackknife groups.
const JACKKNIFE_BLOCKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaT12 {
    /// Mean |(β̂ − β)/β| over replications.
    #[serde(with = "super::float")]
    pub t1: f64,
    /// Mean (β̂ − β)² over replications.
    #[serde(with = "super::float")]
    pub t2: f64,
    /// Replications skipped in T1 because β = 0.
    pub t1_skipped: usize,
    pub replications: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaT34 {
    /// Relative bias (E mspe − T2)/T2.
    #[serde(with = "super::float")]
    pub t3: f64,
    /// √E(mspe − T2)² / T2.
    #[serde(with = "super::float")]
    pub t4: f64,
    pub replications: usize,
}

/// Median and mean over areas, with jackknife-over-replications standard
/// errors when available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "super::float")]
    pub median: f64,
    #[serde(with = "super::float")]
    pub mean: f64,
    #[serde(with = "super::float::option")]
    pub median_se: Option<f64>,
    #[serde(with = "super::float::option")]
    pub mean_se: Option<f64>,
}

impl Summary {
    /// Summary of the finite entries of `values`; NaN when there are none.
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (median, mean) = if finite.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (median(&finite), mean(&finite))
        };
        Self {
            median,
            mean,
            median_se: None,
            mean_se: None,
        }
    }

    fn with_se(mut self, deleted: &[Summary]) -> Self {
        if deleted.len() >= 2 {
            let g = deleted.len() as f64;
            let se = |pick: fn(&Summary) -> f64| {
                let v: Vec<f64> = deleted.iter().map(pick).collect();
                let m = mean(&v);
                ((g - 1.0) / g * v.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
            };
            self.median_se = Some(se(|s| s.median));
            self.mean_se = Some(se(|s| s.mean));
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    /// T1, T2, T3 or T4.
    pub measure: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub method: String,
    /// Replications in which the method failed.
    pub failures: usize,
    /// Negative per-area estimates across all replications.
    pub negative: usize,
    pub tilts_accepted: usize,
    pub stencil_shrinks: usize,
    pub per_area: Vec<AreaT34>,
    pub t3: Summary,
    pub t4: Summary,
    pub groups: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTables {
    pub m: usize,
    pub replications: usize,
    /// Replications excluded because the fit or the prediction failed.
    pub flagged: usize,
    pub tail_fallbacks: usize,
    pub t12: Vec<AreaT12>,
    pub t1: Summary,
    pub t2: Summary,
    pub t12_groups: Vec<GroupRow>,
    pub methods: Vec<MethodTable>,
}

fn usable(records: &[ReplicationRecord]) -> Vec<&ReplicationRecord> {
    records.iter().filter(|r| r.flagged.is_none()).collect()
}

/// Per-area sums that make up T1–T4, so that deleting a block of
/// replications is a subtraction.
#[derive(Debug, Clone, Default)]
struct Sums {
    abs_rel: Vec<f64>,
    t1_n: Vec<usize>,
    sq_err: Vec<f64>,
    n: usize,
    /// Per method: Σ mspe, Σ mspe², count.
    methods: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

impl Sums {
    fn new(m: usize, methods: usize) -> Self {
        Self {
            abs_rel: vec![0.0; m],
            t1_n: vec![0; m],
            sq_err: vec![0.0; m],
            n: 0,
            methods: vec![(vec![0.0; m], vec![0.0; m], 0); methods],
        }
    }

    fn add(&mut self, r: &ReplicationRecord, methods: &[String]) {
        for i in 0..r.beta_true.len() {
            let (b, bh) = (r.beta_true[i], r.beta_hat[i]);
            if b != 0.0 {
                self.abs_rel[i] += ((bh - b) / b).abs();
                self.t1_n[i] += 1;
            }
            self.sq_err[i] += (bh - b).powi(2);
        }
        self.n += 1;
        for (k, name) in methods.iter().enumerate() {
            if let Some(rec) = r.methods.get(name).filter(|rec| rec.error.is_none()) {
                let (s1, s2, n) = &mut self.methods[k];
                for (i, v) in rec.mspe.iter().enumerate() {
                    s1[i] += v;
                    s2[i] += v * v;
                }
                *n += 1;
            }
        }
    }

    fn minus(&self, other: &Sums) -> Sums {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        Sums {
            abs_rel: sub(&self.abs_rel, &other.abs_rel),
            t1_n: self.t1_n.iter().zip(&other.t1_n).map(|(a, b)| a - b).collect(),
            sq_err: sub(&self.sq_err, &other.sq_err),
            n: self.n - other.n,
            methods: self
                .methods
                .iter()
                .zip(&other.methods)
                .map(|(a, b)| (sub(&a.0, &b.0), sub(&a.1, &b.1), a.2 - b.2))
                .collect(),
        }
    }

    fn t1(&self) -> Vec<f64> {
        self.abs_rel
            .iter()
            .zip(&self.t1_n)
            .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    fn t2(&self) -> Vec<f64> {
        self.sq_err.iter().map(|s| s / self.n as f64).collect()
    }

    fn t34(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let t2 = self.t2();
        let (s1, s2, n) = &self.methods[k];
        let n = *n as f64;
        (0..t2.len())
            .map(|i| {
                let (e1, e2) = (s1[i] / n, s2[i] / n);
                let msd = (e2 - 2.0 * e1 * t2[i] + t2[i] * t2[i]).max(0.0);
                ((e1 - t2[i]) / t2[i], msd.sqrt() / t2[i])
            })
            .unzip()
    }
}

/// Per-area T1 and T2 over unflagged replications.
pub fn measure_t1_t2(records: &[ReplicationRecord], m: usize) -> Vec<AreaT12> {
    let mut sums = Sums::new(m, 0);
    for r in usable(records) {
        sums.add(r, &[]);
    }
    let t1 = sums.t1();
    let t2 = sums.t2();
    (0..m)
        .map(|i| AreaT12 {
            t1: t1[i],
            t2: t2[i],
            t1_skipped: sums.n - sums.t1_n[i],
            replications: sums.n,
        })
        .collect()
}

/// Per-area T3 and T4 of one method against the given T2. Uses the
/// unflagged replications in which the method succeeded.
pub fn measure_t3_t4(records: &[ReplicationRecord], method: &str, t2: &[f64]) -> Vec<AreaT34> {
    let values: Vec<&Vec<f64>> = usable(records)
        .into_iter()
        .filter_map(|r| r.methods.get(method).filter(|m| m.error.is_none()).map(|m| &m.mspe))
        .collect();
    let n = values.len();
    (0..t2.len())
        .map(|i| {
            let e1 = values.iter().map(|v| v[i]).sum::<f64>() / n as f64;
            let e2 = values.iter().map(|v| (v[i] - t2[i]).powi(2)).sum::<f64>() / n as f64;
            AreaT34 {
                t3: (e1 - t2[i]) / t2[i],
                t4: e2.sqrt() / t2[i],
                replications: n,
            }
        })
        .collect()
}

fn pick(values: &[f64], areas: &[usize]) -> Vec<f64> {
    areas.iter().map(|&a| values[a]).collect()
}

/// T1–T4 per area, overall and by group, with jackknife-over-replications
/// standard errors for the overall aggregates.
pub fn aggregate(records: &[ReplicationRecord], methods: &[String], groups: &[GroupSpec], m: usize) -> StudyTables {
    let valid = usable(records);
    let blocks = valid.len().min(JACKKNIFE_BLOCKS);
    let mut block_sums = vec![Sums::new(m, methods.len()); blocks];
    let mut total = Sums::new(m, methods.len());
    for (idx, r) in valid.iter().enumerate() {
        total.add(r, methods);
        block_sums[idx * blocks / valid.len()].add(r, methods);
    }
    let deleted: Vec<Sums> = if blocks >= 2 {
        block_sums.iter().map(|b| total.minus(b)).collect()
    } else {
        Vec::new()
    };
    let deleted_summaries =
        |f: &dyn Fn(&Sums) -> Vec<f64>| -> Vec<Summary> { deleted.iter().map(|d| Summary::of(&f(d))).collect() };

    let t12 = measure_t1_t2(records, m);
    let t1: Vec<f64> = t12.iter().map(|a| a.t1).collect();
    let t2: Vec<f64> = t12.iter().map(|a| a.t2).collect();
    let group_rows = |measure: &str, values: &[f64]| -> Vec<GroupRow> {
        groups
            .iter()
            .map(|g| GroupRow {
                group: g.label.clone(),
                measure: measure.to_string(),
                summary: Summary::of(&pick(values, &g.areas)),
            })
            .collect()
    };
    let mut t12_groups = group_rows("T1", &t1);
    t12_groups.extend(group_rows("T2", &t2));

    let method_tables = methods
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_area = measure_t3_t4(records, name, &t2);
            let t3: Vec<f64> = per_area.iter().map(|a| a.t3).collect();
            let t4: Vec<f64> = per_area.iter().map(|a| a.t4).collect();
            let recs = valid.iter().filter_map(|r| r.methods.get(name));
            let (mut failures, mut negative, mut tilts, mut shrinks) = (0, 0, 0, 0);
            for rec in recs {
                failures += rec.error.is_some() as usize;
                negative += rec.negative;
                tilts += rec.tilts_accepted;
                shrinks += rec.stencil_shrinks;
            }
            let mut groups = group_rows("T3", &t3);
            groups.extend(group_rows("T4", &t4));
            MethodTable {
                method: name.clone(),
                failures,
                negative,
                tilts_accepted: tilts,
                stencil_shrinks: shrinks,
                t3: Summary::of(&t3).with_se(&deleted_summaries(&|s: &Sums| s.t34(k).0)),
                t4: Summary::of(&t4).with_se(&deleted_summaries(&|s: &Sums| s.t34(k).1)),
                per_area,
                groups,
            }
        })
        .collect();

    StudyTables {
        m,
        replications: records.len(),
        flagged: records.len() - valid.len(),
        tail_fallbacks: valid.iter().map(|r| r.tail_fallbacks).sum(),
        t1: Summary::of(&t1).with_se(&deleted_summaries(&|s: &Sums| s.t1())),
        t2: Summary::of(&t2).with_se(&deleted_summaries(&|s: &Sums| s.t2())),
        t12,
        t12_groups,
        methods: method_tables,
    }
}
