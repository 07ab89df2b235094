//! Built-in verification batteries: gradient checks for every primitive and
//! network block, clustering equivalence against the brute-force reference,
//! metric analytic cases, and memory-update algebra. The command-line
//! `selfcheck` subcommand runs all of them; the acceptance suite reuses them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{canonical_labels, dbscan, reference::dbscan_reference, Embedding, View};
use crate::net::{CdisModel, NetConfig};
use crate::pipeline::{build_memories, contrastive_loss, momentum_blend, momentum_update, ClusterMemory};
use crate::rng::component_rng;
use crate::tensor::{finite_diff_check, finite_diff_scalar, Graph, PoolMode, Tensor, TensorError};

/// One named pass/fail entry of a battery.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn ok(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            pass: true,
            detail: detail.into(),
        }
    }

    fn fail(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            pass: false,
            detail: detail.into(),
        }
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn fd_case<F>(name: &str, f: F, x0: Vec<f64>, shape: Vec<usize>) -> CheckResult
where
    F: Fn(&Graph, &Tensor) -> Result<Tensor, TensorError>,
{
    match finite_diff_check(&f, &x0, &shape, FD_STEP, FD_TOL) {
        Ok(report) => {
            let detail = format!("max rel err {:.2e} over {} coords", report.max_rel_err, report.checked);
            if report.pass() {
                CheckResult::ok(name, detail)
            } else {
                CheckResult::fail(name, detail)
            }
        }
        Err(e) => CheckResult::fail(name, e.to_string()),
    }
}

/// Margin-safe random map: every max-pool window along both spatial axes of
/// the permuted layouts keeps a top-2 gap well above the FD step.
fn margin_safe_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Vec<f64> {
    'outer: loop {
        let v = rand_vec(rng, c * h * w, -1.0, 1.0);
        let at = |ci: usize, y: usize, x: usize| v[(ci * h + y) * w + x];
        for ci in 0..c {
            for y in 0..h {
                let mut col: Vec<f64> = (0..w).map(|x| at(ci, y, x)).collect();
                col.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if col[0] - col[1] < 1e-3 {
                    continue 'outer;
                }
            }
            for x in 0..w {
                let mut col: Vec<f64> = (0..h).map(|y| at(ci, y, x)).collect();
                col.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if col[0] - col[1] < 1e-3 {
                    continue 'outer;
                }
            }
        }
        return v;
    }
}

/// Finite-difference checks across every primitive, every network block, all
/// three supervised-loss terms, and the cluster-contrastive loss. Runs
/// `trials` randomized cases spread over the battery (at least one per
/// entry).
pub fn gradient_battery(trials: usize, seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = component_rng(seed, "gradient-battery");

    let config = NetConfig {
        input_size: 16,
        stage_channels: [4, 6, 8],
        ..NetConfig::default()
    };
    let model = CdisModel::new(config, Some(3), seed ^ 0x5eed).unwrap();

    // Closures must be deterministic; randomness is drawn up front per case.
    type Case<'a> = (String, Box<dyn Fn(&mut ChaCha8Rng) -> CheckResult + 'a>);
    let mut cases: Vec<Case<'_>> = Vec::new();

    macro_rules! case {
        ($name:expr, $body:expr) => {
            cases.push(($name.to_string(), Box::new($body)));
        };
    }

    case!("op.add_mul_sub", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 12, -1.0, 1.0);
        let other = rand_vec(rng, 12, -1.0, 1.0);
        fd_case(
            "op.add_mul_sub",
            move |g, x| {
                let c = g.constant(other.clone(), &[12])?;
                let y = g.sub(&g.mul(&g.add(x, &c)?, x)?, &c)?;
                g.sum_all(&y)
            },
            x0,
            vec![12],
        )
    });
    case!("op.sigmoid_exp_ln", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 9, 0.2, 2.0);
        fd_case(
            "op.sigmoid_exp_ln",
            |g, x| {
                let y = g.ln(&g.add_const(&g.exp(&g.sigmoid(x)?)?, 0.5)?)?;
                g.mean_all(&y)
            },
            x0,
            vec![9],
        )
    });
    case!("op.linear", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 5, -1.0, 1.0);
        let w = rand_vec(rng, 4 * 5, -1.0, 1.0);
        let b = rand_vec(rng, 4, -0.5, 0.5);
        fd_case(
            "op.linear",
            move |g, x| {
                let wt = g.constant(w.clone(), &[4, 5])?;
                let bt = g.constant(b.clone(), &[4])?;
                let y = g.linear(x, &wt, Some(&bt))?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![3, 5],
        )
    });
    case!("op.linear_weights", |rng: &mut ChaCha8Rng| {
        let x = rand_vec(rng, 2 * 4, -1.0, 1.0);
        let w0 = rand_vec(rng, 3 * 4, -1.0, 1.0);
        fd_case(
            "op.linear_weights",
            move |g, wt| {
                let xt = g.constant(x.clone(), &[2, 4])?;
                let y = g.linear(&xt, wt, None)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            w0,
            vec![3, 4],
        )
    });
    case!("op.conv_dw_s1", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 2 * 5 * 5, -1.0, 1.0);
        let k = rand_vec(rng, 2 * 9, -1.0, 1.0);
        fd_case(
            "op.conv_dw_s1",
            move |g, x| {
                let kt = g.constant(k.clone(), &[2, 3, 3])?;
                let y = g.conv2d_depthwise(x, &kt, None, 1, 1)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![2, 5, 5],
        )
    });
    case!("op.conv_dw_kernel_s2", |rng: &mut ChaCha8Rng| {
        let x = rand_vec(rng, 2 * 6 * 6, -1.0, 1.0);
        let k0 = rand_vec(rng, 2 * 9, -1.0, 1.0);
        fd_case(
            "op.conv_dw_kernel_s2",
            move |g, kt| {
                let xt = g.constant(x.clone(), &[2, 6, 6])?;
                let y = g.conv2d_depthwise(&xt, kt, None, 2, 1)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            k0,
            vec![2, 3, 3],
        )
    });
    case!("op.conv_pw", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 4 * 4, -1.0, 1.0);
        let w = rand_vec(rng, 5 * 3, -1.0, 1.0);
        let b = rand_vec(rng, 5, -0.5, 0.5);
        fd_case(
            "op.conv_pw",
            move |g, x| {
                let wt = g.constant(w.clone(), &[5, 3])?;
                let bt = g.constant(b.clone(), &[5])?;
                let y = g.conv2d_pointwise(x, &wt, Some(&bt))?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![3, 4, 4],
        )
    });
    case!("op.layer_norm", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 6 * 4, -1.0, 1.0);
        let gamma = rand_vec(rng, 6, 0.5, 1.5);
        let beta = rand_vec(rng, 6, -0.5, 0.5);
        let readout = rand_vec(rng, 6 * 4, -1.0, 1.0);
        fd_case(
            "op.layer_norm",
            move |g, x| {
                let gt = g.constant(gamma.clone(), &[6])?;
                let bt = g.constant(beta.clone(), &[6])?;
                let y = g.layer_norm(x, &gt, &bt, 1e-5)?;
                let r = g.constant(readout.clone(), &[6, 4])?;
                g.sum_all(&g.mul(&y, &r)?)
            },
            x0,
            vec![6, 4],
        )
    });
    case!("op.pool_gap", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 4 * 4, -1.0, 1.0);
        fd_case(
            "op.pool_gap",
            |g, x| {
                let y = g.global_avg_pool(x)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![3, 4, 4],
        )
    });
    case!("op.pool_max", |rng: &mut ChaCha8Rng| {
        let x0 = margin_safe_map(rng, 3, 4, 4);
        fd_case(
            "op.pool_max",
            |g, x| {
                let y = g.pool_axis(x, 2, PoolMode::Max)?;
                let z = g.pool_axis(&y, 1, PoolMode::Avg)?;
                g.sum_all(&g.mul(&z, &z)?)
            },
            x0,
            vec![3, 4, 4],
        )
    });
    case!("op.permute_reshape_concat", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 2 * 3 * 4, -1.0, 1.0);
        let readout = rand_vec(rng, 48, -1.0, 1.0);
        fd_case(
            "op.permute_reshape_concat",
            move |g, x| {
                let p = g.permute(x, &[2, 0, 1])?;
                let f = g.reshape(&p, &[4, 6])?;
                let cat = g.concat(&[&f, &f], 1)?;
                let r = g.constant(readout.clone(), &[4, 12])?;
                g.sum_all(&g.mul(&cat, &r)?)
            },
            x0,
            vec![2, 3, 4],
        )
    });
    case!("op.mul_prefix", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 4 * 6, -1.0, 1.0);
        let v = rand_vec(rng, 4, -1.0, 1.0);
        fd_case(
            "op.mul_prefix",
            move |g, x| {
                let vt = g.constant(v.clone(), &[4])?;
                let y = g.mul_prefix(x, &vt)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![4, 6],
        )
    });
    case!("op.powf_add_prefix", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 4, -1.0, 1.0);
        let v = rand_vec(rng, 3, -0.5, 0.5);
        fd_case(
            "op.powf_add_prefix",
            move |g, x| {
                let vt = g.constant(v.clone(), &[3])?;
                let shifted = g.add_prefix(x, &vt)?;
                let msq = g.mean_all(&g.mul(&shifted, &shifted)?)?;
                let inv = g.powf(&g.add_const(&msq, 1e-5)?, -0.5)?;
                let y = g.mul_prefix(&shifted, &inv)?;
                g.sum_all(&g.mul(&y, &y)?)
            },
            x0,
            vec![3, 4],
        )
    });
    case!("op.l2_normalize", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 2 * 5, 0.3, 1.0);
        let readout = rand_vec(rng, 10, -1.0, 1.0);
        fd_case(
            "op.l2_normalize",
            move |g, x| {
                let y = g.l2_normalize(x, 1e-12)?;
                let r = g.constant(readout.clone(), &[2, 5])?;
                g.sum_all(&g.mul(&y, &r)?)
            },
            x0,
            vec![2, 5],
        )
    });
    case!("op.cross_entropy", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 5, -2.0, 2.0);
        fd_case(
            "op.cross_entropy",
            |g, x| Ok(g.cross_entropy(x, &[1, 4, 0])?),
            x0,
            vec![3, 5],
        )
    });

    // network blocks (frozen parameters; gradient w.r.t. the input)
    let m1 = &model;
    case!("block.sifl_stage1", move |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 8 * 9, -1.0, 1.0);
        let readout = rand_vec(rng, 8 * 9, -1.0, 1.0);
        fd_case(
            "block.sifl_stage1",
            move |g, x| {
                let bound = m1.store.bind_frozen(g)?;
                let y = m1
                    .sifl()
                    .stage1(g, &bound, x, 1e-5)
                    .map_err(|_| TensorError::Empty("sifl1"))?;
                let r = g.constant(readout.clone(), &[8, 9])?;
                g.sum_all(&g.mul(&y, &r)?)
            },
            x0,
            vec![8, 9],
        )
    });
    let m2 = &model;
    case!("block.sifl_stage2_se", move |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 8 * 9, -1.0, 1.0);
        let readout = rand_vec(rng, 8 * 9, -1.0, 1.0);
        fd_case(
            "block.sifl_stage2_se",
            move |g, x| {
                let bound = m2.store.bind_frozen(g)?;
                let y = m2
                    .sifl()
                    .stage2(g, &bound, x, 1e-5)
                    .map_err(|_| TensorError::Empty("sifl2"))?;
                let r = g.constant(readout.clone(), &[8, 9])?;
                g.sum_all(&g.mul(&y, &r)?)
            },
            x0,
            vec![8, 9],
        )
    });
    let m3 = &model;
    case!("block.siel", move |rng: &mut ChaCha8Rng| {
        let x0 = margin_safe_map(rng, 8, 2, 2);
        let readout = rand_vec(rng, 8 * 4, -1.0, 1.0);
        fd_case(
            "block.siel",
            move |g, x| {
                let bound = m3.store.bind_frozen(g)?;
                let (sh, sw) = m3
                    .siel()
                    .forward(g, &bound, x)
                    .map_err(|_| TensorError::Empty("siel"))?;
                let r = g.constant(readout.clone(), &[8, 2, 2])?;
                let a = g.sum_all(&g.mul(&sh, &r)?)?;
                let b = g.sum_all(&g.mul(&sw, &r)?)?;
                g.add(&a, &b)
            },
            x0,
            vec![8, 2, 2],
        )
    });
    let m4 = &model;
    case!("block.classifier", move |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 8, -1.0, 1.0);
        fd_case(
            "block.classifier",
            move |g, x| {
                let bound = m4.store.bind_frozen(g)?;
                let logits = m4
                    .classifier()
                    .unwrap()
                    .forward(g, &bound, 0, x, 1e-5)
                    .map_err(|_| TensorError::Empty("classifier"))?;
                Ok(g.cross_entropy(&logits, &[1])?)
            },
            x0,
            vec![8],
        )
    });

    // loss terms, each isolated through a synthetic pooled/structural input
    case!("loss.mse_term", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 4 * 6, -1.0, 1.0);
        let target = rand_vec(rng, 4 * 6, -1.0, 1.0);
        fd_case(
            "loss.mse_term",
            move |g, x| {
                let t = g.constant(target.clone(), &[4, 6])?;
                g.mse(x, &t)
            },
            x0,
            vec![4, 6],
        )
    });
    case!("loss.infonce_term", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 3 * 4, -1.0, 1.0);
        let keys = rand_vec(rng, 3 * 4, -1.0, 1.0);
        fd_case(
            "loss.infonce_term",
            move |g, x| {
                let ed = g.l2_normalize(x, 1e-12)?;
                let es = g.l2_normalize(&g.constant(keys.clone(), &[3, 4])?, 1e-12)?;
                let sim = g.scale(&g.linear(&ed, &es, None)?, 1.0 / 0.1)?;
                let a = g.cross_entropy(&sim, &[0, 1, 2])?;
                let b = g.cross_entropy(&g.transpose(&sim)?, &[0, 1, 2])?;
                g.scale(&g.add(&a, &b)?, 0.5)
            },
            x0,
            vec![3, 4],
        )
    });
    case!("loss.ce_term", |rng: &mut ChaCha8Rng| {
        let x0 = rand_vec(rng, 2 * 3, -2.0, 2.0);
        fd_case(
            "loss.ce_term",
            |g, x| Ok(g.cross_entropy(x, &[2, 0])?),
            x0,
            vec![2, 3],
        )
    });
    case!("loss.contrastive", |rng: &mut ChaCha8Rng| {
        let dim = 6;
        let k = 4;
        let mut centroids = Vec::new();
        for _ in 0..k {
            let mut c = rand_vec(rng, dim, -1.0, 1.0);
            let n = crate::cluster::l2(&c);
            c.iter_mut().for_each(|v| *v /= n);
            centroids.push(c);
        }
        let mem = ClusterMemory {
            view: View::Drone,
            centroids,
            momentum: 0.1,
            iteration: 0,
        };
        let x0 = rand_vec(rng, dim, -1.0, 1.0);
        fd_case(
            "loss.contrastive",
            move |g, x| {
                let q = g.l2_normalize(x, 1e-12)?;
                contrastive_loss(g, &q, &mem, 1, 0.5).map_err(|_| TensorError::Empty("contrastive"))
            },
            x0,
            vec![dim],
        )
    });

    // spread the requested trial count across the battery
    let per_case = (trials / cases.len()).max(1);
    for (name, f) in &cases {
        for t in 0..per_case {
            let mut r = f(&mut rng);
            if per_case > 1 {
                r.name = format!("{name}#{t}");
            }
            results.push(r);
        }
    }

    // mutation fixture: a corrupted analytic gradient must be caught
    {
        let x0 = rand_vec(&mut rng, 8, -1.0, 1.0);
        let f = |xs: &[f64]| xs.iter().map(|v| 1.0 / (1.0 + (-v).exp())).sum::<f64>();
        let mut corrupted: Vec<f64> = x0
            .iter()
            .map(|v| {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            })
            .collect();
        corrupted[3] *= 1.25;
        let report = finite_diff_scalar(&f, &x0, &corrupted, FD_STEP, FD_TOL);
        if report.pass() {
            results.push(CheckResult::fail(
                "mutation.sigmoid_corrupted",
                "checker accepted a corrupted sigmoid gradient".to_string(),
            ));
        } else {
            results.push(CheckResult::ok(
                "mutation.sigmoid_corrupted",
                format!(
                    "corrupted rule rejected at op sigmoid (rel err {:.2e})",
                    report.max_rel_err
                ),
            ));
        }
    }

    results
}

/// Clustering equivalence battery against the brute-force reference,
/// including the reference radii 0.30 / 0.40 with minimum cluster size 4.
pub fn dbscan_battery(instances: usize, max_points: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = component_rng(seed, "dbscan-battery");
    let mut results = Vec::new();
    for trial in 0..instances {
        let n = rng.gen_range(2..=max_points);
        let dim = rng.gen_range(2..=32);
        let (eps, min_samples) = match trial % 4 {
            0 => (0.40, 4),
            1 => (0.30, 4),
            2 => (rng.gen_range(0.05..0.8), rng.gen_range(1..=6)),
            _ => (rng.gen_range(0.05..0.8), 4),
        };
        let points: Vec<Embedding> = (0..n)
            .map(|i| {
                let v = rand_vec(&mut rng, dim, -1.0, 1.0);
                Embedding::normalized(format!("p{i}"), View::Drone, v).unwrap()
            })
            .collect();
        let name = format!("dbscan#{trial}(n={n},dim={dim},eps={eps:.2},min={min_samples})");
        let fast = dbscan(&points, eps, min_samples);
        let slow = dbscan_reference(&points, eps, min_samples);
        match (fast, slow) {
            (Ok(a), Ok(b)) => {
                if canonical_labels(&a.labels) == canonical_labels(&b.labels)
                    && a.cluster_count == b.cluster_count
                {
                    results.push(CheckResult::ok(name, format!("{} clusters", a.cluster_count)));
                } else {
                    results.push(CheckResult::fail(name, "partition mismatch".to_string()));
                }
            }
            (a, b) => {
                results.push(CheckResult::fail(
                    name,
                    format!("errors: {:?} vs {:?}", a.err().map(|e| e.to_string()), b.err().map(|e| e.to_string())),
                ));
            }
        }
    }
    results
}

/// Analytic metric cases: AP at fixed ranks, recall, overlap extremes.
pub fn metric_battery() -> Vec<CheckResult> {
    use crate::eval::{average_precision, similarity_overlap, Direction, RankedQuery, RelevanceTable, RetrievalResult};
    let mut results = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() <= tol {
            results.push(CheckResult::ok(name, format!("{got:.6} == {want:.6}")));
        } else {
            results.push(CheckResult::fail(name, format!("{got:.6} != {want:.6}")));
        }
    };
    let result = RetrievalResult {
        direction: Direction::DroneToSatellite,
        queries: vec![RankedQuery {
            query_id: "q".into(),
            ranking: ["a", "b", "c", "d"]
                .iter()
                .enumerate()
                .map(|(i, g)| (g.to_string(), 1.0 - 0.1 * i as f64))
                .collect(),
        }],
    };
    let mut rel = RelevanceTable::default();
    rel.insert("q", "c");
    check("metric.ap_single_rank3", average_precision(&result, &rel).mean, 1.0 / 3.0, 1e-12);
    let mut rel2 = RelevanceTable::default();
    rel2.insert("q", "a");
    rel2.insert("q", "c");
    check(
        "metric.ap_ranks_1_and_3",
        average_precision(&result, &rel2).mean,
        (1.0 + 2.0 / 3.0) / 2.0,
        1e-12,
    );
    let pos = vec![1.0; 16];
    let neg = vec![-1.0; 16];
    check(
        "metric.overlap_disjoint",
        similarity_overlap(&pos, &neg, 100).unwrap().overlap,
        0.0,
        1e-12,
    );
    let same = vec![0.25, -0.5, 0.7, 0.1];
    check(
        "metric.overlap_identical",
        similarity_overlap(&same, &same, 100).unwrap().overlap,
        1.0,
        1e-12,
    );
    results
}

/// Momentum-memory algebra: blend extremes, the hand-arithmetic case, norm
/// preservation over many updates, and the analytic contrastive cases.
pub fn memory_battery(seed: u64) -> Vec<CheckResult> {
    let mut rng = component_rng(seed, "memory-battery");
    let mut results = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        results.push(if ok {
            CheckResult::ok(name, detail)
        } else {
            CheckResult::fail(name, detail)
        });
    };

    for &alpha in &[0.0, 0.1, 0.2, 1.0] {
        let c = [1.0, 0.0];
        let q = [0.0, 1.0];
        let blend = momentum_blend(alpha, &c, &q);
        let ok = (blend[0] - alpha).abs() < 1e-15 && (blend[1] - (1.0 - alpha)).abs() < 1e-15;
        check(
            &format!("memory.blend_alpha_{alpha}"),
            ok,
            format!("blend {blend:?}"),
        );
    }

    let mut mem = ClusterMemory {
        view: View::Drone,
        centroids: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        momentum: 0.1,
        iteration: 0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let id = rng.gen_range(0..2);
        let mut q = rand_vec(&mut rng, 3, -1.0, 1.0);
        let n = crate::cluster::l2(&q);
        q.iter_mut().for_each(|v| *v /= n);
        momentum_update(&mut mem, id, &q).unwrap();
        for c in &mem.centroids {
            worst = worst.max((crate::cluster::l2(c) - 1.0).abs());
        }
    }
    check(
        "memory.norms_10k_updates",
        worst < 1e-6,
        format!("worst norm deviation {worst:.2e}"),
    );

    let g = Graph::new();
    let q = g.input(vec![1.0, 0.0], &[2], false).unwrap();
    let single = ClusterMemory {
        view: View::Drone,
        centroids: vec![vec![0.3, 0.9]],
        momentum: 0.1,
        iteration: 0,
    };
    let v = g.scalar(&contrastive_loss(&g, &q, &single, 0, 0.05).unwrap());
    check("memory.contrastive_k1_zero", v == 0.0, format!("loss {v}"));

    let two = ClusterMemory {
        view: View::Drone,
        centroids: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        momentum: 0.1,
        iteration: 0,
    };
    let v = g.scalar(&contrastive_loss(&g, &q, &two, 0, 1.0).unwrap());
    let want = (1.0 + (-1.0f64).exp()).ln();
    check(
        "memory.contrastive_single_negative",
        (v - want).abs() < 1e-9,
        format!("{v:.6} vs {want:.6}"),
    );

    // build_memories hand case
    let points = vec![
        Embedding::normalized("a", View::Drone, vec![1.0, 0.0]).unwrap(),
        Embedding::normalized("b", View::Drone, vec![0.0, 1.0]).unwrap(),
    ];
    let assignment = crate::cluster::ClusterAssignment {
        labels: vec![0, 0],
        cluster_count: 1,
    };
    let m = build_memories(&points, &assignment, View::Drone, 0.1).unwrap();
    let e = std::f64::consts::FRAC_1_SQRT_2;
    check(
        "memory.mean_then_normalize",
        (m.centroids[0][0] - e).abs() < 1e-12 && (m.centroids[0][1] - e).abs() < 1e-12,
        format!("centroid {:?}", m.centroids[0]),
    );

    results
}

/// Run every battery; returns all results plus a summary flag.
pub fn run_all(seed: u64) -> (Vec<CheckResult>, bool) {
    let mut all = Vec::new();
    all.extend(gradient_battery(110, seed));
    all.extend(dbscan_battery(48, 120, seed));
    all.extend(metric_battery());
    all.extend(memory_battery(seed));
    let pass = all.iter().all(|r| r.pass);
    (all, pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batteries_pass() {
        let (results, pass) = run_all(12345);
        for r in results.iter().filter(|r| !r.pass) {
            eprintln!("FAILED {}: {}", r.name, r.detail);
        }
        assert!(pass);
        assert!(results.len() >= 100);
    }
}
