//! Benchmark harness comparing fresh encryption against encryption-machine
//! reuse, plus a random access-tree generator for benchmark policies.
//!
//! Two experiment shapes:
//!
//! * **Reuse sweep**: fix the policy and message, vary the number of
//!   encryptions N. The em scheme pays one machine build and then N cheap
//!   encryptions; its reported per-encryption time at N is the cumulative
//!   average (build + first N encryptions) / N, which is the accounting
//!   under which reuse shows up as a falling curve. The fresh scheme
//!   rebuilds the machine every time; its value at N is the running mean of
//!   N independent (build + encrypt) samples, which is flat up to noise.
//!   At N = 1 the two schemes do identical work.
//! * **Size sweep**: fix the policy, vary the message size. The fresh
//!   sample is one (build + encrypt); the em sample is one encrypt plus an
//!   equal share of a single build spread over the repetitions. The gap
//!   between the schemes is the build cost, which lives in secret sharing
//!   and per-leaf exponentiation and is independent of message size.
//!
//! Measurements use a monotonic clock and report mean and sample standard
//! deviation over at least five repetitions, taken after one untimed
//! warm-up so one-time pairing setup does not land in the first sample.

use abem::policy::{PolicyAst, MAX_DEPTH, MAX_LEAVES};
use abem::scheme::{build_em, em_encrypt, PublicKey, SchemeError};
use rand::Rng;
use std::hint::black_box;
use std::io::{self, Write};
use std::time::Instant;
use thiserror::Error;

/// One CSV row: a (mode, parameter, scheme) cell with its timing statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    /// `"reuse-sweep"` or `"size-sweep"`.
    pub mode: &'static str,
    /// Encryption count (reuse sweep) or message bytes (size sweep).
    pub parameter: u64,
    /// `"fresh"` or `"em"`.
    pub scheme: &'static str,
    /// Mean seconds per encryption at this parameter.
    pub mean_s: f64,
    /// Sample standard deviation across repetitions.
    pub std_s: f64,
    pub reps: u32,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 5, got {0}")]
    TooFewReps(u32),
    #[error("the counts/sizes grid is empty")]
    EmptyGrid,
    #[error("grid values must be at least 1")]
    ZeroGridValue,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Measures cumulative-average per-encryption time at each count in
/// `counts`, for both schemes. Each repetition runs one em sequence (one
/// build, then max(counts) encryptions) and one fresh sequence
/// (max(counts) independent build+encrypt pairs).
pub fn run_reuse_sweep<R: Rng + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    tree: &PolicyAst,
    message: &[u8],
    counts: &[u32],
    reps: u32,
    rng: &mut R,
) -> Result<Vec<BenchRecord>, BenchError> {
    if reps < 5 {
        return Err(BenchError::TooFewReps(reps));
    }
    let mut grid: Vec<u32> = counts.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    if grid[0] == 0 {
        return Err(BenchError::ZeroGridValue);
    }
    let n_max = *grid.last().expect("grid nonempty");

    warm_up(pk, tree, message, rng)?;

    // Per grid point, one cumulative-average sample per repetition.
    let mut em_samples = vec![Vec::with_capacity(reps as usize); grid.len()];
    let mut fresh_samples = vec![Vec::with_capacity(reps as usize); grid.len()];
    for _ in 0..reps {
        // Em sequence: one build amortized over a growing encryption count.
        let start = Instant::now();
        let em = build_em(pk, tree, rng)?;
        let mut cumulative = start.elapsed().as_secs_f64();
        let mut next = 0;
        for i in 1..=n_max {
            let start = Instant::now();
            let ct = em_encrypt(pk, &em, message, rng)?;
            cumulative += start.elapsed().as_secs_f64();
            black_box(&ct);
            if grid[next] == i {
                em_samples[next].push(cumulative / i as f64);
                next += 1;
                if next == grid.len() {
                    break;
                }
            }
        }
        // Fresh sequence: independent build+encrypt pairs; the value at N
        // is the running mean of the first N.
        let mut total = 0.0;
        let mut next = 0;
        for i in 1..=n_max {
            let start = Instant::now();
            let em = build_em(pk, tree, rng)?;
            let ct = em_encrypt(pk, &em, message, rng)?;
            total += start.elapsed().as_secs_f64();
            black_box(&ct);
            if grid[next] == i {
                fresh_samples[next].push(total / i as f64);
                next += 1;
                if next == grid.len() {
                    break;
                }
            }
        }
    }

    let mut records = Vec::with_capacity(grid.len() * 2);
    for (idx, &n) in grid.iter().enumerate() {
        records.push(record(
            "reuse-sweep",
            n as u64,
            "fresh",
            &fresh_samples[idx],
        ));
        records.push(record("reuse-sweep", n as u64, "em", &em_samples[idx]));
    }
    Ok(records)
}

/// Measures per-encryption time across message sizes. The fresh sample is
/// build + encrypt; the em sample is encrypt plus an equal share of one
/// build spread over the repetitions.
pub fn run_size_sweep<R: Rng + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    tree: &PolicyAst,
    sizes: &[usize],
    reps: u32,
    rng: &mut R,
) -> Result<Vec<BenchRecord>, BenchError> {
    if reps < 5 {
        return Err(BenchError::TooFewReps(reps));
    }
    let mut grid: Vec<usize> = sizes.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    if grid[0] == 0 {
        return Err(BenchError::ZeroGridValue);
    }

    warm_up(pk, tree, b"warm-up", rng)?;

    let mut records = Vec::with_capacity(grid.len() * 2);
    for &size in &grid {
        let mut message = vec![0u8; size];
        rng.fill(&mut message[..]);

        let mut fresh = Vec::with_capacity(reps as usize);
        for _ in 0..reps {
            let start = Instant::now();
            let em = build_em(pk, tree, rng)?;
            let ct = em_encrypt(pk, &em, &message, rng)?;
            fresh.push(start.elapsed().as_secs_f64());
            black_box(&ct);
        }

        let start = Instant::now();
        let em = build_em(pk, tree, rng)?;
        let build_share = start.elapsed().as_secs_f64() / reps as f64;
        let mut reused = Vec::with_capacity(reps as usize);
        for _ in 0..reps {
            let start = Instant::now();
            let ct = em_encrypt(pk, &em, &message, rng)?;
            reused.push(start.elapsed().as_secs_f64() + build_share);
            black_box(&ct);
        }

        records.push(record("size-sweep", size as u64, "fresh", &fresh));
        records.push(record("size-sweep", size as u64, "em", &reused));
    }
    Ok(records)
}

fn warm_up<R: Rng + rand::CryptoRng + ?Sized>(
    pk: &PublicKey,
    tree: &PolicyAst,
    message: &[u8],
    rng: &mut R,
) -> Result<(), BenchError> {
    let em = build_em(pk, tree, rng)?;
    black_box(em_encrypt(pk, &em, message, rng)?);
    Ok(())
}

fn record(
    mode: &'static str,
    parameter: u64,
    scheme: &'static str,
    samples: &[f64],
) -> BenchRecord {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    BenchRecord {
        mode,
        parameter,
        scheme,
        mean_s: mean,
        std_s: var.sqrt(),
        reps: samples.len() as u32,
    }
}

/// Writes records in the stable CSV schema `mode,parameter,scheme,mean_s,std_s,reps`.
pub fn write_csv(records: &[BenchRecord], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "mode,parameter,scheme,mean_s,std_s,reps")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.9},{:.9},{}",
            r.mode, r.parameter, r.scheme, r.mean_s, r.std_s, r.reps
        )?;
    }
    Ok(())
}

/// A generated benchmark policy: its text, parsed form, and an attribute
/// set that satisfies it.
#[derive(Clone, Debug)]
pub struct GeneratedTree {
    pub policy: String,
    pub tree: PolicyAst,
    pub satisfying: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeGenError {
    #[error("levels must be at least 1")]
    ZeroLevels,
    #[error("levels {levels} exceeds the policy depth limit {max}")]
    TooDeep { levels: u32, max: u32 },
    #[error("{leaves} leaves exceed the policy limit {max}")]
    TooManyLeaves { leaves: usize, max: usize },
    #[error("a single-level tree is one leaf; got {leaves} leaves")]
    SingleLevelShape { leaves: usize },
    #[error("a {levels}-level tree needs at least {levels} leaves, got {leaves}")]
    TooFewLeaves { levels: u32, leaves: usize },
}

/// Generates a random threshold tree with exactly `levels` depth and
/// `leaves` leaf nodes, deterministic for a given RNG state.
///
/// Shape: leaves are distributed over a random spine of the requested
/// depth — a chain of threshold gates in which each gate holds the next
/// spine gate plus at least one leaf (the deepest holds at least two), and
/// the remaining leaves land on uniformly random spine gates. Thresholds
/// are uniform in [1, child count]; attributes are named `attr0`,
/// `attr1`, ... in preorder. The returned satisfying set is built by
/// picking a random k-subset of children at every gate.
pub fn gen_random_tree<R: Rng + ?Sized>(
    levels: u32,
    leaves: usize,
    rng: &mut R,
) -> Result<GeneratedTree, TreeGenError> {
    if levels == 0 {
        return Err(TreeGenError::ZeroLevels);
    }
    if levels > MAX_DEPTH {
        return Err(TreeGenError::TooDeep {
            levels,
            max: MAX_DEPTH,
        });
    }
    if leaves > MAX_LEAVES {
        return Err(TreeGenError::TooManyLeaves {
            leaves,
            max: MAX_LEAVES,
        });
    }
    if levels == 1 {
        if leaves != 1 {
            return Err(TreeGenError::SingleLevelShape { leaves });
        }
        return Ok(GeneratedTree {
            policy: "attr0".to_string(),
            tree: PolicyAst::Leaf("attr0".to_string()),
            satisfying: vec!["attr0".to_string()],
        });
    }
    if leaves < levels as usize {
        return Err(TreeGenError::TooFewLeaves { levels, leaves });
    }

    // Spine gates, root first. Every gate gets one mandatory leaf (two for
    // the deepest, which has no spine child); extras land uniformly.
    let spine_len = (levels - 1) as usize;
    let mut leaf_counts = vec![1usize; spine_len];
    leaf_counts[spine_len - 1] = 2;
    for _ in 0..(leaves - levels as usize) {
        let idx = rng.gen_range(0..spine_len);
        leaf_counts[idx] += 1;
    }

    // Build deepest-first; each shallower gate takes the previous subtree
    // as one child at a random position among its leaves.
    let mut subtree: Option<PolicyAst> = None;
    for i in (0..spine_len).rev() {
        let mut children: Vec<PolicyAst> = (0..leaf_counts[i])
            .map(|_| PolicyAst::Leaf(String::new()))
            .collect();
        if let Some(inner) = subtree.take() {
            let pos = rng.gen_range(0..=children.len());
            children.insert(pos, inner);
        }
        let k = rng.gen_range(1..=children.len() as u32);
        subtree = Some(PolicyAst::Threshold { k, children });
    }
    let mut tree = subtree.expect("spine is nonempty");

    // Preorder attribute naming.
    fn rename(node: &mut PolicyAst, counter: &mut usize) {
        match node {
            PolicyAst::Leaf(attr) => {
                *attr = format!("attr{counter}");
                *counter += 1;
            }
            PolicyAst::Threshold { children, .. } => {
                for c in children {
                    rename(c, counter);
                }
            }
        }
    }
    let mut counter = 0;
    rename(&mut tree, &mut counter);

    // Satisfying set: at each gate, satisfy a uniformly random k-subset of
    // children.
    fn pick<R: Rng + ?Sized>(node: &PolicyAst, rng: &mut R, out: &mut Vec<String>) {
        match node {
            PolicyAst::Leaf(attr) => out.push(attr.clone()),
            PolicyAst::Threshold { k, children } => {
                let mut order: Vec<usize> = (0..children.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                for &idx in order.iter().take(*k as usize) {
                    pick(&children[idx], rng, out);
                }
            }
        }
    }
    let mut satisfying = Vec::new();
    pick(&tree, rng, &mut satisfying);

    Ok(GeneratedTree {
        policy: tree.pretty_print(),
        tree,
        satisfying,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use abem::policy::find_satisfying;
    use abem::scheme::setup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_level_tree_is_one_leaf() {
        let g = gen_random_tree(1, 1, &mut rng(0)).unwrap();
        assert_eq!(g.policy, "attr0");
        assert_eq!(g.satisfying, vec!["attr0"]);
        assert_eq!(
            gen_random_tree(1, 2, &mut rng(0)).unwrap_err(),
            TreeGenError::SingleLevelShape { leaves: 2 }
        );
    }

    #[test]
    fn infeasible_shapes_are_rejected() {
        assert_eq!(
            gen_random_tree(0, 1, &mut rng(0)).unwrap_err(),
            TreeGenError::ZeroLevels
        );
        assert_eq!(
            gen_random_tree(5, 4, &mut rng(0)).unwrap_err(),
            TreeGenError::TooFewLeaves {
                levels: 5,
                leaves: 4
            }
        );
        assert_eq!(
            gen_random_tree(MAX_DEPTH + 1, 64, &mut rng(0)).unwrap_err(),
            TreeGenError::TooDeep {
                levels: MAX_DEPTH + 1,
                max: MAX_DEPTH
            }
        );
        assert_eq!(
            gen_random_tree(2, MAX_LEAVES + 1, &mut rng(0)).unwrap_err(),
            TreeGenError::TooManyLeaves {
                leaves: MAX_LEAVES + 1,
                max: MAX_LEAVES
            }
        );
    }

    #[test]
    fn benchmark_shape_parses_back_with_requested_dimensions() {
        let g = gen_random_tree(10, 100, &mut rng(42)).unwrap();
        let parsed = PolicyAst::parse(&g.policy).unwrap();
        assert_eq!(parsed.depth(), 10);
        assert_eq!(parsed.leaf_count(), 100);
        assert_eq!(parsed, g.tree);
    }

    #[test]
    fn requested_dimensions_hold_across_shapes_and_seeds() {
        for seed in 0..10 {
            for (levels, leaves) in [(2, 2), (2, 9), (3, 3), (4, 7), (6, 6), (8, 40)] {
                let g = gen_random_tree(levels, leaves, &mut rng(seed)).unwrap();
                let parsed =
                    PolicyAst::parse(&g.policy).unwrap_or_else(|e| panic!("{}: {e}", g.policy));
                assert_eq!(parsed.depth(), levels, "policy {}", g.policy);
                assert_eq!(parsed.leaf_count(), leaves, "policy {}", g.policy);
                assert_eq!(parsed, g.tree);
            }
        }
    }

    #[test]
    fn emitted_set_satisfies_the_tree() {
        for seed in 0..20 {
            let g = gen_random_tree(5, 17, &mut rng(seed)).unwrap();
            assert!(
                find_satisfying(&g.tree, &g.satisfying).is_some(),
                "seed {seed}: {} not satisfied by {:?}",
                g.policy,
                g.satisfying
            );
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_random_tree(7, 30, &mut rng(9)).unwrap();
        let b = gen_random_tree(7, 30, &mut rng(9)).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.satisfying, b.satisfying);
        let c = gen_random_tree(7, 30, &mut rng(10)).unwrap();
        assert_ne!(a.policy, c.policy);
    }

    #[test]
    fn attributes_are_numbered_in_preorder() {
        let g = gen_random_tree(4, 12, &mut rng(3)).unwrap();
        let attrs = g.tree.leaf_attrs();
        let expected: Vec<String> = (0..12).map(|i| format!("attr{i}")).collect();
        assert_eq!(
            attrs,
            expected.iter().map(String::as_str).collect::<Vec<_>>()
        );
    }

    #[test]
    fn reuse_sweep_produces_the_declared_grid() {
        let mut rng = rng(1);
        let (pk, _) = setup(&mut rng).unwrap();
        let tree = PolicyAst::parse("2 of (a, b, c)").unwrap();
        let records = run_reuse_sweep(&pk, &tree, b"msg", &[3, 1], 5, &mut rng).unwrap();
        // Sorted grid, two schemes per point.
        let cells: Vec<(u64, &str)> = records.iter().map(|r| (r.parameter, r.scheme)).collect();
        assert_eq!(cells, [(1, "fresh"), (1, "em"), (3, "fresh"), (3, "em")]);
        for r in &records {
            assert_eq!(r.mode, "reuse-sweep");
            assert_eq!(r.reps, 5);
            assert!(r.mean_s > 0.0, "times are strictly positive");
            assert!(r.std_s >= 0.0);
        }
    }

    #[test]
    fn size_sweep_produces_the_declared_grid() {
        let mut rng = rng(2);
        let (pk, _) = setup(&mut rng).unwrap();
        let tree = PolicyAst::parse("a and b").unwrap();
        let records = run_size_sweep(&pk, &tree, &[4096, 512], 5, &mut rng).unwrap();
        let cells: Vec<(u64, &str)> = records.iter().map(|r| (r.parameter, r.scheme)).collect();
        assert_eq!(
            cells,
            [(512, "fresh"), (512, "em"), (4096, "fresh"), (4096, "em")]
        );
        for r in &records {
            assert_eq!(r.mode, "size-sweep");
            assert!(r.mean_s > 0.0);
        }
    }

    #[test]
    fn sweeps_reject_bad_grids_and_reps() {
        let mut rng = rng(3);
        let (pk, _) = setup(&mut rng).unwrap();
        let tree = PolicyAst::parse("a").unwrap();
        assert!(matches!(
            run_reuse_sweep(&pk, &tree, b"m", &[1], 4, &mut rng),
            Err(BenchError::TooFewReps(4))
        ));
        assert!(matches!(
            run_reuse_sweep(&pk, &tree, b"m", &[], 5, &mut rng),
            Err(BenchError::EmptyGrid)
        ));
        assert!(matches!(
            run_reuse_sweep(&pk, &tree, b"m", &[0, 2], 5, &mut rng),
            Err(BenchError::ZeroGridValue)
        ));
        assert!(matches!(
            run_size_sweep(&pk, &tree, &[0], 5, &mut rng),
            Err(BenchError::ZeroGridValue)
        ));
    }

    #[test]
    fn csv_schema_is_stable() {
        let records = vec![
            BenchRecord {
                mode: "reuse-sweep",
                parameter: 10,
                scheme: "em",
                mean_s: 0.0123456789,
                std_s: 0.001,
                reps: 5,
            },
            BenchRecord {
                mode: "size-sweep",
                parameter: 1048576,
                scheme: "fresh",
                mean_s: 0.5,
                std_s: 0.0,
                reps: 7,
            },
        ];
        let mut out = Vec::new();
        write_csv(&records, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "mode,parameter,scheme,mean_s,std_s,reps");
        assert_eq!(lines[1], "reuse-sweep,10,em,0.012345679,0.001000000,5");
        assert_eq!(
            lines[2],
            "size-sweep,1048576,fresh,0.500000000,0.000000000,7"
        );
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn at_n_equals_one_the_schemes_do_identical_work() {
        // Both schemes at N = 1 time one build plus one encryption; their
        // means must be close (same work, different samples). Allow a wide
        // relative band since this is a timing assertion.
        let mut rng = rng(4);
        let (pk, _) = setup(&mut rng).unwrap();
        let g = gen_random_tree(4, 20, &mut rng).unwrap();
        let records = run_reuse_sweep(&pk, &g.tree, &[7u8; 256], &[1], 6, &mut rng).unwrap();
        let fresh = records.iter().find(|r| r.scheme == "fresh").unwrap();
        let em = records.iter().find(|r| r.scheme == "em").unwrap();
        let ratio = em.mean_s / fresh.mean_s;
        assert!(
            (0.5..2.0).contains(&ratio),
            "N=1 means diverge: em {} vs fresh {}",
            em.mean_s,
            fresh.mean_s
        );
    }
}
