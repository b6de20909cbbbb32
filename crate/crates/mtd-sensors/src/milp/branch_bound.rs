//! Best-bound branch-and-bound over binary variables, with most-fractional
//! branching and LP relaxations solved by the dense simplex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{solve_lp, LpStatus};
use super::{MilpError, MilpModel, MilpSolution, SolveOptions, SolveStats, SolveStatus};

struct Node {
    bound: f64,
    id: u64,
    fixes: Vec<(usize, f64, f64)>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed: BinaryHeap is a max-heap, we want the smallest bound first,
    // ties by insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn most_fractional(x: &[f64], bins: &[super::VarId], int_tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for b in bins {
        let v = x[b.0];
        let frac = (v - v.round()).abs();
        if frac > int_tol {
            match best {
                Some((_, f)) if f >= frac => {}
                _ => best = Some((b.0, frac)),
            }
        }
    }
    best.map(|(i, _)| i)
}

fn snap(mut x: Vec<f64>, bins: &[super::VarId]) -> Vec<f64> {
    for b in bins {
        x[b.0] = x[b.0].round();
    }
    x
}

pub(super) fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, MilpError> {
    let start = Instant::now();
    let bins = model.binaries();
    let mut stats = SolveStats::default();

    let root = solve_lp(model, &[])?;
    stats.lp_iterations += root.iterations;
    stats.nodes += 1;
    match root.status {
        LpStatus::Infeasible => {
            stats.wall_time_secs = start.elapsed().as_secs_f64();
            return Ok(MilpSolution {
                status: SolveStatus::Infeasible,
                objective_value: f64::INFINITY,
                assignment: Vec::new(),
                stats,
            });
        }
        LpStatus::Unbounded => {
            stats.wall_time_secs = start.elapsed().as_secs_f64();
            return Ok(MilpSolution {
                status: SolveStatus::Unbounded,
                objective_value: f64::NEG_INFINITY,
                assignment: Vec::new(),
                stats,
            });
        }
        LpStatus::Optimal => {}
    }

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if most_fractional(&root.x, &bins, opts.int_tol).is_none() {
        // The relaxation is already integral.
        stats.wall_time_secs = start.elapsed().as_secs_f64();
        return Ok(MilpSolution {
            status: SolveStatus::Optimal,
            objective_value: root.objective,
            assignment: snap(root.x, &bins),
            stats,
        });
    }

    // Rounding heuristic for an early incumbent.
    {
        let fixes: Vec<(usize, f64, f64)> =
            bins.iter().map(|b| (b.0, root.x[b.0].round(), root.x[b.0].round())).collect();
        let h = solve_lp(model, &fixes)?;
        stats.lp_iterations += h.iterations;
        if h.status == LpStatus::Optimal {
            incumbent = Some((h.objective, snap(h.x, &bins)));
        }
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(Node { bound: root.objective, id: next_id, fixes: Vec::new(), x: root.x });

    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            // Best-bound order: once the best open bound is within the gap of
            // the incumbent, optimality is proved.
            if node.bound >= inc - opts.gap {
                break;
            }
        }
        if stats.nodes >= opts.max_nodes {
            let (obj, x) = incumbent.unwrap_or((f64::INFINITY, Vec::new()));
            stats.wall_time_secs = start.elapsed().as_secs_f64();
            return Ok(MilpSolution {
                status: SolveStatus::GapLimit,
                objective_value: obj,
                assignment: x,
                stats,
            });
        }

        let Some(branch_var) = most_fractional(&node.x, &bins, opts.int_tol) else {
            // Integral node popped from the heap.
            let obj = node.bound;
            if incumbent.as_ref().map_or(true, |(inc, _)| obj < inc - 1e-12) {
                incumbent = Some((obj, snap(node.x, &bins)));
            }
            continue;
        };

        for val in [0.0, 1.0] {
            let mut fixes = node.fixes.clone();
            fixes.push((branch_var, val, val));
            let lp = solve_lp(model, &fixes)?;
            stats.lp_iterations += lp.iterations;
            stats.nodes += 1;
            match lp.status {
                LpStatus::Infeasible => continue,
                LpStatus::Unbounded => {
                    stats.wall_time_secs = start.elapsed().as_secs_f64();
                    return Ok(MilpSolution {
                        status: SolveStatus::Unbounded,
                        objective_value: f64::NEG_INFINITY,
                        assignment: Vec::new(),
                        stats,
                    });
                }
                LpStatus::Optimal => {}
            }
            if let Some((inc, _)) = &incumbent {
                if lp.objective >= inc - opts.gap {
                    continue;
                }
            }
            if most_fractional(&lp.x, &bins, opts.int_tol).is_none() {
                if incumbent.as_ref().map_or(true, |(inc, _)| lp.objective < inc - 1e-12) {
                    incumbent = Some((lp.objective, snap(lp.x, &bins)));
                }
            } else {
                next_id += 1;
                heap.push(Node { bound: lp.objective, id: next_id, fixes, x: lp.x });
            }
        }
    }

    stats.wall_time_secs = start.elapsed().as_secs_f64();
    match incumbent {
        Some((obj, x)) => Ok(MilpSolution {
            status: SolveStatus::Optimal,
            objective_value: obj,
            assignment: x,
            stats,
        }),
        None => Ok(MilpSolution {
            status: SolveStatus::Infeasible,
            objective_value: f64::INFINITY,
            assignment: Vec::new(),
            stats,
        }),
    }
}
