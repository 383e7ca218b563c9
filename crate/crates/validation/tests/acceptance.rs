//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::Instant;

use loopperc::gff::{GffSampler, HalfWorkspace};
use loopperc::graph::{self, Edge, LatticeBox, MetricGraph, RegularTree, VertexSet};
use loopperc::loopsoup::{occupation_marginal_test, EliminationOrder, SoupPlan, SoupVisitor, SubdivisionSampler};
use loopperc::mc::{
    exceeds, fn_curve, ode_inequality_scan, run_replicas, run_replicas_with, star_cover_estimate, truncation_diagnostic, wilson_interval, Bernoulli,
    RunSpec, Samples, SeedSequence,
};
use loopperc::noise::{fkg_battery, russo_check, Event, PivotalMode, RussoParams};
use loopperc::potential::{cap_growth_diagnostic, capacity, two_point_exact, GreenTable};
use loopperc::stats::{gamma_cdf, ks_one_sample, ks_two_sample, Z_95};
use rand::seq::IndexedRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok " } else { "BAD" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("    {line}"));
    }
}

fn z(estimate: f64, target: f64, n: u64) -> f64 {
    (estimate - target) / (target * (1.0 - target) / n as f64).sqrt()
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::new();
    let g = graph::pair(1.0, 1.0).unwrap();
    let sampler = GffSampler::new(&g).unwrap();
    let n = 1_000_000;
    let t: Bernoulli = run_replicas_with(&RunSpec::new("acc1/pair", n, 1), || HalfWorkspace::new(&g), |ws, rng, acc: &mut Bernoulli| {
        ws.sample(&g, &sampler, rng);
        acc.record(ws.dsu.same(0, 1));
    })
    .unwrap();
    let exact = two_point_exact(&GreenTable::compute(&g, None).unwrap(), 0, 1).unwrap();
    let zz = z(t.mean(), 1.0 / 3.0, n);
    out.check((exact - 1.0 / 3.0).abs() < 1e-12 && zz.abs() < 4.0, format!("pair: P[a<->b] = {:.5} vs 1/3, z = {zz:.2}, N = {n}", t.mean()));

    let g = LatticeBox::new(3, 3).build().unwrap();
    let table = GreenTable::compute(&g, None).unwrap();
    let mut rng = SeedSequence::new(1, "acc1/pairs").replica(0);
    let ids: Vec<usize> = (0..g.vertex_count()).collect();
    let pairs: Vec<(usize, usize)> = (0..5)
        .map(|_| loop {
            let a = *ids.choose(&mut rng).unwrap();
            let b = *ids.choose(&mut rng).unwrap();
            if a != b {
                break (a, b);
            }
        })
        .collect();
    let sampler = GffSampler::new(&g).unwrap();
    let n = 100_000;
    let t: Vec<Bernoulli> = run_replicas_with(&RunSpec::new("acc1/box", n, 1), || HalfWorkspace::new(&g), |ws, rng, acc: &mut Vec<Bernoulli>| {
        ws.sample(&g, &sampler, rng);
        if acc.is_empty() {
            acc.resize(pairs.len(), Bernoulli::default());
        }
        for (c, &(a, b)) in acc.iter_mut().zip(&pairs) {
            c.record(ws.dsu.same(a, b));
        }
    })
    .unwrap();
    for (c, &(a, b)) in t.iter().zip(&pairs) {
        let exact = two_point_exact(&table, a, b).unwrap();
        let zz = z(c.mean(), exact, n);
        out.check(zz.abs() < 4.0, format!("Z3 box r3 pair ({a},{b}): {:.5} vs {exact:.5}, z = {zz:.2}", c.mean()));
    }
    out
}

fn random_graph(rng: &mut impl Rng) -> MetricGraph {
    let n = rng.random_range(2..=8);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.45) {
                edges.push(Edge { u, v, weight: rng.random_range(0.2..3.0) });
            }
        }
    }
    let killing: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    MetricGraph::new(n, edges, killing).unwrap()
}

fn criterion_2() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = SeedSequence::new(2, "acc2").replica(0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = random_graph(&mut rng);
        let base = GreenTable::compute(&g, None).unwrap();
        for m in [2, 4, 8] {
            let fine = GreenTable::compute(&graph::subdivide(&g, m).unwrap(), None).unwrap();
            for x in 0..g.vertex_count() {
                for y in 0..g.vertex_count() {
                    worst = worst.max((base.get(x, y).unwrap() - fine.get(x, y).unwrap()).abs());
                }
            }
        }
    }
    out.check(worst <= 1e-9, format!("20 random graphs, m in {{2,4,8}}: max |G - G_m| = {worst:.2e}"));
    out
}

fn criterion_3() -> Outcome {
    let mut out = Outcome::new();
    let g = graph::pair(1.0, 1.0).unwrap();
    let t = GreenTable::compute(&g, None).unwrap();
    let a = capacity(&t, &VertexSet::new([0])).unwrap().capacity;
    let ab = capacity(&t, &VertexSet::new([0, 1])).unwrap().capacity;
    out.check((a - 1.5).abs() <= 1e-10 && (ab - 2.0).abs() <= 1e-10, format!("cap({{a}}) = {a:.12}, cap({{a,b}}) = {ab:.12}"));
    let g = LatticeBox::new(3, 4).build().unwrap();
    let t = GreenTable::compute(&g, None).unwrap();
    let coords = g.coords().unwrap();
    let axis: Vec<usize> = (-4..=4).map(|i| coords.iter().position(|c| c[..] == [i, 0, 0]).unwrap()).collect();
    let sets: Vec<VertexSet> = (1..=axis.len()).map(|k| VertexSet::new(axis[..k].iter().copied())).collect();
    let growth = cap_growth_diagnostic(&g, &t, &sets).unwrap();
    let caps: Vec<String> = growth.rows.iter().map(|r| format!("{:.4}", r.capacity)).collect();
    out.check(growth.is_monotone(), format!("Z3 box r4, nested axis segments: {}", caps.join(" ")));
    out
}

#[derive(Default)]
struct Occupation {
    x: usize,
    value: f64,
}

impl SoupVisitor for Occupation {
    fn hold(&mut self, v: usize, t: f64) {
        if v == self.x {
            self.value += t;
        }
    }
    fn trivial(&mut self, v: usize, t: f64) {
        if v == self.x {
            self.value += t;
        }
    }
}

fn criterion_4() -> Outcome {
    let mut out = Outcome::new();
    let n = 100_000;
    for (name, g) in [("pair", graph::pair(1.0, 1.0).unwrap()), ("Z3 box r2", LatticeBox::new(3, 2).build().unwrap())] {
        let x = g.root();
        let table = GreenTable::compute(&g, None).unwrap();
        let plan = SoupPlan::new(&g, &EliminationOrder::default()).unwrap();
        for alpha in [0.25, 0.5, 1.0] {
            let occ: Samples = run_replicas(&RunSpec::new(format!("acc4/{name}/{alpha}"), n, 4), |rng, acc: &mut Samples| {
                let mut o = Occupation { x, value: 0.0 };
                plan.visit(alpha, true, rng, &mut o).unwrap();
                acc.0.push(o.value);
            })
            .unwrap();
            let r = occupation_marginal_test(&occ.0, x, alpha, &table).unwrap();
            out.check(r.p_value > 0.01, format!("{name}, alpha = {alpha}: KS vs Gamma(alpha, G(x,x)) D = {:.4}, p = {:.3}", r.statistic, r.p_value));
            if alpha == 0.5 {
                let sampler = GffSampler::new(&g).unwrap();
                let phi: Samples = run_replicas(&RunSpec::new(format!("acc4/{name}/gff"), n, 4), |rng, acc: &mut Samples| {
                    let v = sampler.sample(rng).values[x];
                    acc.0.push(v * v / 2.0);
                })
                .unwrap();
                let r2 = ks_two_sample(&occ.0, &phi.0).unwrap();
                out.check(r2.p_value > 0.01, format!("{name}, alpha = 1/2: two-sample KS vs phi^2/2, D = {:.4}, p = {:.3}", r2.statistic, r2.p_value));
                let gxx = table.get(x, x).unwrap();
                let r3 = ks_one_sample(&phi.0, |t| gamma_cdf(0.5, gxx, t)).unwrap();
                out.note(format!("{name}: phi^2/2 vs Gamma(1/2, G(x,x)) p = {:.3}", r3.p_value));
            }
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut out = Outcome::new();
    let g = graph::pair(1.0, 1.0).unwrap();
    let n = 100_000;
    let mut est: Vec<(usize, Bernoulli)> = Vec::new();
    for m in [1, 2, 4, 8, 16, 32] {
        let s = SubdivisionSampler::new(&g, m).unwrap();
        let plan = s.plan(&EliminationOrder::default()).unwrap();
        let t: Bernoulli = run_replicas_with(&RunSpec::new(format!("acc5/{m}"), n, 5), || s.workspace(&g), |ws, rng, acc: &mut Bernoulli| {
            s.sample_into(&g, &plan, 0.5, rng, ws).unwrap();
            acc.record(ws.dsu.same(0, 1));
        })
        .unwrap();
        out.note(format!("m = {m:2}: P[a<->b] = {:.4} +- {:.4}", t.mean(), (t.mean() * (1.0 - t.mean()) / n as f64).sqrt()));
        est.push((m, t));
    }
    let se = |t: &Bernoulli| t.mean() * (1.0 - t.mean()) / t.trials as f64;
    let trend = est.windows(2).all(|w| w[1].1.mean() - w[0].1.mean() > -3.0 * (se(&w[0].1) + se(&w[1].1)).sqrt());
    out.check(trend, "estimates nondecreasing in m (no drop beyond 3 joint sigma)".into());
    let last = est.last().unwrap().1.mean();
    out.check((last - 1.0 / 3.0).abs() <= 0.03, format!("m = 32: |{last:.4} - 1/3| = {:.4} <= 0.03", (last - 1.0 / 3.0).abs()));
    out
}

fn criterion_6() -> Outcome {
    let mut out = Outcome::new();
    let g = graph::path(3, 1.0, 1.0).unwrap();
    let q = two_point_exact(&GreenTable::compute(&g, None).unwrap(), 0, 2).unwrap();
    let (eps, delta) = (0.1, 0.01);
    let p = RussoParams { x0: 0, target: VertexSet::new([2]), epsilon: eps, delta, mode: PivotalMode::Upper };
    let r = russo_check(&g, &p, &RunSpec::new("acc6/path", 1_000_000, 6)).unwrap();
    // P_eps[A] is affine in eps, so the finite difference has no curvature
    let zd = r.difference / r.difference_se;
    out.check(zd.abs() < 4.0, format!("3-vertex path: LHS/delta = {:.4}, RHS/delta = {:.4}, closed form 1-q = {:.4}, z = {zd:.2}", r.lhs / delta, r.rhs / delta, 1.0 - q));
    let sd = (1.0 - q) * (1.0 - eps) * delta;
    let zl = (r.lhs - delta * (1.0 - q)) / (sd * (1.0 - sd) / r.replicas as f64).sqrt();
    out.check(zl.abs() < 4.0, format!("3-vertex path: LHS vs closed form, z = {zl:.2}"));

    let g = LatticeBox::new(2, 2).build().unwrap();
    let target = g.sphere(g.root(), 2).unwrap();
    let p = RussoParams { x0: g.root(), target, epsilon: eps, delta, mode: PivotalMode::Upper };
    let r = russo_check(&g, &p, &RunSpec::new("acc6/box", 1_000_000, 6)).unwrap();
    out.check(
        r.consistent,
        format!(
            "Z2 box r2, root <-> sphere(2): LHS = {:.5}, RHS = {:.5}, |diff| = {:.5}, allowance 4 sigma + 5 delta^2 = {:.5}",
            r.lhs,
            r.rhs,
            r.difference.abs(),
            r.allowance
        ),
    );
    out
}

fn fkg_pairs(g: &MetricGraph, picks: &[usize]) -> Vec<(Event, Event)> {
    let x0 = g.root();
    let s2 = g.sphere(x0, 2).unwrap();
    let v = |i: usize| picks[i];
    vec![
        (Event::Connected { a: x0, b: v(0) }, Event::Connected { a: x0, b: v(1) }),
        (Event::Connected { a: x0, b: v(0) }, Event::Connected { a: v(1), b: v(2) }),
        (Event::Connected { a: v(0), b: v(1) }, Event::Connected { a: v(2), b: v(3) }),
        (Event::Connected { a: x0, b: v(3) }, Event::Reaches { from: x0, target: s2.clone() }),
        (Event::Reaches { from: x0, target: s2.clone() }, Event::Reaches { from: v(2), target: s2.clone() }),
        (Event::NoiseCoversStar { x: x0 }, Event::Connected { a: x0, b: v(1) }),
        (Event::NoiseCoversStar { x: v(0) }, Event::NoiseCoversStar { x: v(1) }),
        (Event::NoiseCoversStar { x: v(2) }, Event::Reaches { from: v(3), target: s2.clone() }),
        (Event::Connected { a: v(1), b: v(3) }, Event::Connected { a: v(1), b: v(3) }),
        (Event::Connected { a: v(0), b: v(2) }, Event::Reaches { from: v(1), target: s2 }),
        (Event::Connected { a: x0, b: v(2) }, Event::Certain),
    ]
}

fn criterion_7() -> Outcome {
    let mut out = Outcome::new();
    let families = [("Z2 box r2", LatticeBox::new(2, 2).build().unwrap()), ("3-regular tree depth 3", RegularTree::new(3, 3).build().unwrap())];
    for (name, g) in families {
        let x0 = g.root();
        let d1 = g.sphere(x0, 1).unwrap();
        let d2 = g.sphere(x0, 2).unwrap();
        let picks = [d1.as_slice()[0], d1.as_slice()[1], d2.as_slice()[0], d2.as_slice()[d2.len() - 1]];
        let pairs = fkg_pairs(&g, &picks);
        let reports = fkg_battery(&g, &pairs, 0.05, &RunSpec::new(format!("acc7/{name}"), 1_000_000, 7)).unwrap();
        let worst = reports.iter().filter(|r| r.covariance_se > 0.0).map(|r| r.covariance / r.covariance_se).fold(f64::INFINITY, f64::min);
        let violations = reports.iter().filter(|r| r.violation).count();
        out.check(violations == 0, format!("{name}: {} event pairs, N = 1e6, violations = {violations}, min cov/sigma = {worst:.2}", reports.len()));
    }
    out
}

fn criterion_8() -> Outcome {
    let mut out = Outcome::new();
    let g = LatticeBox::new(3, 6).build().unwrap();
    let star = star_cover_estimate(&g, g.root(), 0.5, 60, &RunSpec::new("acc8/star", 20_000, 8)).unwrap();
    out.note(format!(
        "P[O(root)] = {:.3e} (per-loop cover {:.3e} +- {:.3e}, tail bound {:.1e}); C = {:.3e}",
        star.probability, star.cover_per_loop, star.cover_per_loop_se, star.tail_bound, star.constant
    ));
    let scan = ode_inequality_scan(&g, g.root(), 3, &[0.0, 0.05, 0.1, 0.15], 0.01, star.constant, &RunSpec::new("acc8/ode", 100_000, 8)).unwrap();
    for r in &scan.rows {
        out.check(
            r.slope_positive,
            format!("eps = {:.2}: f_3 = {:.4}, slope = {:.3} +- {:.3}, witness c = {:.3e}", r.epsilon, r.f.estimate, r.slope, r.slope_se, r.witness),
        );
    }
    out.check(scan.witness_spread < 3.0, format!("witness spread max|c|/min|c| = {:.3e} < 3", scan.witness_spread));
    out
}

fn criterion_9() -> Outcome {
    let mut out = Outcome::new();
    let g = LatticeBox::new(3, 8).build().unwrap();
    let n = 20_000;
    let c = fn_curve(&g, g.root(), &[2, 4, 6], &[0.0, 0.2], &RunSpec::new("acc9", n, 9)).unwrap();
    for i in 0..2 {
        let row: Vec<String> = (0..3).map(|j| format!("f_{}={:.4}+-{:.4}", c.radii[j], c.report(i, j).estimate, c.report(i, j).std_error)).collect();
        out.note(format!("eps = {}: {}", c.epsilons[i], row.join(" ")));
    }
    let f = |i, j| c.report(i, j);
    out.check(exceeds(&f(0, 0), &f(0, 1), 3.0) && exceeds(&f(0, 1), &f(0, 2), 3.0), "f_n(0) strictly decreasing over n = 2, 4, 6 at 3 sigma".into());
    // reaching sphere 6 implies reaching sphere 2, so the ratio is a conditional frequency
    let ratio = |i| {
        let (a, b) = (c.cell(i, 2), c.cell(i, 0));
        let r = a.successes as f64 / b.successes as f64;
        (r, (r * (1.0 - r) / b.successes as f64).sqrt())
    };
    let (r0, s0) = ratio(0);
    let (r2, s2) = ratio(1);
    out.check(
        r2 - r0 > 3.0 * (s0 * s0 + s2 * s2).sqrt(),
        format!("f_6/f_2: {r2:.4} +- {s2:.4} at eps = 0.2 vs {r0:.4} +- {s0:.4} at eps = 0"),
    );
    let t = truncation_diagnostic(&LatticeBox::new(3, 3), 2, 0.0, &RunSpec::new("acc9/truncation", 20_000, 9)).unwrap();
    out.note(format!(
        "truncation: f_2(0) = {:.4} at M = {}, {:.4} at M = {}, z = {:.2}",
        t.at_radius.estimate, t.radius, t.at_doubled.estimate, t.doubled_radius, t.z
    ));
    out
}

fn criterion_10() -> Outcome {
    let mut out = Outcome::new();
    let g = LatticeBox::new(2, 3).build().unwrap();
    let run = |threads| {
        let spec = RunSpec::new("acc10", 3000, 10).with_threads(threads);
        serde_json::to_vec(&fn_curve(&g, g.root(), &[1, 2, 3], &[0.0, 0.1], &spec).unwrap()).unwrap()
    };
    let base = run(Some(1));
    let same = [Some(2), Some(4), None].into_iter().all(|t| run(t) == base);
    out.check(same, "fn_curve JSON byte-identical for 1, 2, 4 and default threads".into());

    let (p, n) = (0.3, 1000u64);
    let mut covered = 0;
    for trial in 0..200u64 {
        let t: Bernoulli = run_replicas(&RunSpec::new("acc10/calibration", n, trial), |rng, acc: &mut Bernoulli| acc.record(rng.random::<f64>() < p)).unwrap();
        let (lo, hi) = wilson_interval(t.successes, t.trials, Z_95);
        covered += (lo <= p && p <= hi) as u32;
    }
    out.check((181..=199).contains(&covered), format!("Wilson 95% coverage: {covered}/200 (accepted 181..=199)"));
    out
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("exact two-point reproduction", criterion_1),
        ("Green function subdivision invariance", criterion_2),
        ("capacity exactness and monotonicity", criterion_3),
        ("occupation law", criterion_4),
        ("subdivision convergence at 1/2", criterion_5),
        ("Russo formula", criterion_6),
        ("FKG battery", criterion_7),
        ("ODE inequality scan", criterion_8),
        ("threshold behaviour", criterion_9),
        ("determinism and calibration", criterion_10),
    ];
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut summary: Vec<(usize, bool)> = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        for d in &o.details {
            println!("      {d}");
        }
        println!("{} [{id}] {name} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        summary.push((id, o.pass));
    }
    let failed: Vec<String> = summary.iter().filter(|(_, p)| !p).map(|(i, _)| i.to_string()).collect();
    println!("\nacceptance: {} passed, {} failed", summary.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
