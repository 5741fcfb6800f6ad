//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use flab_core::embed::{baseline_table, EmbeddingSet, OovPolicy, SideReduction};
use flab_core::eval::{classify_indices, isolation_metrics, sweep_eval};
use flab_core::feasibility::{filter, select_threshold, CandidateSet};
use flab_core::labelspace::{self, PairSpace};
use flab_core::llm::fixture::{FixtureReply, FixtureServer};
use flab_core::llm::{score_label_space, ChatClient, EndpointConfig, ResponseCache, ScoreMode, ScoringOptions};
use flab_core::prompts::{self, enumerate_grid, preset, render, GuidanceSet, PromptSpec};
use flab_core::table::{FeasibilityTable, Method, Provenance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- means

fn table_with_rates(feasible_hits: usize, infeasible_hits: usize) -> (PairSpace, FeasibilityTable) {
    // 50 x 50 space: 500 seen, 1000 unseen, 1000 confusing
    let mut split = vec![0u8; 2500];
    for (i, k) in split.iter_mut().enumerate() {
        *k = match i % 5 {
            0 => 1,
            1 | 2 => 2,
            _ => 0,
        };
    }
    let space = space_from_split(50, 50, &split);
    let mut scores = vec![0.0; 2500];
    let (mut u, mut c) = (0, 0);
    for i in 0..2500 {
        if space.is_unseen_index(i) {
            scores[i] = if u < feasible_hits { 0.9 } else { 0.1 };
            u += 1;
        } else if space.is_confusing_index(i) {
            scores[i] = if c < infeasible_hits { 0.1 } else { 0.9 };
            c += 1;
        }
    }
    let mut t = FeasibilityTable::from_scores(&space, &scores, Method::FlmLogit, Provenance::Llm);
    t.normalized = true;
    (space, t)
}

fn check_means() -> Check {
    let start = Instant::now();
    let rows = [((647, 861), (75.4, 73.9)), ((517, 932), (72.5, 66.5))];
    let mut detail = Vec::new();
    for ((f, i), (arith, harm)) in rows {
        let (space, table) = table_with_rates(f, i);
        let r = isolation_metrics(&table, 0.5, &space).map_err(|e| e.to_string())?;
        let (a, h) = (r.arith_mean * 100.0, r.harm_mean * 100.0);
        // recorded means carry one decimal; 1e-9 absorbs float noise at the boundary
        ensure((a - arith).abs() <= 0.05 + 1e-9 && (h - harm).abs() <= 0.05 + 1e-9, || {
            format!("({}, {}) gave arith {a:.4} harm {h:.4}, expected {arith} / {harm}", f as f64 / 10.0, i as f64 / 10.0)
        })?;
        detail.push(format!("{a:.2}/{h:.2}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.1?}", detail.join(", ")))
}

// ---------------------------------------------------------- cardinality

fn write_metadata(dir: &Path, n_states: usize, n_objects: usize, n_seen: usize, n_unseen: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let states: Vec<String> = (0..n_states).map(|i| format!("state{i}")).collect();
    let objects: Vec<String> = (0..n_objects).map(|i| format!("object{i}")).collect();
    fs::write(dir.join(labelspace::STATES_FILE), states.join("\n") + "\n").unwrap();
    fs::write(dir.join(labelspace::OBJECTS_FILE), objects.join("\n") + "\n").unwrap();
    let mut idx: Vec<usize> = (0..n_states * n_objects).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let line = |i: usize| format!("{}\t{}\n", states[i / n_objects], objects[i % n_objects]);
    let seen: String = idx[..n_seen].iter().map(|&i| line(i)).collect();
    let unseen: String = idx[n_seen..n_seen + n_unseen].iter().map(|&i| line(i)).collect();
    fs::write(dir.join(labelspace::SEEN_FILE), seen).unwrap();
    fs::write(dir.join(labelspace::UNSEEN_FILE), unseen).unwrap();
}

fn check_cardinality() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let datasets = [
        ("mit-states", 115, 245, 1262, 700, 28175, 28175 - 1262 - 700),
        ("ut-zappos", 16, 12, 83, 33, 192, 76),
        ("c-gqa", 413, 674, 5592, 1963, 278362, 278362 - 5592 - 1963),
    ];
    let mut detail = Vec::new();
    for (k, (name, s, o, seen, unseen, all, confusing)) in datasets.into_iter().enumerate() {
        let dir = tmp.path().join(name);
        write_metadata(&dir, s, o, seen, unseen, k as u64);
        let space = PairSpace::load(&dir).map_err(|e| e.to_string())?;
        let got = (space.all_count(), space.confusing_pairs().len());
        ensure(got == (all, confusing), || format!("{name}: got {got:?}, expected ({all}, {confusing})"))?;
        detail.push(format!("{name} {all}/{confusing}"));
    }
    Ok(detail.join(", "))
}

// ---------------------------------------------------------- sweep oracle

fn check_sweep_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..200 {
        let space = random_space(&mut rng, 4, 5);
        let n_images = rng.gen_range(2..=12);
        let matrix = random_matrix(&mut rng, &space, n_images);
        let all = CandidateSet::all(&space);
        let got = sweep_eval(&matrix, &all, &space).map_err(|e| e.to_string())?;
        let want = dense_sweep(&matrix, &vec![true; space.all_count()], &space);
        ensure(
            got.seen == want.seen
                && got.unseen == want.unseen
                && got.harmonic == want.harmonic
                && (got.auc - want.auc).abs() <= 1e-9,
            || {
                format!(
                    "case {case}: sweep S/U/H/AUC {}/{}/{}/{} vs dense {}/{}/{}/{}",
                    got.seen, got.unseen, got.harmonic, got.auc, want.seen, want.unseen, want.harmonic, want.auc
                )
            },
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("200 instances in {elapsed:.1?}"))
}

// ---------------------------------------------------- monotone filtering

fn check_monotone_filtering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf117);
    let mut images_checked = 0;
    for case in 0..1000 {
        let space = random_space(&mut rng, 5, 5);
        let n_images = rng.gen_range(2..=10);
        let matrix = random_matrix(&mut rng, &space, n_images);
        let table = random_table(&mut rng, &space);
        let tau = rng.gen_range(0..=17) as f64 / 16.0;
        let all = CandidateSet::all(&space);
        let filtered = filter(&space, &table, tau).map_err(|e| e.to_string())?;
        let bias = 0.0;
        let before = classify_indices(&matrix, &all, bias, &space).map_err(|e| e.to_string())?;
        let after = classify_indices(&matrix, &filtered, bias, &space).map_err(|e| e.to_string())?;
        for (i, &t) in matrix.true_indices().iter().enumerate() {
            if filtered.contains_index(t) && before[i] == t {
                images_checked += 1;
                ensure(after[i] == t, || format!("case {case}: image {i} flipped to incorrect"))?;
            }
        }
        let oracle = CandidateSet::from_indices(&space, space.unseen_indices().iter().copied(), f64::NAN);
        let u_all = sweep_eval(&matrix, &all, &space).map_err(|e| e.to_string())?.unseen;
        let u_oracle = sweep_eval(&matrix, &oracle, &space).map_err(|e| e.to_string())?.unseen;
        ensure(u_oracle >= u_all, || format!("case {case}: oracle filtering lowered U {u_all} -> {u_oracle}"))?;
    }
    Ok(format!("1000 instances, {images_checked} surviving correct images stayed correct"))
}

// ------------------------------------------------------ prompt fidelity

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/prompts").join(name)).unwrap()
}

fn check_prompt_fidelity() -> Check {
    let p = |s: &str, o: &str| pair(s, o);
    let cases: Vec<(&str, PromptSpec, _, Option<GuidanceSet>)> = vec![
        ("canonical_dark_fire.txt", PromptSpec::canonical(), p("dark", "fire"), None),
        (
            "guided_dark_fire.txt",
            preset("guided-default").map_err(|e| e.to_string())?,
            p("dark", "fire"),
            Some(GuidanceSet::related(vec![p("dark", "lightning")])),
        ),
        (
            "qa_yes_dark_fire.txt",
            PromptSpec::qa_yes(),
            p("dark", "fire"),
            Some(GuidanceSet::related(vec![p("dark", "lightning"), p("old", "fire")])),
        ),
        (
            "qa_score_wet_cat.txt",
            PromptSpec::qa_score(),
            p("wet", "cat"),
            Some(GuidanceSet::related(vec![p("wet", "dog"), p("old", "cat")])),
        ),
    ];
    for (file, spec, query, guidance) in &cases {
        let (text, _) = render(spec, query, guidance.as_ref()).map_err(|e| e.to_string())?;
        let want = golden(file);
        ensure(text.transcript() == want, || {
            format!("{file} differs:\n{}---\n{want}", text.transcript())
        })?;
    }

    let grid = enumerate_grid();
    let distinct: std::collections::HashSet<_> = grid.iter().collect();
    ensure(grid.len() == 64 && distinct.len() == 64, || {
        format!("grid has {} specs, {} distinct", grid.len(), distinct.len())
    })?;
    // per-dataset preset choices
    let presets = [
        (
            "mit-states",
            "Answer with a single word, yes or no, followed by an explanation.",
            "The following list consists of words that fit together.",
            "Does \"{s} {o}\" fit into the list above?",
        ),
        (
            "ut-zappos",
            "Answer with a single word, yes or no.",
            "The given list consists of word combinations that make sense.",
            "Considering the list above, does \"{s} {o}\" fit into the list?",
        ),
        (
            "cgqa-clip",
            "Answer with a single word, yes or no, followed by an explanation.",
            "The given list consists of word combinations that make sense.",
            "Does \"{s} {o}\" align with the contents of the list provided above?",
        ),
        (
            "cgqa-tuned",
            "Answer with a single word, yes or no, followed by an explanation.",
            "The given list comprises word combinations that make sense.",
            "Does \"{s} {o}\" align with the contents of the list provided above?",
        ),
    ];
    for (name, instruction, guidance, query) in presets {
        let spec = preset(name).map_err(|e| e.to_string())?;
        ensure(
            spec.instruction == instruction && spec.guidance == guidance && spec.query == query,
            || format!("preset {name} is {spec:?}"),
        )?;
        ensure(grid.contains(&spec), || format!("preset {name} missing from grid"))?;
        ensure(spec.persona == prompts::PERSONA, || format!("preset {name} persona"))?;
    }
    Ok(format!("{} goldens, 64-spec grid, presets verbatim", cases.len()))
}

// ------------------------------------------------------ scoring + cache

fn ut_shaped_space() -> PairSpace {
    let mut idx: Vec<usize> = (0..192).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(83));
    let mut split = vec![0u8; 192];
    for &i in &idx[..83] {
        split[i] = 1;
    }
    for &i in &idx[83..116] {
        split[i] = 2;
    }
    space_from_split(16, 12, &split)
}

fn fixture_server() -> FixtureServer {
    FixtureServer::start(|req| {
        let Some((s, o)) = req.query_pair() else {
            return FixtureReply::status(400);
        };
        let si: i64 = s.trim_start_matches('s').parse().unwrap_or(0);
        let oi: i64 = o.trim_start_matches('o').parse().unwrap_or(0);
        let yes = -(((si * 7 + oi * 3) % 11) as f64) / 4.0 - 0.01;
        FixtureReply::chat("Yes", &[("Yes", yes), ("No", -1.5)])
    })
    .unwrap()
}

fn run_scoring(
    space: &PairSpace,
    server: &FixtureServer,
    cache: &Path,
    parallelism: usize,
) -> Result<(FeasibilityTable, u64), String> {
    let mut config = EndpointConfig::new(server.url(), "fixture-model");
    config.parallelism = parallelism;
    let client = ChatClient::new(config, Some(ResponseCache::open(cache).map_err(|e| e.to_string())?));
    let options = ScoringOptions::new(preset("ut-zappos").map_err(|e| e.to_string())?, ScoreMode::Logit);
    let report = score_label_space(space, &options, &client).map_err(|e| e.to_string())?;
    Ok((report.table, report.stats.network_calls))
}

fn check_scoring() -> Check {
    let space = ut_shaped_space();
    ensure(space.all_count() == 192 && space.seen_count() == 83, || "bad toy".into())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;

    let server = fixture_server();
    let (cold, calls) = run_scoring(&space, &server, &tmp.path().join("a"), 8)?;
    ensure(server.calls() == 109 && calls == 109, || {
        format!("cold run: server saw {}, client made {calls}", server.calls())
    })?;
    let (warm, warm_calls) = run_scoring(&space, &server, &tmp.path().join("a"), 8)?;
    ensure(server.calls() == 109 && warm_calls == 0, || {
        format!("warm run issued {} requests", server.calls() - 109)
    })?;
    ensure(warm == cold, || "warm table differs from cold".into())?;

    let other = fixture_server();
    let (serial, _) = run_scoring(&space, &other, &tmp.path().join("b"), 1)?;
    ensure(serial == cold, || "parallelism 1 and 8 disagree".into())?;
    ensure(other.max_in_flight() <= 1, || format!("parallelism 1 had {} in flight", other.max_in_flight()))?;
    Ok(format!("cold 109 calls, warm 0, bit-identical; parallelism 1 == 8 (peak {} in flight at 8)", server.max_in_flight()))
}

// ------------------------------------------------------------ threshold

fn check_threshold() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a0);
    for case in 0..100 {
        let space = random_space(&mut rng, 3, 4);
        let matrix = random_val_matrix(&mut rng, &space, 8);
        let table = random_table(&mut rng, &space);
        if table.entries().iter().all(|e| !e.score.is_finite()) {
            continue;
        }
        let got = select_threshold(&table, &space, &matrix).map_err(|e| e.to_string())?;
        let taus = oracle_thresholds(&table);
        let accs: Vec<f64> = taus.iter().map(|&t| oracle_val_accuracy(&table, &space, &matrix, t)).collect();
        let best = accs.iter().cloned().fold(f64::MIN, f64::max);
        let want_tau = taus[accs.iter().position(|&a| a == best).unwrap()];
        ensure(got.tau == want_tau && got.best_accuracy() == best, || {
            format!("case {case}: tau {} acc {} vs oracle tau {want_tau} acc {best}", got.tau, got.best_accuracy())
        })?;
        // nothing outside the candidate grid does better
        for k in -2..=34 {
            let t = k as f64 / 32.0;
            let a = oracle_val_accuracy(&table, &space, &matrix, t);
            ensure(a <= best, || format!("case {case}: tau {t} reaches {a} > {best}"))?;
        }
    }

    // oracle table: unseen pairs at 1, confusing at 0, with confusing distractors
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    for case in 0..20 {
        let space = loop {
            let s = random_space(&mut rng, 4, 4);
            if !s.confusing_indices().is_empty() {
                break s;
            }
        };
        let scores: Vec<f64> = (0..space.all_count())
            .map(|i| if space.is_unseen_index(i) { 1.0 } else { 0.0 })
            .collect();
        let mut table = FeasibilityTable::from_scores(&space, &scores, Method::FlmLogit, Provenance::Llm);
        table.normalized = true;
        let unseen = space.unseen_indices().to_vec();
        let confusing = space.confusing_indices();
        let n = space.all_count();
        let mut images = Vec::new();
        let mut m = Vec::new();
        for k in 0..6 {
            let t = unseen[k % unseen.len()];
            images.push(flab_core::eval::ImageRecord {
                image_id: format!("v{k}"),
                true_pair: space.pair_at(t),
            });
            let mut row: Vec<f32> = (0..n).map(|_| rng.gen_range(0..16) as f32 / 64.0).collect();
            row[t] = 0.5;
            row[confusing[k % confusing.len()]] = 0.75;
            m.extend(row);
        }
        let matrix = flab_core::eval::ScoreMatrix::new(space.enumerate_all(), images, m).map_err(|e| e.to_string())?;
        let got = select_threshold(&table, &space, &matrix).map_err(|e| e.to_string())?;
        let kept = filter(&space, &table, got.tau).map_err(|e| e.to_string())?;
        let mut want: Vec<usize> = space.seen_indices().iter().chain(space.unseen_indices()).copied().collect();
        want.sort_unstable();
        ensure(kept.indices() == want.as_slice(), || {
            format!("oracle case {case}: tau {} keeps {:?}, expected {want:?}", got.tau, kept.indices())
        })?;
    }
    Ok("100 toys match exhaustive scan; oracle table filters to seen + unseen".into())
}

// ------------------------------------------------------------ baselines

fn check_baselines() -> Check {
    // seen: (s0,o0), (s0,o2), (s1,o1); unseen: (s1,o2), (s2,o0)
    let split = [1, 0, 1, 0, 1, 2, 2, 0, 0];
    let space = space_from_split(3, 3, &split);
    let vectors: [(&str, [f64; 2]); 6] = [
        ("s0", [1.0, 0.0]),
        ("s1", [0.6, 0.8]),
        ("s2", [-1.0, 0.5]),
        ("o0", [0.0, 2.0]),
        ("o1", [3.0, 4.0]),
        ("o2", [1.0, -1.0]),
    ];
    let mut emb = EmbeddingSet::new(2, OovPolicy::Error);
    for (t, v) in &vectors {
        emb.insert(*t, v.to_vec()).map_err(|e| e.to_string())?;
    }
    let vec_of = |t: &str| vectors.iter().find(|(k, _)| *k == t).unwrap().1;
    let cos = |u: [f64; 2], v: [f64; 2]| {
        let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    };
    let table = baseline_table(&space, &emb, Method::Glove, SideReduction::Max).map_err(|e| e.to_string())?;
    let seen = space.seen();
    for i in 0..space.all_count() {
        let q = space.pair_at(i);
        let got = table.get(&q).unwrap();
        if space.is_seen_index(i) {
            ensure(got == f64::INFINITY, || format!("seen {q} scored {got}"))?;
            continue;
        }
        let (mut rho_obj, mut any_obj) = (f64::MIN, false);
        let (mut rho_state, mut any_state) = (f64::MIN, false);
        for p in &seen {
            if p.object == q.object {
                rho_obj = rho_obj.max(cos(vec_of(&q.state), vec_of(&p.state)));
                any_obj = true;
            }
            if p.state == q.state {
                rho_state = rho_state.max(cos(vec_of(&q.object), vec_of(&p.object)));
                any_state = true;
            }
        }
        let want = ((if any_obj { rho_obj } else { 0.0 }) + (if any_state { rho_state } else { 0.0 })) / 2.0;
        ensure((got - want).abs() <= 1e-12, || format!("{q}: {got} vs oracle {want}"))?;
    }

    // scale invariance on a random 6 x 7 space with 5-d vectors
    let mut rng = ChaCha8Rng::seed_from_u64(0xe3b);
    let space = random_space(&mut rng, 6, 7);
    let mut emb = EmbeddingSet::new(5, OovPolicy::Error);
    for t in space.states().iter().chain(space.objects()) {
        emb.insert(t.clone(), (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .map_err(|e| e.to_string())?;
    }
    let base = baseline_table(&space, &emb, Method::Conceptnet, SideReduction::Max).map_err(|e| e.to_string())?;
    for c in [0.125, 2.0, 1024.0] {
        let t = baseline_table(&space, &emb.scaled(c), Method::Conceptnet, SideReduction::Max)
            .map_err(|e| e.to_string())?;
        ensure(t == base, || format!("scaling by {c} changed the table"))?;
    }
    let mut worst: f64 = 0.0;
    for c in [0.3, 3.0, 7.77e3] {
        let t = baseline_table(&space, &emb.scaled(c), Method::Conceptnet, SideReduction::Max)
            .map_err(|e| e.to_string())?;
        for (a, b) in t.entries().iter().zip(base.entries()) {
            if a.score.is_finite() {
                worst = worst.max((a.score - b.score).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("non-power-of-two scaling moved a score by {worst:e}"))?;
    Ok(format!("3x3 toy matches oracle; power-of-two scales bit-identical, others within {worst:.0e}"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 8] = [
        ("isolation mean identities", check_means),
        ("cardinality replay", check_cardinality),
        ("sweep oracle equivalence", check_sweep_oracle),
        ("filtering monotone-correctness", check_monotone_filtering),
        ("prompt fidelity", check_prompt_fidelity),
        ("scoring determinism and caching", check_scoring),
        ("threshold calibration", check_threshold),
        ("baseline properties", check_baselines),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS [{}] {name}: {detail}", k + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", k + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL [{}] {name}: panicked", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
