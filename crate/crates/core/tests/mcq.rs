use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use kgmcq_core::llm::prompts::TASK_VALIDATE;
use kgmcq_core::llm::{ChatPrompt, LlmError, StubBackend};
use kgmcq_core::mcq::{
    generate_all, generate_mcq_with_retry, generate_stem, mentions_name, read_mcqs, sample_subgraph,
    select_distractors, select_keys, validate_mcq, write_mcqs, AbortReason, GenerationConfig, KindWeights, McqError,
};
use kgmcq_core::{AssociatedSubgraph, EntityNode, KnowledgeGraph, Mcq, RelationEdge, SubgraphKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(g: &mut KnowledgeGraph, s: (&str, &str), p: &str, o: (&str, &str)) {
    g.add_triple(EntityNode::new(s.0, s.1), p, EntityNode::new(o.0, o.1)).unwrap();
}

fn micro_graph() -> KnowledgeGraph {
    KnowledgeGraph::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/golden/micro_graph.jsonl")).unwrap()
}

fn edge(s: &str, p: &str, d: &str) -> RelationEdge {
    RelationEdge { src: s.into(), predicate: p.into(), dst: d.into() }
}

fn triple_sub(key: &str, e: RelationEdge) -> AssociatedSubgraph {
    AssociatedSubgraph { kind: SubgraphKind::Triple, key: key.into(), main: vec![e], extra: None }
}

#[test]
fn key_selection() {
    let g = micro_graph();
    assert_eq!(select_keys(&g, 1), g.top_k_by_centrality(1));
    assert_eq!(select_keys(&g, 10_000).len(), g.node_count());
    assert_eq!(select_keys(&g, 40).len(), 40);
    let cfg = GenerationConfig::default();
    assert_eq!(cfg.keys * cfg.per_key, 160);
}

#[test]
fn forced_kinds_and_chain_fixture() {
    let mut g = KnowledgeGraph::new();
    t(&mut g, ("A", "T"), "r1", ("B", "T"));
    t(&mut g, ("B", "T"), "r2", ("C", "T"));
    t(&mut g, ("A", "T"), "r3", ("D", "T"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let only_triple = KindWeights::only(SubgraphKind::Triple, false);
    for _ in 0..20 {
        let s = sample_subgraph(&g, "a", &mut rng, &only_triple).unwrap();
        assert_eq!((s.kind, s.main.len(), s.extra.is_none()), (SubgraphKind::Triple, 1, true));
    }
    let quint_extra = KindWeights::only(SubgraphKind::Quintuple, true);
    for _ in 0..20 {
        let s = sample_subgraph(&g, "a", &mut rng, &quint_extra).unwrap();
        assert_eq!(s.main, vec![edge("a", "r1", "b"), edge("b", "r2", "c")]);
        assert_eq!(s.extra, Some(edge("a", "r3", "d")));
        s.validate().unwrap();
    }
    // e has no 2-path and a single edge: quintuple falls back to triple, extra to none
    t(&mut g, ("E", "T"), "r4", ("F", "T"));
    let s = sample_subgraph(&g, "e", &mut rng, &quint_extra).unwrap();
    assert_eq!((s.kind, s.extra), (SubgraphKind::Triple, None));

    g.upsert_node(EntityNode::new("Lonely", "T")).unwrap();
    assert!(matches!(
        sample_subgraph(&g, "lonely", &mut rng, &KindWeights::default()),
        Err(McqError::Graph(kgmcq_core::GraphError::NoCandidate(_)))
    ));
}

#[test]
fn stub_stem_for_capital_fact() {
    let mut g = KnowledgeGraph::new();
    t(&mut g, ("Paris", "City"), "capital_of", ("France", "Country"));
    let sub = triple_sub("paris", edge("paris", "capital_of", "france"));
    let stem = generate_stem(&g, &sub, &StubBackend::synthesizing(), 2).unwrap();
    assert!(stem.contains("France"), "{stem}");
    assert!(stem.to_lowercase().contains("capital"), "{stem}");
    assert!(!mentions_name(&stem, "Paris"), "{stem}");
}

#[test]
fn quintuple_stem_uses_both_relations() {
    let mut g = KnowledgeGraph::new();
    t(&mut g, ("Seine", "River"), "flows_through", ("Paris", "City"));
    t(&mut g, ("Paris", "City"), "capital_of", ("France", "Country"));
    let sub = AssociatedSubgraph {
        kind: SubgraphKind::Quintuple,
        key: "seine".into(),
        main: vec![edge("seine", "flows_through", "paris"), edge("paris", "capital_of", "france")],
        extra: None,
    };
    let stem = generate_stem(&g, &sub, &StubBackend::synthesizing(), 0).unwrap();
    let lower = stem.to_lowercase();
    assert!(lower.contains("flows through") && lower.contains("capital"), "{stem}");
    assert!(stem.contains("France") && !mentions_name(&stem, "Seine"), "{stem}");
}

#[test]
fn leaking_stem_is_regenerated_then_rejected() {
    let mut g = KnowledgeGraph::new();
    t(&mut g, ("Paris", "City"), "capital_of", ("France", "Country"));
    let sub = triple_sub("paris", edge("paris", "capital_of", "france"));
    let calls = AtomicUsize::new(0);
    let first_leaks = |p: &ChatPrompt| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(if p.user.contains("REMINDER:") { "Which city is the capital of France?" } else { "Is Paris the capital?" }
            .to_string())
    };
    assert_eq!(generate_stem(&g, &sub, &first_leaks, 2).unwrap(), "Which city is the capital of France?");
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    let always = |_: &ChatPrompt| Ok("Paris, capital of France?".to_string());
    assert!(matches!(generate_stem(&g, &sub, &always, 2), Err(McqError::KeyLeak { attempts: 3 })));
    // whole-word matching: `Po` is not leaked by `Portugal`
    assert!(!mentions_name("Which river borders Portugal?", "Po"));
    assert!(mentions_name("Does the Po flow east?", "Po"));
}

fn depth_fixture() -> KnowledgeGraph {
    // key k with same-type nodes a@1, b@2, c@3 along a chain through hub nodes
    let mut g = KnowledgeGraph::new();
    t(&mut g, ("K", "P"), "r", ("X", "Q"));
    t(&mut g, ("A", "P"), "r", ("K", "P"));
    t(&mut g, ("A", "P"), "r", ("B", "P"));
    t(&mut g, ("B", "P"), "r", ("C", "P"));
    g
}

#[test]
fn one_distractor_per_level() {
    let g = depth_fixture();
    let sub = triple_sub("k", edge("k", "r", "x"));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let picked = select_distractors(&g, &sub, 5, &mut rng).unwrap();
    assert_eq!(picked, vec![("a".into(), 1), ("b".into(), 2), ("c".into(), 3)]);
}

#[test]
fn fill_from_single_level_and_scarcity_abort() {
    let mut g = KnowledgeGraph::new();
    for leaf in ["A", "B", "C", "D"] {
        t(&mut g, ("K", "P"), "knows", (leaf, "P"));
    }
    t(&mut g, ("K", "P"), "in", ("Z", "Q"));
    let sub = triple_sub("k", edge("k", "in", "z"));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let picked = select_distractors(&g, &sub, 5, &mut rng).unwrap();
    assert_eq!(picked.len(), 3);
    assert!(picked.iter().all(|(_, d)| *d == 1));

    let mut small = KnowledgeGraph::new();
    t(&mut small, ("K", "P"), "knows", ("A", "P"));
    t(&mut small, ("K", "P"), "knows", ("B", "P"));
    t(&mut small, ("K", "P"), "in", ("Z", "Q"));
    let sub = triple_sub("k", edge("k", "in", "z"));
    assert!(matches!(
        select_distractors(&small, &sub, 5, &mut rng),
        Err(McqError::InsufficientDistractors { found: 2 })
    ));
}

fn random_graph(edges: &[(u8, u8)], types: &[u8]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for &(a, b) in edges {
        if a == b {
            continue;
        }
        let ta = format!("T{}", types[a as usize % types.len()]);
        let tb = format!("T{}", types[b as usize % types.len()]);
        g.add_triple(EntityNode::new(&format!("n{a}"), &ta), "rel", EntityNode::new(&format!("n{b}"), &tb)).unwrap();
    }
    g
}

proptest! {
    #[test]
    fn distractor_selection_matches_bfs_oracle(
        edges in prop::collection::vec((0u8..25, 0u8..25), 5..60),
        types in prop::collection::vec(0u8..2, 25),
        seed in any::<u64>(),
    ) {
        let g = random_graph(&edges, &types);
        prop_assume!(!g.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for key in g.top_k_by_centrality(3) {
            let Ok(sub) = sample_subgraph(&g, &key, &mut rng, &KindWeights::default()) else { continue };
            let key_type = g.node(&key).unwrap().entity_type.clone();
            // oracle: hand-rolled BFS over undirected adjacency
            let mut dist: BTreeMap<String, usize> = BTreeMap::new();
            dist.insert(key.clone(), 0);
            let mut frontier = vec![key.clone()];
            for depth in 1..=5 {
                let mut next = Vec::new();
                for u in &frontier {
                    for e in g.edges() {
                        if let Some(v) = e.other(u) {
                            if !dist.contains_key(v) {
                                dist.insert(v.to_string(), depth);
                                next.push(v.to_string());
                            }
                        }
                    }
                }
                frontier = next;
            }
            let vs = sub.nodes();
            let eligible: BTreeMap<&String, usize> = dist
                .iter()
                .filter(|(id, d)| **d > 0 && !vs.contains(*id) && g.node(id).unwrap().entity_type == key_type)
                .map(|(id, d)| (id, *d))
                .collect();
            match select_distractors(&g, &sub, 5, &mut rng) {
                Ok(picked) => {
                    prop_assert_eq!(picked.len(), 3);
                    let mut prev = 0;
                    for (id, depth) in &picked {
                        prop_assert_eq!(eligible.get(id), Some(depth));
                        prop_assert!(*depth >= prev && *depth <= 5);
                        prev = *depth;
                    }
                    // one per ascending level first, so the distinct depths
                    // are exactly the shallowest available levels
                    let levels: std::collections::BTreeSet<usize> = eligible.values().copied().collect();
                    let chosen: Vec<usize> = picked.iter().map(|p| p.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
                    let expect: Vec<usize> = levels.into_iter().take(3).collect();
                    prop_assert_eq!(chosen, expect);
                }
                Err(McqError::InsufficientDistractors { found }) => prop_assert_eq!(found, eligible.len()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}

fn sample_mcq() -> (KnowledgeGraph, Mcq) {
    let g = depth_fixture();
    let sub = triple_sub("k", edge("k", "r", "x"));
    let mcq = Mcq {
        id: "mcq-0001".into(),
        stem: "Which P is linked to X?".into(),
        key: "k".into(),
        distractors: vec!["a".into(), "b".into(), "c".into()],
        distractor_depths: vec![1, 2, 3],
        subgraph: sub,
        raw_signals: None,
        attempts: 1,
    };
    (g, mcq)
}

#[test]
fn validation_rules() {
    let (g, mcq) = sample_mcq();
    let ok = validate_mcq(&g, &mcq, &StubBackend::synthesizing()).unwrap();
    assert!(ok.valid);

    let judge_b = |p: &ChatPrompt| Ok(if p.user.contains("CANDIDATE: B") { "YES" } else { "NO" }.to_string());
    let out = validate_mcq(&g, &mcq, &judge_b).unwrap();
    assert!(!out.valid);
    assert_eq!(out.judged_correct, ["b"]);

    let calls = AtomicUsize::new(0);
    let flaky = |_: &ChatPrompt| {
        if calls.fetch_add(1, Ordering::SeqCst) == 1 {
            Err(LlmError::Transport { attempts: 4, message: "timeout".into() })
        } else {
            Ok("NO".to_string())
        }
    };
    let out = validate_mcq(&g, &mcq, &flaky).unwrap();
    assert!(!out.valid);
    assert_eq!(out.errors.len(), 1);
    assert!(out.errors[0].contains("timeout"));
}

#[test]
fn retry_budget_and_abort_reasons() {
    let g = micro_graph();
    let cfg = GenerationConfig::default();
    let key = &select_keys(&g, 1)[0];
    let stub = StubBackend::synthesizing();
    let mcq = generate_mcq_with_retry(&g, key, 0, &cfg, &stub, &[]).unwrap();
    assert_eq!(mcq.attempts, 1);

    let always_yes = |p: &ChatPrompt| {
        if p.user.starts_with(&format!("TASK: {TASK_VALIDATE}")) {
            Ok("YES".to_string())
        } else {
            kgmcq_core::llm::stub::synthesize(p)
        }
    };
    let report = generate_mcq_with_retry(&g, key, 0, &cfg, &always_yes, &[]).unwrap_err();
    assert_eq!(report.reasons.len(), 3);
    assert!(report.reasons.iter().all(|r| matches!(r, AbortReason::Invalid { .. })));

    // a lone Book node can never get three same-type distractors
    let report = generate_mcq_with_retry(&g, "les miserables", 0, &cfg, &stub, &[]).unwrap_err();
    assert_eq!(report.reasons.len(), 3);
    for r in &report.reasons {
        assert!(r.to_string().starts_with("insufficient distractors"), "{r}");
    }
}

#[test]
fn micro_corpus_generation_is_valid_and_reproducible() {
    let g = micro_graph();
    let cfg = GenerationConfig::default();
    let stub = StubBackend::synthesizing();
    let run = generate_all(&g, &cfg, &stub);
    assert!(run.mcqs.len() >= 10, "only {} mcqs", run.mcqs.len());
    assert!(run.mcqs.len() <= 160);
    for m in &run.mcqs {
        m.check(&g, cfg.max_depth).unwrap();
        assert!(!mentions_name(&m.stem, &g.node(&m.key).unwrap().name));
        let vs = m.subgraph.nodes();
        assert!(m.distractors.iter().all(|d| !vs.contains(d)));
        assert!(m.distractor_depths.windows(2).all(|w| w[0] <= w[1]));
    }
    assert_eq!(run, generate_all(&g, &cfg, &stub));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mcqs.jsonl");
    write_mcqs(&path, &run.mcqs).unwrap();
    assert_eq!(read_mcqs(&path).unwrap(), run.mcqs);
}
