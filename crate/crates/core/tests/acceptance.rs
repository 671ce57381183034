//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; the exit status is non-zero if any fail.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use querywise::domain::{IntentRoute, MemberProfile, Query, ToolCall};
use querywise::eval::{compare, read_dataset, score, Counts, ToolRow};
use querywise::gateway::{MockBackend, MockRule, MockScript, RuleMatcher};
use querywise::planner::{plan, Action, PlanOptions};
use querywise::service::pipeline::{BUNDLED_MOCK_SCRIPT, BUNDLED_TAXONOMY};
use querywise::service::{Engine, EngineOptions, UnderstandRequest};
use querywise::stream_parser::{parse_events_complete, ParserEvent, StreamParser};
use querywise::taxonomy::Taxonomy;
use querywise::tools::{default_registry, execute_all, ExecContext, RegistryExecutor, ToolExecutor, ToolOutcome};
use querywise::training::{corpus_loss, schedule, sft_loss, upsample, BatchMode, SftExample, TaskDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("streaming parser matches single-pass oracle", parser_equivalence),
        ("tool calls emitted on their closing byte", earliest_emission),
        ("route precedence and trust short-circuit", precedence),
        ("fixture queries end to end", fixture_queries),
        ("tools execute concurrently", concurrent_tools),
        ("batch scheduler layout", scheduler),
        ("fine-tuning loss", loss),
        ("evaluation counts and comparison", eval_harness),
        ("upsampling", upsampling),
        ("service throughput and p95", service_floor),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn taxonomy() -> Arc<Taxonomy> {
    Arc::new(Taxonomy::from_json_str(BUNDLED_TAXONOMY).unwrap())
}

fn runtime(paused: bool) -> tokio::runtime::Runtime {
    let mut b = tokio::runtime::Builder::new_current_thread();
    b.enable_all();
    if paused {
        b.start_paused(true);
    }
    b.build().unwrap()
}

fn drive(chunks: &[&[u8]]) -> Vec<Vec<ParserEvent>> {
    let mut p = StreamParser::new();
    let mut out: Vec<Vec<ParserEvent>> = chunks.iter().map(|c| p.feed(c)).collect();
    out.push(p.finish());
    out
}

fn parser_equivalence() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (responses, per) = (60, 20);
    let mut runs = 0;
    for _ in 0..responses {
        let text = common::response(&mut rng);
        let oracle = parse_events_complete(&text);
        ensure!(!oracle.iter().any(ParserEvent::is_error), "generator produced invalid input: {text}");
        for _ in 0..per {
            let chunks = common::chunking(&mut rng, text.as_bytes());
            let got: Vec<ParserEvent> = drive(&chunks).into_iter().flatten().collect();
            ensure!(got == oracle, "divergence on {text:?} cut as {chunks:?}");
            runs += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{runs} chunkings over {responses} responses, 0 divergences, {elapsed:.2?}"))
}

fn earliest_emission() -> Result<String, String> {
    let calls = [
        r#"{"tool":"route_query","arguments":{"category":"criteria"}}"#,
        r#"{"tool":"title_tool","arguments":{"title":"nurse {night}"}}"#,
        r#"{"tool":"location_tool","arguments":{"place":"Naples","country":"US"}}"#,
    ];
    let mut text = String::from("plan: ");
    let mut closing = Vec::new();
    for c in calls {
        text.push_str(c);
        closing.push(text.len() - 1);
        text.push_str(" then ");
    }
    for size in [1, 3, 7, 16, 64] {
        let chunks: Vec<&[u8]> = text.as_bytes().chunks(size).collect();
        let events = drive(&chunks);
        let fired: Vec<usize> = events
            .iter()
            .enumerate()
            .flat_map(|(i, ev)| ev.iter().filter(|e| matches!(e, ParserEvent::ToolCallComplete { .. })).map(move |_| i))
            .collect();
        let want: Vec<usize> = closing.iter().map(|b| b / size).collect();
        ensure!(fired == want, "chunk size {size}: fired in {fired:?}, closing bytes in {want:?}");
    }
    Ok(format!("closing bytes at {closing:?}, exact chunk index for 5 chunk sizes"))
}

/// Wraps the registry with a delay and counts executions.
struct Instrumented {
    inner: RegistryExecutor,
    delay: Duration,
    runs: AtomicUsize,
}

impl Instrumented {
    fn new(delay_ms: u64) -> Arc<Self> {
        Arc::new(Self { inner: RegistryExecutor::new(default_registry()), delay: Duration::from_millis(delay_ms), runs: AtomicUsize::new(0) })
    }
}

impl ToolExecutor for Instrumented {
    fn run(&self, call: ToolCall, ctx: &ExecContext) -> BoxFuture<'static, ToolOutcome> {
        self.runs.fetch_add(1, Ordering::SeqCst);
        let fut = self.inner.run(call, ctx);
        let delay = self.delay;
        Box::pin(async move {
            tokio::time::sleep(delay).await;
            fut.await
        })
    }
}

fn route_call(categories: &[&str]) -> String {
    let extra = if categories.contains(&"trust_violation") { r#","violation":"offensive""# } else { "" };
    format!(r#"{{"tool":"route_query","arguments":{{"category":{}{extra}}}}}"#, json!(categories))
}

fn precedence() -> Result<String, String> {
    let names = ["criteria", "self_reference", "non_job", "trust_violation"];
    // highest first
    let table = [
        ("trust_violation", IntentRoute::TrustViolation),
        ("self_reference", IntentRoute::SelfReferenceSearch),
        ("criteria", IntentRoute::CriteriaSearch),
        ("non_job", IntentRoute::NonJobRelated),
    ];
    const TITLE: &str = r#"{"tool":"title_tool","arguments":{"title":"nurse"}}"#;
    const EASY: &str = r#"{"tool":"easy_apply_tool","arguments":{"enabled":true}}"#;
    let rt = runtime(false);
    let query = Query::new("nurse jobs").unwrap();
    let mut trust_cases = 0;
    for mask in 1u32..16 {
        let chosen: Vec<&str> = (0..4).filter(|b| mask & (1 << b) != 0).map(|b| names[b]).collect();
        let want = table.iter().find(|(n, _)| chosen.contains(n)).unwrap().1;

        // planner alone: one signal per call, in both orders
        for order in [chosen.clone(), chosen.iter().rev().copied().collect()] {
            let text: String = order.iter().map(|c| format!("{} {TITLE} ", route_call(&[c]))).collect();
            let backend = MockBackend::new(MockScript::new(vec![MockRule::new(RuleMatcher::Any, text)]).unwrap());
            let d = rt.block_on(plan(&query, None, &backend, &PlanOptions::default())).map_err(|e| format!("{order:?}: {e}"))?;
            ensure!(d.route == want, "{order:?} routed to {:?}, expected {want:?}", d.route);
            ensure!(backend.calls() == 1, "{order:?}: {} backend calls", backend.calls());
        }

        // whole engine: all signals in one routing call, facet calls on both sides
        let text = [TITLE, &route_call(&chosen), EASY].join(" ");
        let backend = Arc::new(MockBackend::new(MockScript::new(vec![MockRule::new(RuleMatcher::Any, text)]).unwrap()));
        let exec = Instrumented::new(0);
        let engine = Engine::new(backend.clone(), taxonomy(), EngineOptions::default()).with_executor(exec.clone());
        let r = rt.block_on(engine.understand(&UnderstandRequest::new("nurse jobs"))).map_err(|e| e.to_string())?;
        // an unfillable self-reference falls back to criteria
        let effective = if want == IntentRoute::SelfReferenceSearch { IntentRoute::CriteriaSearch } else { want };
        ensure!(r.route == effective, "{chosen:?}: engine routed to {:?}", r.route);
        if want == IntentRoute::TrustViolation {
            trust_cases += 1;
            let runs = exec.runs.load(Ordering::SeqCst);
            ensure!(backend.calls() == 1 && runs == 0, "{chosen:?}: {} backend calls, {runs} tool runs", backend.calls());
            ensure!(r.tags.is_empty() && r.denial.is_some(), "{chosen:?}: denial incomplete");
        }
    }
    Ok(format!("15 combinations via planner and engine; {trust_cases} trust cases: 1 backend call, 0 tool runs each"))
}

fn fixture_queries() -> Result<String, String> {
    let backend = Arc::new(MockBackend::new(MockScript::from_json_str(BUNDLED_MOCK_SCRIPT).unwrap()));
    let engine = Engine::new(backend.clone(), taxonomy(), EngineOptions::default());
    let profile: MemberProfile = serde_json::from_value(json!({
        "location": {"city": "Bay Area", "region": "CA", "country": "US"},
        "titles": ["Software Engineer"]
    }))
    .unwrap();
    let denial = "This search query may violate our Professional Community Policies. Edit your search to try again";
    let cases = [
        ("find me a job in Naples", json!({
            "route": "criteria_search",
            "tags": [{"facet": "geo_location", "value": {"place_id": "naples-fl-us", "display": "Naples, FL"}, "span": {"start": 17, "end": 23}, "confidence": 1.0}],
            "facet_suggestions": []
        })),
        ("jobs that match my profile", json!({
            "route": "self_reference_search",
            "tags": [
                {"facet": "title", "value": "Software Engineer", "confidence": 1.0},
                {"facet": "geo_location", "value": {"place_id": "bay-area-ca-us", "display": "Bay Area, CA"}, "confidence": 1.0}
            ],
            "rewritten_query": "jobs that match Software Engineer in Bay Area, CA",
            "facet_suggestions": []
        })),
        ("I want to be a mermaid", json!({
            "route": "non_job_related",
            "tags": [{"facet": "title", "value": "mermaid", "span": {"start": 15, "end": 22}, "confidence": 0.4}],
            "facet_suggestions": []
        })),
        ("jobs where I can hurt people", json!({
            "route": "trust_violation",
            "tags": [],
            "facet_suggestions": [],
            "denial": {"message": denial, "category": "violent"}
        })),
    ];
    let rt = runtime(false);
    for (q, want) in &cases {
        let req = UnderstandRequest::new(*q).with_profile(profile.clone());
        let r = rt.block_on(engine.understand(&req)).map_err(|e| format!("{q}: {e}"))?;
        let mut got = serde_json::to_value(&r).unwrap();
        got.as_object_mut().unwrap().remove("timings");
        ensure!(&got == want, "{q}: got {got}");
    }
    let d = rt.block_on(plan(&Query::new("I want to be a mermaid").unwrap(), None, backend.as_ref(), &PlanOptions::default())).map_err(|e| e.to_string())?;
    ensure!(d.has(Action::ForwardFlagged), "mermaid plan lacks the forward flag: {:?}", d.actions);
    Ok("4 of 4 results equal expected fields".into())
}

fn concurrent_tools() -> Result<String, String> {
    let rt = runtime(true);
    let ctx = ExecContext::new(taxonomy());
    let calls: Vec<ToolCall> = [
        r#"{"tool":"title_tool","arguments":{"title":"nurse"}}"#,
        r#"{"tool":"easy_apply_tool","arguments":{"enabled":true}}"#,
        r#"{"tool":"company_tool","arguments":{"company":"Acme"}}"#,
    ]
    .iter()
    .map(|t| querywise::stream_parser::parse_complete(t).unwrap().remove(0))
    .collect();
    let mut worst = Duration::ZERO;
    for rep in 0..20 {
        let exec = Instrumented::new(50);
        let elapsed = rt.block_on(async {
            let t = tokio::time::Instant::now();
            let results = execute_all(futures::stream::iter(calls.clone()), exec.as_ref(), &ctx, 8).await;
            assert_eq!(results.len(), 3);
            t.elapsed()
        });
        ensure!(exec.runs.load(Ordering::SeqCst) == 3, "rep {rep}: wrong run count");
        ensure!(elapsed < Duration::from_millis(120), "rep {rep}: {elapsed:?}");
        worst = worst.max(elapsed);
    }
    Ok(format!("20/20 under 120ms, worst {worst:?} on the test clock"))
}

fn two_tasks() -> Vec<TaskDataset> {
    ["alpha", "beta"]
        .iter()
        .map(|t| TaskDataset::new(*t, (0..4).map(|i| SftExample::new(format!("{t} {i}"), "x")).collect()).unwrap())
        .collect()
}

fn scheduler() -> Result<String, String> {
    let data = two_tasks();
    let m = schedule(&data, BatchMode::Homogeneous, 2, 11, None).map_err(|e| e.to_string())?;
    ensure!(m.batches.len() == 4, "{} batches", m.batches.len());
    for b in &m.batches {
        let tasks: HashSet<&str> = b.iter().map(|e| e.task_id.as_str()).collect();
        ensure!(b.len() == 2 && tasks.len() == 1, "batch {b:?}");
    }
    let mut seen: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for e in m.entries() {
        *seen.entry((e.task_id.clone(), e.example)).or_default() += 1;
    }
    ensure!(seen.len() == 8 && seen.values().all(|&n| n == 1), "coverage {seen:?}");

    let mixed_seeds = (0..100u64)
        .filter(|&s| {
            let m = schedule(&data, BatchMode::Heterogeneous, 2, s, None).unwrap();
            m.batches.iter().any(|b| b.iter().map(|e| &e.task_id).collect::<HashSet<_>>().len() > 1)
        })
        .count();
    ensure!(mixed_seeds >= 1, "no mixed batch in 100 seeds");

    for mode in [BatchMode::Homogeneous, BatchMode::Heterogeneous] {
        let a = schedule(&data, mode, 2, 5, None).unwrap().to_json();
        let b = schedule(&data, mode, 2, 5, None).unwrap().to_json();
        ensure!(a.as_bytes() == b.as_bytes(), "{mode:?} not reproducible");
    }
    Ok(format!("4 single-task batches; {mixed_seeds}/100 seeds mixed; manifests reproducible"))
}

fn loss() -> Result<String, String> {
    let l = sft_loss(&[-0.1, -0.2, -0.3]).map_err(|e| e.to_string())?;
    ensure!((l - 0.6).abs() < 1e-9, "loss {l}");

    // dyadic values keep every partial sum exact
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let examples: Vec<SftExample> = (0..50)
        .map(|i| {
            let lp = (0..rng.random_range(1..10)).map(|_| -(rng.random_range(0..256) as f64) / 64.0).collect();
            SftExample::new(format!("p{i}"), "t").with_logprobs(lp)
        })
        .collect();
    let whole = corpus_loss(&examples).map_err(|e| e.to_string())?;
    let parts: f64 = examples.iter().map(|e| sft_loss(e.token_logprobs.as_deref().unwrap()).unwrap()).sum();
    let halves = corpus_loss(&examples[..20]).unwrap() + corpus_loss(&examples[20..]).unwrap();
    ensure!(whole == parts && whole == halves, "{whole} vs {parts} vs {halves}");

    ensure!(sft_loss(&[-0.1, 0.2]).is_err(), "positive log-prob accepted");
    Ok(format!("0.6 within 1e-9; corpus of 50 additive exactly ({whole})"))
}

fn eval_harness() -> Result<String, String> {
    // the shipped dataset scored against the engine's own predictions
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/eval.jsonl")).unwrap();
    let examples = read_dataset(text.as_bytes()).map_err(|e| e.to_string())?;
    ensure!(examples.len() <= 20, "dataset has {} examples", examples.len());
    let backend = Arc::new(MockBackend::new(MockScript::from_json_str(BUNDLED_MOCK_SCRIPT).unwrap()));
    let engine = Engine::new(backend, taxonomy(), EngineOptions::default());
    let rt = runtime(false);
    let pairs: Vec<_> = examples
        .into_iter()
        .map(|ex| {
            let mut req = UnderstandRequest::new(ex.query.text.clone());
            req.profile = ex.profile.clone();
            let r = rt.block_on(engine.understand(&req)).unwrap();
            (ex, querywise::eval::Prediction { route: r.route, tags: r.tags })
        })
        .collect();
    let mut datasets = vec![pairs];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        // random subsets with shuffled predictions
        let base = &datasets[0];
        let n = rng.random_range(0..=base.len());
        let subset: Vec<_> = (0..n)
            .map(|_| {
                let (ex, _) = &base[rng.random_range(0..base.len())];
                let (_, pred) = &base[rng.random_range(0..base.len())];
                (ex.clone(), pred.clone())
            })
            .collect();
        datasets.push(subset);
    }
    for (i, pairs) in datasets.iter().enumerate() {
        let report = score(pairs.iter().map(|(e, p)| (e, p)));
        let want = common::oracle(pairs);
        let got: BTreeMap<&str, Counts> = report.tools.iter().map(|r| (r.tool.as_str(), r.counts)).collect();
        ensure!(got == want, "dataset {i}: {got:?} vs oracle {want:?}");
    }

    let mut legacy = score(std::iter::empty());
    legacy.tools = vec![ToolRow::new("location_tool", Counts::new(208749, 14751, 24751))];
    let mut tuned = score(std::iter::empty());
    tuned.tools = vec![ToolRow::new("location_tool", Counts::new(51993, 2507, 1007))];
    let cmp = compare(&legacy, &tuned);
    let row = cmp.deltas.iter().find(|d| d.tool == "location_tool").ok_or("no location row")?;
    let (dp, dr) = (row.precision.0.unwrap(), row.recall.0.unwrap());
    ensure!((dp - 0.020).abs() < 1e-9 && (dr - 0.087).abs() < 1e-9, "deltas {dp} {dr}");
    Ok(format!("{} datasets equal the oracle; location deltas {dp:+.3}/{dr:+.3}", datasets.len()))
}

fn upsampling() -> Result<String, String> {
    let ds = |t: &str, n: usize| TaskDataset::new(t, (0..n).map(|i| SftExample::new(format!("{t}{i}"), "y")).collect()).unwrap();
    let out = upsample(&[ds("a", 3), ds("b", 6)], 1);
    let sizes: Vec<usize> = out.iter().map(|d| d.examples.len()).collect();
    ensure!(sizes == [6, 6], "sizes {sizes:?}");
    let equal = vec![ds("a", 4), ds("b", 4), ds("c", 4)];
    let before = serde_json::to_string(&equal).unwrap();
    let after = serde_json::to_string(&upsample(&equal, 1)).unwrap();
    ensure!(before.as_bytes() == after.as_bytes(), "equal-size input changed");
    Ok("[3,6] -> [6,6]; equal sizes unchanged byte for byte".into())
}

fn service_floor() -> Result<String, String> {
    const RUN: Duration = Duration::from_secs(10);
    const WORKERS: usize = 16;
    let text = r#"{"tool":"route_query","arguments":{"category":"criteria"}} {"tool":"title_tool","arguments":{"title":"nurse"}}"#;
    let backend = Arc::new(MockBackend::new(MockScript::new(vec![MockRule::new(RuleMatcher::Any, text)]).unwrap()));
    let engine = Arc::new(Engine::new(backend, taxonomy(), EngineOptions::default()));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(querywise::service::http::serve_on(listener, engine.clone(), async {
            let _ = stopped.await;
        }));
        let client = reqwest::Client::new();
        let url = format!("http://{addr}{}", querywise::service::http::UNDERSTAND_PATH);
        let started = Instant::now();
        let workers: Vec<_> = (0..WORKERS)
            .map(|_| {
                let (client, url) = (client.clone(), url.clone());
                tokio::spawn(async move {
                    let (mut ok, mut bad) = (0u64, 0u64);
                    while started.elapsed() < RUN {
                        let res = client.post(&url).json(&json!({"query": "nurse jobs"})).send().await;
                        let served = match res {
                            Ok(r) => r.status().is_success() && r.bytes().await.is_ok(),
                            Err(_) => false,
                        };
                        if served {
                            ok += 1;
                        } else {
                            bad += 1;
                        }
                    }
                    (ok, bad)
                })
            })
            .collect();
        let (mut ok, mut bad) = (0u64, 0u64);
        for w in workers {
            let (o, b) = w.await.unwrap();
            ok += o;
            bad += b;
        }
        let secs = started.elapsed().as_secs_f64();
        let rate = ok as f64 / secs;

        let metrics_url = format!("http://{addr}{}", querywise::service::http::METRICS_PATH);
        let metrics: Value = client.get(&metrics_url).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
        let _ = stop.send(());
        let _ = server.await;

        ensure!(bad == 0, "{bad} failed requests");
        ensure!(rate >= 200.0, "{rate:.0} req/s");
        let total = &metrics["stages"]["total"];
        ensure!(total["count"].as_u64() == Some(ok), "metrics count {} vs {ok} served", total["count"]);
        let reported = total["p95"].as_f64().ok_or("no p95")?;

        let mut samples = engine.latency().samples("total");
        samples.sort_by(f64::total_cmp);
        let rank = (95 * samples.len()).div_ceil(100);
        let offline = samples[rank - 1];
        ensure!(reported.to_bits() == offline.to_bits(), "reported p95 {reported} vs offline {offline}");
        Ok(format!("{ok} requests in {secs:.1}s ({rate:.0} req/s), 0 errors; p95 {offline:.3}ms matches"))
    })
}
