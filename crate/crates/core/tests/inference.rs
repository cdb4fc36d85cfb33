mod common;

use common::test_engine;
use tv2tv::inference::{DoneReason, EntryKind, Event, GenConfig, Session, Source, Status, TraceRecord};
use tv2tv::sequence::{Element, Marker, SegmentRole, Variant};
use tv2tv::toyworld::{gen_episode, Policy};

fn cfg(seed: u64) -> GenConfig {
    GenConfig {
        ode_steps: 4,
        max_elements: 120,
        seed,
        ..GenConfig::default()
    }
}

fn first_frame(seed: u64) -> tv2tv::toyworld::Frame {
    gen_episode(seed, 1, Policy::Random).unwrap().frames[0].clone()
}

fn chunks(events: &[Event]) -> Vec<&tv2tv::codec::LatentChunk> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Chunk {
                latent, source: Source::Model, ..
            } => Some(latent),
            _ => None,
        })
        .collect()
}

#[test]
fn cached_rollout_matches_full_recompute() {
    for seed in 0..3 {
        let engine = test_engine(Variant::Tv2tv, seed, 0.6, -3.0);
        let mut s = engine
            .start(
                "a red sprite starts in the top left.",
                Some(&first_frame(seed)),
                GenConfig { cfg_scale: 2.5, ..cfg(seed) },
            )
            .unwrap();
        s.enable_trace();
        s.run_to_end().unwrap();
        assert!(s.chunks_generated() >= 1, "seed {seed} produced no chunk");
        let r = s.replay().unwrap();
        assert!(r.n_logits >= 5 && r.n_velocities >= 8, "{r:?}");
        assert!(r.max_logit_diff <= 1e-4, "{r:?}");
        assert!(r.max_velocity_diff <= 1e-4, "{r:?}");
    }
}

#[test]
fn guidance_scale_selects_branches() {
    let engine = test_engine(Variant::Tv2tv, 1, 8.0, -8.0);
    let frame = first_frame(3);
    let run = |prompt: &str, scale: f64| {
        let mut s = engine
            .start(
                prompt,
                Some(&frame),
                GenConfig {
                    cfg_scale: scale,
                    max_chunks: 1,
                    ..cfg(5)
                },
            )
            .unwrap();
        s.enable_trace();
        let ev = s.run_to_end().unwrap();
        (chunks(&ev)[0].data.clone(), s.trace().to_vec())
    };
    // s = 0 sees only the text-free stream, so the prompt cannot matter
    let (a, trace) = run("a red sprite.", 0.0);
    let (b, _) = run("a blue sprite moves up.", 0.0);
    assert_eq!(a, b);
    assert!(trace.iter().all(|r| !matches!(
        r,
        TraceRecord::Velocity {
            branch: tv2tv::inference::Branch::Cond,
            ..
        }
    )));
    // s = 1 is the conditional branch alone, bit for bit
    let (c, trace) = run("a red sprite.", 1.0);
    let (d, _) = run("a blue sprite moves up.", 1.0);
    assert_ne!(c, d);
    assert!(trace.iter().all(|r| !matches!(
        r,
        TraceRecord::Velocity {
            branch: tv2tv::inference::Branch::Uncond,
            ..
        }
    )));
    let x0 = {
        let mut s = engine
            .start(
                "a red sprite.",
                Some(&frame),
                GenConfig {
                    cfg_scale: 1.0,
                    max_chunks: 1,
                    ..cfg(5)
                },
            )
            .unwrap();
        s.enable_trace();
        s.run_to_end().unwrap();
        s.trace().to_vec()
    };
    let vs: Vec<_> = x0.iter().filter(|r| matches!(r, TraceRecord::Velocity { .. })).collect();
    assert_eq!(vs.len(), 4);
}

#[test]
fn same_seed_same_rollout() {
    let engine = test_engine(Variant::Tv2tv, 2, 0.6, -3.0);
    let frame = first_frame(1);
    let go = |seed| {
        let mut s = engine.start("a sprite.", Some(&frame), cfg(seed)).unwrap();
        s.run_to_end().unwrap();
        s.transcript_jsonl()
    };
    assert_eq!(go(7), go(7));
    assert_ne!(go(7), go(8));
}

#[test]
fn chunks_are_framed_and_streams_stay_clean() {
    let engine = test_engine(Variant::Tv2tv, 3, 0.6, -3.0);
    let mut s = engine
        .start("a red sprite.", Some(&first_frame(2)), GenConfig { max_elements: 200, ..cfg(1) })
        .unwrap();
    let events = s.run_to_end().unwrap();
    assert!(matches!(events.last(), Some(Event::Done { .. })));
    let els = &s.history().elements;
    assert!(els.iter().all(|e| !matches!(e, Element::Noisy(_))));
    for (i, e) in els.iter().enumerate() {
        if let Element::Clean(c) = e {
            assert!(matches!(els[i - 1], Element::Marker { marker: Marker::Bof, .. }));
            assert!(matches!(els[i + 1], Element::Marker { marker: Marker::Eof, .. }));
            assert!(c.latent.is_finite());
        }
    }
    // every generated chunk is announced by a sampled <bof> and closed by <eof>
    let t = s.transcript();
    for (i, e) in t.iter().enumerate() {
        if e.kind == EntryKind::Chunk && e.source == Source::Model {
            assert_eq!(t[i - 1].text.as_deref(), Some("<bof>"));
            assert_eq!(t[i + 1].text.as_deref(), Some("<eof>"));
            assert_eq!(e.frame_checksums.as_ref().unwrap().len(), 4);
        }
    }
    assert_eq!(s.frames().len(), 1 + 4 * s.chunks_generated());
    assert!(s.step().is_err(), "a finished session refuses to step");
}

#[test]
fn limits_end_the_rollout() {
    let engine = test_engine(Variant::Tv2tv, 4, 8.0, -8.0);
    let mut s = engine.start("", None, GenConfig { max_chunks: 2, ..cfg(0) }).unwrap();
    let ev = s.run_to_end().unwrap();
    assert!(matches!(ev.last(), Some(Event::Done { reason: DoneReason::MaxChunks })));
    assert_eq!(s.chunks_generated(), 2);

    let mut s = engine.start("", None, GenConfig { window_chunks: 3, ..cfg(0) }).unwrap();
    let ev = s.run_to_end().unwrap();
    assert!(matches!(
        ev.last(),
        Some(Event::Done {
            reason: DoneReason::WindowFull
        })
    ));
    assert_eq!(s.chunks_generated(), 3);

    let never_bof = test_engine(Variant::Tv2tv, 4, -8.0, -8.0);
    let mut s = never_bof.start("", None, GenConfig { max_elements: 10, ..cfg(0) }).unwrap();
    let ev = s.run_to_end().unwrap();
    assert!(matches!(
        ev.last(),
        Some(Event::Done {
            reason: DoneReason::MaxElements
        })
    ));
    assert_eq!(s.element_count(), 10);

    let eos = test_engine(Variant::Tv2tv, 4, -8.0, 8.0);
    let mut s = eos.start("", None, cfg(0)).unwrap();
    assert!(matches!(s.step().unwrap(), Event::Done { reason: DoneReason::Eos }));
    assert_eq!(s.status(), Status::Done);
    assert!(s.intervene("(left).").is_err());
}

#[test]
fn interventions_land_on_chunk_boundaries() {
    let engine = test_engine(Variant::Tv2tv, 5, 0.6, -8.0);
    let mut s = engine.start("a sprite.", Some(&first_frame(4)), GenConfig { max_chunks: 3, ..cfg(2) }).unwrap();
    // queued at the start: applied before anything is sampled
    assert_eq!(s.intervene("(left).").unwrap(), 1.0 / 16.0);
    match s.step().unwrap() {
        Event::Text {
            text,
            source: Source::User,
            timestamp_s,
            ..
        } => {
            assert_eq!(text, "(left).");
            assert_eq!(timestamp_s, 1.0 / 16.0);
        }
        e => panic!("{e:?}"),
    }
    assert_eq!(s.intervene("").unwrap(), 1.0 / 16.0);
    assert_eq!(s.pending_interventions(), 0);
    // mid-text: waits for the next EOF
    let mut queued = false;
    let mut after_chunk = false;
    let mut seen = false;
    while s.status() != Status::Done {
        let ev = s.step().unwrap();
        match &ev {
            Event::Text { source: Source::Model, .. } if !queued => {
                s.intervene("(stay). jump.").unwrap();
                queued = true;
            }
            Event::Text {
                source: Source::User,
                text,
                timestamp_s,
                ..
            } => {
                assert!(after_chunk, "applied away from a boundary");
                assert_eq!(text, "(stay). jump.");
                assert_eq!(*timestamp_s, tv2tv::toyworld::chunk_timestamp(s.chunks_generated() + 1));
                seen = true;
            }
            _ => {}
        }
        after_chunk = matches!(ev, Event::Chunk { .. });
    }
    assert!(queued && seen);
    let users: Vec<_> = s
        .transcript()
        .iter()
        .filter(|e| e.source == Source::User && e.kind == EntryKind::Text)
        .collect();
    assert_eq!(users.len(), 3, "prompt plus two interventions");
    let plans = s.history().plan_segments().filter(|p| p.role == SegmentRole::Plan).count();
    assert!(plans >= 2);
}

#[test]
fn timed_interventions_wait_for_their_boundary() {
    let engine = test_engine(Variant::Tv2tv, 6, 8.0, -8.0);
    let mut s = engine.start("", None, GenConfig { max_chunks: 4, ..cfg(3) }).unwrap();
    s.intervene_at(0.5, "(up).").unwrap();
    let mut applied_after = None;
    while s.status() != Status::Done {
        if let Event::Text {
            source: Source::User,
            timestamp_s,
            ..
        } = s.step().unwrap()
        {
            applied_after = Some((s.chunks_generated(), timestamp_s));
        }
    }
    // chunk 3 is the first to start at or after 0.5 s (9/16 s)
    assert_eq!(applied_after, Some((2, 0.5625)));
}

#[test]
fn window_extension_keeps_second_half() {
    let engine = test_engine(Variant::Tv2tv, 7, 8.0, -8.0);
    let mut s = engine
        .start("a green sprite.", Some(&first_frame(5)), GenConfig { window_chunks: 8, ..cfg(4) })
        .unwrap();
    let mut made = Vec::new();
    while s.window_len() < 8 {
        if let Event::Chunk { latent, frames, .. } = s.step().unwrap() {
            made.push((latent, frames));
        }
    }
    s.extend_window().unwrap();
    assert_eq!(s.window_len(), 4);
    assert_eq!(s.chunks_generated(), 8);
    let clean: Vec<_> = s
        .history()
        .elements
        .iter()
        .filter_map(|e| match e {
            Element::Clean(c) => Some(&c.latent),
            _ => None,
        })
        .collect();
    assert_eq!(clean.len(), 5);
    for (j, c) in clean[1..].iter().enumerate() {
        assert_eq!(c.chunk_index, j + 1);
        assert_eq!(c.data, made[4 + j].0.data, "retained chunk {} is generated chunk {}", j + 1, 5 + j);
    }
    let cond = engine.codec.decode_chunk(clean[0]).unwrap();
    let want = made[3].1.last().unwrap();
    assert!(cond[0].data.iter().zip(&want.data).all(|(a, b)| (a - b).abs() < 1e-4));
    // the session carries on with global indices
    while s.status() != Status::Done {
        if let Event::Chunk { chunk_index, timestamp_s, .. } = s.step().unwrap() {
            assert_eq!(chunk_index, 9);
            assert_eq!(timestamp_s, tv2tv::toyworld::chunk_timestamp(9));
            break;
        }
    }

    let mut short = engine.start("", None, GenConfig { max_chunks: 1, ..cfg(4) }).unwrap();
    short.run_to_end().unwrap();
    assert!(short.extend_window().is_err());
    let t2 = test_engine(Variant::Think2v, 7, 8.0, -8.0);
    let mut th = t2.start("", Some(&first_frame(5)), cfg(4)).unwrap();
    assert!(th.extend_window().is_err());
}

#[test]
fn auto_extension_runs_several_windows() {
    let engine = test_engine(Variant::Tv2tv, 8, 8.0, -8.0);
    let mut s = engine
        .start(
            "",
            Some(&first_frame(6)),
            GenConfig {
                auto_extend: true,
                max_chunks: 10,
                max_elements: 10_000,
                ..cfg(5)
            },
        )
        .unwrap();
    let ev = s.run_to_end().unwrap();
    assert!(matches!(ev.last(), Some(Event::Done { reason: DoneReason::MaxChunks })));
    assert_eq!(s.chunks_generated(), 10);
    assert!(s.window_len() <= 4);
    assert_eq!(s.frames().len(), 41);
    let idx: Vec<usize> = chunks(&ev).iter().map(|c| c.chunk_index).collect();
    assert!(idx.iter().all(|&i| (1..=4).contains(&i)), "local indices stay inside the window: {idx:?}");
}

#[test]
fn think2v_splices_the_plan_list() {
    let engine = test_engine(Variant::Think2v, 9, -1.0, -8.0);
    let mut s = engine
        .start("a sprite.", Some(&first_frame(7)), GenConfig { max_elements: 60, ..cfg(6) })
        .unwrap();
    s.intervene("(down).").unwrap();
    // nothing applies before the plans and the conditioning frame are written
    let mut order = Vec::new();
    while s.status() != Status::Done {
        match s.step().unwrap() {
            Event::Chunk {
                chunk_index: 0,
                source: Source::User,
                ..
            } => order.push("cond"),
            Event::Text { source: Source::User, .. } => order.push("user"),
            _ => {}
        }
    }
    if order.contains(&"cond") {
        assert_eq!(&order[..2], &["cond", "user"]);
        let els = &s.history().elements;
        let bof = els.iter().position(|e| matches!(e, Element::Marker { marker: Marker::Bof, .. })).unwrap();
        let plan: Vec<u32> = els[..bof]
            .iter()
            .filter_map(|e| match e {
                Element::Text(t) if t.role == SegmentRole::Plan => Some(t.token_ids.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        let text = engine.vocab.decode_plain(&plan);
        let first_plan = text.find('(').map(|i| &text[i..]).unwrap_or("");
        assert!(first_plan.starts_with("(down)."), "{text:?}");
    }
}

#[test]
fn transcript_lines_are_json_objects() {
    let engine = test_engine(Variant::Tv2tv, 10, 0.6, -3.0);
    let mut s: Session = engine.start("a red sprite.", Some(&first_frame(8)), cfg(9)).unwrap();
    s.intervene("(right).").unwrap();
    s.run_to_end().unwrap();
    let text = s.transcript_jsonl();
    let mut last = -1.0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let ts = v["timestamp_s"].as_f64().unwrap();
        assert!(ts >= last);
        last = ts;
        match v["type"].as_str().unwrap() {
            "text" => assert!(v["text"].is_string()),
            "chunk" => assert!(v["frame_checksums"].is_array()),
            t => panic!("{t}"),
        }
        assert!(matches!(v["source"].as_str(), Some("model" | "user")));
    }
    assert_eq!(text.lines().count(), s.transcript().len());
}
