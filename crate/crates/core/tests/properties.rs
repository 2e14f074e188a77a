mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use omniengine::dedup::{dedup_corpus, DedupConfig};
use omniengine::extract::{extract_document, ExtractOptions, Extraction};
use omniengine::image_pipeline::fetch::Response;
use omniengine::image_pipeline::{
    dhash, fetch_images, normalize_url, phash, BloomFilter, FetchConfig, FetchTask, PixelImage, Transport, TransportError,
};
use omniengine::metrics::{aggregate, metrics_for_text, BinSpec};
use omniengine::pipeline::{Pipeline, PipelineConfig};
use omniengine::scheduler::{enumerate_plans, plan_time, Profiles, StageId};
use omniengine::stream_format::{
    parse_document, serialize_document, to_image_text_pairs, to_text_corpus, DocumentMeta, Element, ElementTag, ImageRef,
    ImageStatus, Pairing, StreamDocument, TextSimilarity, TokenOverlap, UNSCORED,
};
use omniengine::text_filters::{
    apply_detailed_rules, feedback_round, preliminary_filter, AnnotatedSample, AnnotationSet, Decision, FeedbackState,
    HumanVerdict, PreliminaryConfig, RuleSet,
};

// ---------------------------------------------------------------------------
// generators

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(common::STOPS.to_vec()).prop_map(String::from),
        8 => "[a-z]{3,9}",
        1 => "[A-Z][a-z]{2,6}[.,!?]?",
        1 => "[0-9]{1,4}",
        1 => prop::sample::select(vec!["#tag", "...", "twitter", "Read more", "http://x.test/a"]).prop_map(String::from),
    ]
}

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..40).prop_map(|w| w.join(" "))
}

fn score() -> impl Strategy<Value = f64> {
    prop_oneof![Just(UNSCORED), (0u32..=1000).prop_map(|v| v as f64 / 1000.0)]
}

fn image_ref() -> impl Strategy<Value = ImageRef> {
    (
        "[a-z]{1,8}",
        0u32..3000,
        0u32..3000,
        prop_oneof![Just(UNSCORED), (0u32..=100).prop_map(|v| v as f64 / 10.0)],
        score(),
        any::<Option<u64>>(),
        any::<Option<u64>>(),
        prop_oneof![
            Just(ImageStatus::Pending),
            Just(ImageStatus::Fetched),
            Just(ImageStatus::Failed),
            "[a-z_]{1,10}".prop_map(ImageStatus::Dropped)
        ],
        prop::option::of("[ -~]{0,20}"),
    )
        .prop_map(|(name, width, height, aesthetic, nsfw, phash, dhash, status, alt)| ImageRef {
            url: format!("https://img.test/{name}.jpg"),
            width,
            height,
            aesthetic,
            nsfw,
            phash,
            dhash,
            status,
            alt,
        })
}

fn element() -> impl Strategy<Value = Element> {
    let text_tags = vec![
        ElementTag::Text,
        ElementTag::Code,
        ElementTag::Header,
        ElementTag::Detail,
        ElementTag::Quote,
        ElementTag::Table,
        ElementTag::List,
    ];
    prop_oneof![
        3 => (prop::sample::select(text_tags), paragraph()).prop_map(|(t, c)| Element::new(t, c)),
        1 => image_ref().prop_map(Element::image),
    ]
}

fn document() -> impl Strategy<Value = StreamDocument> {
    ("[a-z0-9]{1,12}", prop::collection::vec(element(), 0..8), score(), score(), 0i64..2_000_000_000).prop_map(
        |(id, elements, toxic, fluency, secs)| {
            let mut meta = DocumentMeta::unscored(format!("https://site.test/{id}"), Utc.timestamp_opt(secs, 0).unwrap());
            meta.toxic = toxic;
            meta.fluency = fluency;
            StreamDocument { id, elements, meta }
        },
    )
}

// ---------------------------------------------------------------------------
// stream format

proptest! {
    #[test]
    fn serialization_round_trips(doc in document()) {
        let line = serialize_document(&doc).unwrap();
        prop_assert_eq!(parse_document(&line).unwrap(), doc);
    }

    #[test]
    fn text_corpus_keeps_text_order(doc in document()) {
        let want: Vec<&str> = doc.elements.iter().filter(|e| !e.tag.is_media()).map(|e| e.content.as_str()).collect();
        prop_assert_eq!(to_text_corpus(&doc), want.join("\n"));
    }

    #[test]
    fn natural_pairing_one_pair_per_image(doc in document()) {
        let has_text = doc.elements.iter().any(|e| !e.tag.is_media() && !e.content.trim().is_empty());
        let pairs = to_image_text_pairs(&doc, Pairing::Natural);
        prop_assert_eq!(pairs.len(), if has_text { doc.image_count() } else { 0 });
    }

    #[test]
    fn retrieval_pairing_survives_monotone_rescoring(doc in document()) {
        struct Squared;
        impl TextSimilarity for Squared {
            fn similarity(&self, a: &str, b: &str) -> f64 {
                TokenOverlap.similarity(a, b).powi(2)
            }
        }
        let plain: Vec<String> = to_image_text_pairs(&doc, Pairing::Retrieval(&TokenOverlap)).into_iter().map(|p| p.text).collect();
        let squared: Vec<String> = to_image_text_pairs(&doc, Pairing::Retrieval(&Squared)).into_iter().map(|p| p.text).collect();
        prop_assert_eq!(plain, squared);
    }
}

// ---------------------------------------------------------------------------
// extraction

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_is_deterministic_and_skips_scripts(paras in prop::collection::vec("[a-z]{3,8}( [a-z]{2,8}){20,40}", 1..4), imgs in 0usize..3) {
        let mut body = String::from("<script>var SENTINEL_A = 1;</script><style>.SENTINEL_B{}</style><!-- SENTINEL_C --><article>");
        for (i, p) in paras.iter().enumerate() {
            body.push_str(&format!("<p>{p}</p>"));
            if i < imgs {
                body.push_str(&format!("<img src=\"/photos/p{i}.jpg\">"));
            }
        }
        body.push_str("</article>");
        let html = format!("<html lang=\"en\"><body>{body}</body></html>");
        let ts = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        let a = extract_document(html.as_bytes(), "https://news.test/a", ts, &ExtractOptions::default()).unwrap();
        let b = extract_document(html.as_bytes(), "https://news.test/a", ts, &ExtractOptions::default()).unwrap();
        prop_assert_eq!(&a, &b);
        match a {
            Extraction::Document(d) => {
                prop_assert!(d.image_count() >= 1 && d.text_count() >= 1);
                prop_assert!(d.elements.iter().all(|e| !e.content.contains("SENTINEL")));
                // images follow the paragraphs they were placed after
                let order: Vec<bool> = d.elements.iter().map(Element::is_image).collect();
                let want: Vec<bool> = (0..paras.len()).flat_map(|i| if i < imgs { vec![false, true] } else { vec![false] }).collect();
                prop_assert_eq!(order, want);
            }
            Extraction::Dropped(r) => {
                let chars: usize = paras.iter().map(|p| p.chars().filter(|c| !c.is_whitespace()).count()).sum();
                if chars < ExtractOptions::default().min_candidate_chars {
                    prop_assert_eq!(r.as_str(), "empty_body");
                } else {
                    prop_assert_eq!((r.as_str(), imgs.min(paras.len())), ("no_image", 0));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// text filters

proptest! {
    #[test]
    fn rules_are_deterministic_and_leave_images_alone(doc in document()) {
        let rules = RuleSet::english();
        let (a, va) = apply_detailed_rules(&doc, &rules);
        let (b, vb) = apply_detailed_rules(&doc, &rules);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&va, &vb);
        let before: Vec<&ImageRef> = doc.images().collect();
        let after: Vec<&ImageRef> = a.images().collect();
        prop_assert_eq!(before, after);
        // surviving elements keep their relative order
        let tags_after: Vec<ElementTag> = a.elements.iter().map(|e| e.tag).collect();
        let mut it = doc.elements.iter().map(|e| e.tag);
        prop_assert!(tags_after.iter().all(|t| it.any(|x| x == *t)));
        // nothing changes without a rule owning it
        if va.decision != Decision::Keep {
            prop_assert!(!va.triggered_rules.is_empty());
        }
        if va.decision == Decision::Keep {
            prop_assert_eq!(&a, &doc);
        }
    }

    #[test]
    fn preliminary_drops_documents_without_text(imgs in prop::collection::vec(image_ref(), 0..3), blank in "[ \n\t]{0,5}") {
        let mut elements: Vec<Element> = imgs.into_iter().map(Element::image).collect();
        elements.push(Element::text(blank));
        let doc = common::doc("e", 1, elements);
        prop_assert!(preliminary_filter(&doc, &PreliminaryConfig::default()).is_drop());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn promoted_rules_only_grow(threshold in 0.0f64..=1.0, seed in any::<u64>(), good in prop::collection::vec(any::<bool>(), 60)) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let docs: Vec<StreamDocument> = good
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut elements = vec![Element::text(common::good_text(&mut rng, 60))];
                if i % 3 == 0 {
                    elements.push(Element::text("Follow us on twitter for more."));
                }
                if i % 4 == 0 {
                    elements.push(Element::text("THE HARBOUR MASTER ANNOUNCED NEW SAILING TIMES"));
                }
                common::doc(&format!("f{i:02}"), 1, elements)
            })
            .collect();
        let samples = docs
            .iter()
            .zip(&good)
            .map(|(d, g)| AnnotatedSample {
                doc_id: d.id.clone(),
                verdict: if *g { HumanVerdict::Good } else { HumanVerdict::Bad(None) },
                rule_verdicts: None,
            })
            .collect();
        let ann = AnnotationSet::new(samples).unwrap();
        let english = RuleSet::english();
        let pick = |id: &str| RuleSet::new(english.rules.iter().filter(|r| r.id == id).cloned().collect()).unwrap();
        let mut state = FeedbackState::new(docs, 30, 2);
        let mut prev: BTreeSet<String> = BTreeSet::new();
        for (round, id) in ["social_media_keywords", "uppercase_heavy", "strip_urls"].iter().enumerate() {
            let (next, report) = feedback_round(state, &pick(id), &ann, threshold, seed.wrapping_add(round as u64)).unwrap();
            let now: BTreeSet<String> = next.rules.ids().into_iter().collect();
            prop_assert!(prev.is_subset(&now));
            for c in &report.candidates {
                prop_assert_eq!(c.promoted, c.fpr <= threshold);
            }
            prev = now;
            state = next;
        }
    }
}

// ---------------------------------------------------------------------------
// dedup

fn near_duplicate_corpus(seed: u64, n: usize) -> Vec<StreamDocument> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<Vec<String>> = (0..4).map(|_| (0..80).map(|_| common::content_word(&mut rng)).collect()).collect();
    (0..n)
        .map(|i| {
            let mut words = bases[rng.random_range(0..bases.len())].clone();
            if rng.random_bool(0.5) {
                let at = rng.random_range(0..words.len());
                words[at] = common::content_word(&mut rng);
            }
            if rng.random_bool(0.3) {
                words = (0..80).map(|_| common::content_word(&mut rng)).collect();
            }
            common::doc(&format!("n{i:02}"), rng.random_range(1..=5), vec![Element::text(words.join(" "))])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dedup_is_idempotent(seed in any::<u64>(), n in 1usize..30) {
        let cfg = DedupConfig::default();
        let (survivors, _) = dedup_corpus(near_duplicate_corpus(seed, n), &cfg).unwrap();
        let (again, report) = dedup_corpus(survivors.clone(), &cfg).unwrap();
        prop_assert_eq!(again, survivors);
        prop_assert!(report.groups.is_empty());
    }

    #[test]
    fn survivors_do_not_depend_on_input_order(seed in any::<u64>(), n in 1usize..30, rot in 0usize..30) {
        let cfg = DedupConfig::default();
        let docs = near_duplicate_corpus(seed, n);
        let mut rotated = docs.clone();
        rotated.rotate_left(rot % n);
        rotated.reverse();
        let ids = |d: Vec<StreamDocument>| d.into_iter().map(|d| d.id).collect::<BTreeSet<_>>();
        let (a, _) = dedup_corpus(docs, &cfg).unwrap();
        let (b, _) = dedup_corpus(rotated, &cfg).unwrap();
        prop_assert_eq!(ids(a), ids(b));
    }
}

// ---------------------------------------------------------------------------
// image pipeline

#[derive(Default)]
struct Counting {
    calls: AtomicUsize,
}

impl Transport for Counting {
    fn request(&self, url: &str) -> Result<Response, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Response { bytes: url.as_bytes().to_vec(), content_type: None })
    }
}

proptest! {
    #[test]
    fn bloom_has_no_false_negatives(ops in prop::collection::vec((any::<bool>(), 0u16..500), 1..2000), m in 64usize..4096, k in 1u32..8) {
        let mut bloom = BloomFilter::new(m, k);
        let mut truth = HashSet::new();
        for (insert, key) in ops {
            let key = key.to_string();
            if insert {
                bloom.insert(&key);
                truth.insert(key);
            } else if truth.contains(&key) {
                prop_assert!(bloom.contains(&key));
            }
        }
    }

    #[test]
    fn fetch_count_is_distinct_unseen_urls(
        urls in prop::collection::vec((0u8..20, prop::option::of("[a-z]{1,4}")), 1..60),
        seen in prop::collection::vec(0u8..20, 0..10),
    ) {
        let mut bloom = BloomFilter::new(1 << 16, 7);
        for s in &seen {
            bloom.insert(&normalize_url(&format!("http://h{}.test/img/{s}.jpg", s % 3)).unwrap());
        }
        let tasks: Vec<FetchTask> = urls
            .iter()
            .map(|(n, frag)| {
                let frag = frag.as_ref().map(|f| format!("#{f}")).unwrap_or_default();
                FetchTask::new(&format!("HTTP://H{}.test/img/{n}.jpg{frag}", n % 3), "doc").unwrap()
            })
            .collect();
        let distinct: BTreeSet<u8> = urls.iter().map(|(n, _)| *n).collect();
        let seen: BTreeSet<u8> = seen.into_iter().collect();
        let transport = Counting::default();
        let cfg = FetchConfig { workers: 4, per_host: 2, ..Default::default() };
        let (outcomes, stats) = fetch_images(tasks, &transport, &mut bloom, &cfg);
        prop_assert_eq!(transport.calls.load(Ordering::SeqCst), distinct.difference(&seen).count());
        prop_assert_eq!(stats.requests, distinct.difference(&seen).count());
        prop_assert!(stats.peak_per_host <= 2);
        prop_assert_eq!(outcomes.len(), urls.len());
    }

    #[test]
    fn hashes_survive_integer_downsampling(w in 9u32..40, h in 8u32..40, a in 1u32..4, b in 0u32..3, f in 2u32..4) {
        let small = PixelImage::from_fn(w, h, |x, y| ((a * x + b * y) % 256) as u8).unwrap();
        if (a * (w - 1) + b * (h - 1)) >= 256 {
            return Ok(()); // wrapped, no longer a gradient
        }
        let big = small.upscale(f);
        prop_assert_eq!(dhash(&big), dhash(&small));
        prop_assert_eq!(phash(&big), phash(&small));
    }

    #[test]
    fn mirroring_changes_dhash(w in 9u32..64, h in 8u32..64) {
        let img = PixelImage::from_fn(w, h, |x, _| (x * 255 / (w - 1)) as u8).unwrap();
        prop_assert_ne!(dhash(&img.mirror_horizontal()), dhash(&img));
    }
}

// ---------------------------------------------------------------------------
// scheduler

fn profiles() -> impl Strategy<Value = Profiles> {
    (
        prop::collection::vec((1.0e3f64..2.0e6, 0.0f64..0.95), 4),
        1.0f64..5.0,
    )
        .prop_map(|(stages, ipd)| {
            let mut p = Profiles::reference();
            p.images_per_doc = ipd;
            for (s, (rate, ratio)) in p.stages.iter_mut().zip(stages) {
                s.rate = if s.id == StageId::ImageDownloadFilter { rate / 100.0 } else { rate };
                s.filter_ratio = ratio;
            }
            p
        })
}

proptest! {
    #[test]
    fn filtering_more_never_costs_more(p in profiles(), which in 0usize..4, extra in 0.0f64..0.5) {
        let id = p.stages[which].id;
        let mut harder = p.clone();
        let s = harder.get_mut(id).unwrap();
        s.filter_ratio = (s.filter_ratio + extra).min(0.99);
        for plan in enumerate_plans() {
            let last = plan.nodes.last().unwrap().stages().contains(&id);
            if last {
                continue;
            }
            let before = plan_time(&plan, &p, 1e9).unwrap().total_seconds;
            let after = plan_time(&plan, &harder, 1e9).unwrap().total_seconds;
            prop_assert!(after <= before * (1.0 + 1e-12), "{}: {} -> {}", plan.notation(), before, after);
        }
    }

    #[test]
    fn survivors_independent_of_order(p in profiles()) {
        let plans = enumerate_plans();
        let survivors: Vec<f64> = plans.iter().map(|plan| plan_time(plan, &p, 1e9).unwrap().nodes.last().unwrap().surviving_docs).collect();
        for s in &survivors {
            prop_assert!((s - survivors[0]).abs() <= survivors[0] * 1e-9);
        }
    }
}

// ---------------------------------------------------------------------------
// metrics

proptest! {
    #[test]
    fn unique_fraction_is_integer_consistent(text in paragraph()) {
        let m = metrics_for_text(&text, 0);
        let distinct: HashSet<String> = text.split_whitespace().map(str::to_lowercase).collect();
        prop_assert_eq!((m.unique_words_fraction * m.token_length as f64).round() as usize, distinct.len());
    }

    #[test]
    fn token_length_is_additive(a in paragraph(), b in paragraph()) {
        let joined = format!("{a}\n{b}");
        prop_assert_eq!(
            metrics_for_text(&joined, 0).token_length,
            metrics_for_text(&a, 0).token_length + metrics_for_text(&b, 0).token_length
        );
    }

    #[test]
    fn aggregate_ignores_order(texts in prop::collection::vec((paragraph(), 0usize..6), 0..30), rot in 0usize..30) {
        let spec = BinSpec::default();
        let ms: Vec<_> = texts.iter().map(|(t, i)| metrics_for_text(t, *i)).collect();
        let mut shuffled = ms.clone();
        if !shuffled.is_empty() {
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
        }
        prop_assert_eq!(aggregate(&ms, &spec).unwrap(), aggregate(&shuffled, &spec).unwrap());
    }
}

// ---------------------------------------------------------------------------
// pipeline

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pipeline_deterministic_and_lossless(docs in prop::collection::vec(document(), 0..25), hard in any::<bool>()) {
        let mut docs = docs;
        for (i, d) in docs.iter_mut().enumerate() {
            d.id = format!("{i:03}{}", d.id);
        }
        let input = common::to_jsonl(&docs);
        let run = |workers| {
            let cfg = PipelineConfig { workers, hard_drop: hard, queue_capacity: 3, ..Default::default() };
            Pipeline::new(cfg).unwrap().run_str(&input).unwrap()
        };
        let (a, b) = (run(1), run(5));
        prop_assert_eq!(&a.documents, &b.documents);
        prop_assert_eq!(&a.rejects, &b.rejects);
        prop_assert_eq!(&a.annotations, &b.annotations);
        prop_assert_eq!(&a.report, &b.report);
        let mut seen: Vec<String> = a.documents.iter().map(|d| d.id.clone()).collect();
        seen.extend(a.rejects.values().flatten().map(|(id, _)| id.clone()));
        seen.sort();
        let mut want: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        want.sort();
        prop_assert_eq!(seen, want);
    }
}
