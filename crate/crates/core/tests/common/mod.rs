//! Deterministic synthetic survey corpora and embeddings for tests.
#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use harmoniser_core::corpus::{Question, QuestionId, ResponseOption, TopicCode, Typology};
use harmoniser_core::embedding::{EmbeddingRecord, EmbeddingStore, RepKind, TokenMatrix};
use harmoniser_core::fingerprint::fnv1a64;
use harmoniser_core::lexical::tokenize;
use harmoniser_core::evaluation::{
    label_distribution, sample_for_review, topic_match_metrics_with, Annotation, Averaging, Label,
    LabelDistribution, MetricsReport,
};
use harmoniser_core::hybrid::{FusionWeights, HybridScorer};
use harmoniser_core::lexical::{Analyzer, Bm25Params, Bm25Scorer, InvertedIndex};
use harmoniser_core::pipeline::{end_to_end_rank, rerank, Bm25Model, DenseModel, HybridModel, RankingRun};
use harmoniser_core::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_path(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

pub struct Topic {
    pub name: &'static str,
    pub subs: &'static [&'static str],
    pub stems: &'static [&'static str],
    pub words: &'static [&'static str],
}

pub const TOPICS: [Topic; 16] = [
    Topic { name: "Education", subs: &["Primary Schooling", "Secondary Schooling", "Higher Education"],
        stems: &["Do you like answering questions in class?", "How often do you get homework?", "Did you attend a nursery school?", "What qualifications have you obtained?"],
        words: &["school", "class", "teacher", "homework", "exam", "university", "qualification", "lessons", "pupil", "degree"] },
    Topic { name: "Health", subs: &["General Health", "Medication", "Hospital Admissions"],
        stems: &["How would you describe your health in general?", "Have you taken any medicine for this condition?", "Were you admitted to hospital in the last year?"],
        words: &["health", "illness", "doctor", "medicine", "hospital", "pain", "treatment", "condition", "symptoms", "nurse"] },
    Topic { name: "Housing", subs: &["Tenure", "Amenities", "Neighbourhood"],
        stems: &["Do you use gas for cooking?", "How satisfied are you with the area you live in?", "Is this accommodation owned or rented?", "How many bedrooms does the dwelling have?"],
        words: &["house", "dwelling", "rooms", "rent", "mortgage", "kitchen", "heating", "area", "accommodation", "garden"] },
    Topic { name: "Employment", subs: &["Current Job", "Job Search", "Working Hours"],
        stems: &["What is his current job?", "How many hours do you usually work each week?", "Are you currently looking for paid work?"],
        words: &["job", "work", "employer", "hours", "manager", "employee", "wage", "occupation", "paid", "overtime"] },
    Topic { name: "Income", subs: &["Earnings", "Benefits", "Savings"],
        stems: &["What is your total household income?", "Do you receive any state benefits?", "Do you have any savings or investments?"],
        words: &["income", "money", "benefit", "savings", "pension", "allowance", "earnings", "tax", "bills", "debt"] },
    Topic { name: "Family", subs: &["Partnership", "Children", "Childcare"],
        stems: &["What arrangements have you made about looking after your baby when you begin work?", "Are you currently married or living with a partner?", "How many children live with you?"],
        words: &["partner", "baby", "child", "married", "mother", "father", "grandparent", "family", "sibling", "nursery"] },
    Topic { name: "Wellbeing", subs: &["Life Satisfaction", "Mood", "Self Harm"],
        stems: &["The thought of harming myself has occurred to me:", "How happy do you feel at the moment?", "Do you often feel lonely?"],
        words: &["happy", "lonely", "worried", "mood", "feel", "stress", "anxious", "sad", "calm", "satisfied"] },
    Topic { name: "Diet", subs: &["Meals", "Drinks"],
        stems: &["How often do you eat fresh fruit?", "Do you usually have breakfast?", "How many sugary drinks do you have a day?"],
        words: &["eat", "fruit", "vegetables", "breakfast", "meal", "drinks", "sugar", "food", "snacks", "lunch"] },
    Topic { name: "Physical Activity", subs: &["Sport", "Walking"],
        stems: &["How often do you take part in sport?", "How many days did you walk for at least ten minutes?"],
        words: &["sport", "exercise", "walk", "swim", "cycling", "active", "running", "gym", "football", "minutes"] },
    Topic { name: "Smoking and Alcohol", subs: &["Smoking", "Alcohol"],
        stems: &["Do you smoke cigarettes at all nowadays?", "How often do you have a drink containing alcohol?"],
        words: &["smoke", "cigarettes", "tobacco", "alcohol", "drink", "pints", "wine", "beer", "units", "nowadays"] },
    Topic { name: "Politics", subs: &["Voting", "Democracy"],
        stems: &["Are you satisfied with the way democracy works in this country?", "Did you vote in the last general election?"],
        words: &["vote", "election", "democracy", "government", "party", "political", "parliament", "country", "policy", "council"] },
    Topic { name: "Allergies", subs: &["Allergens", "Reactions"],
        stems: &["What is she allergic to? (tick all that apply) dog", "Has he ever had a reaction to peanuts?"],
        words: &["allergic", "allergy", "reaction", "peanuts", "pollen", "dog", "cat", "eczema", "asthma", "rash"] },
    Topic { name: "Transport", subs: &["Commuting", "Car Ownership"],
        stems: &["How do you usually travel to work?", "Does anyone in the household own a car?"],
        words: &["travel", "car", "bus", "train", "commute", "journey", "drive", "bicycle", "van", "licence"] },
    Topic { name: "Leisure", subs: &["Hobbies", "Media"],
        stems: &["How many hours a day do you spend watching television?", "Do you read books for enjoyment?"],
        words: &["television", "books", "reading", "hobby", "music", "games", "internet", "cinema", "clubs", "weekend"] },
    Topic { name: "Crime", subs: &["Victimisation", "Safety"],
        stems: &["How safe do you feel walking alone after dark?", "Has anything been stolen from you in the last year?"],
        words: &["safe", "crime", "stolen", "police", "burglary", "dark", "alone", "victim", "vandalism", "theft"] },
    Topic { name: "Religion", subs: &["Affiliation", "Attendance"],
        stems: &["Do you regard yourself as belonging to any particular religion?", "How often do you attend religious services?"],
        words: &["religion", "church", "belief", "services", "faith", "worship", "prayer", "mosque", "temple", "belonging"] },
];

pub const OPTION_SETS: &[&[&str]] = &[
    &["yes", "no"],
    &["yes", "no", "don't know"],
    &["never", "sometimes", "often", "always"],
    &["very satisfied", "fairly satisfied", "neither satisfied nor dissatisfied", "a little dissatisfied", "very dissatisfied", "don't know"],
    &["strongly agree", "agree", "neither agree nor disagree", "disagree", "strongly disagree"],
    &["yes, quite often", "sometimes", "hardly ever", "never"],
    &["excellent", "very good", "good", "fair", "poor"],
    &["every day", "most days", "once or twice a week", "less often", "not at all"],
    &["self-employed", "manager", "foreman", "employee"],
    &["yes, ring(s) only", "yes, oven only", "yes, ring(s) and oven", "no, not at all"],
    &["none", "one", "two", "three", "four or more"],
    &["owned outright", "buying with a mortgage", "rented from council", "rented privately", "rent free", "other"],
];

/// Labels that show up in long code lists regardless of topic.
pub const GENERIC_LABELS: &[&str] = &[
    "other", "none of these", "not applicable", "refused", "england", "wales", "scotland",
    "northern ireland", "london", "abroad", "mother", "father", "brother", "sister", "friend",
    "neighbour", "someone else", "prefer not to say", "mentioned", "not mentioned", "morning",
    "afternoon", "evening", "weekday", "monday", "saturday", "sunday", "less than a year",
    "one to five years", "more than five years", "under 16", "over 65",
];

pub const QUESTIONNAIRES: &[(&str, &str, i32)] = &[
    ("NCDS Age 33 Cohort Member Interview", "NCDS", 1991),
    ("Wave 3 Questionnaire", "BHPS", 1993),
    ("1989 Main Questionnaire", "BSA", 1989),
    ("Me and My Baby", "MCS", 2001),
    ("Me and My School", "MCS", 2008),
    ("MCS Age 7 Cohort Member Paper Self-Completion", "MCS", 2008),
    ("Your Health Events and Feelings", "ALSPAC", 1992),
    ("Partner and Home", "ALSPAC", 1993),
    ("Looking After the Baby", "ALSPAC", 1994),
    ("NSHD 1946 Home Visit", "NSHD", 1950),
    ("Next Steps Wave 1", "LSYPE", 2004),
    ("Age 50 Biomedical Survey", "BCS70", 2020),
];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn options_from(labels: &[&str]) -> Vec<ResponseOption> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| ResponseOption::new((i + 1).to_string(), *l))
        .collect()
}

/// A realistic-looking code-list question on `topic`.
pub fn make_question(rng: &mut ChaCha8Rng, id: String, topic: usize) -> Question {
    let t = &TOPICS[topic];
    let mut text = pick(rng, t.stems).to_string();
    let extra = rng.gen_range(0..4);
    for _ in 0..extra {
        text.push(' ');
        text.push_str(pick(rng, t.words));
    }
    let mut labels: Vec<&str> = pick(rng, OPTION_SETS).to_vec();
    let topical = rng.gen_range(0..3);
    for _ in 0..topical {
        labels.push(pick(rng, t.words));
    }
    let (questionnaire, study, year) = *pick(rng, QUESTIONNAIRES);
    let sub = if rng.gen_bool(0.8) {
        Some(pick(rng, t.subs).to_string())
    } else {
        None
    };
    Question {
        id: QuestionId(id),
        questionnaire: questionnaire.into(),
        study: study.into(),
        year,
        text,
        options: options_from(&labels),
        typology: if labels.len() <= 2 { Typology::Compound } else { Typology::Standard },
        topic: TopicCode::new(t.name, sub),
        is_code_list: true,
    }
}

fn token_len(q: &Question) -> usize {
    tokenize(&harmoniser_core::corpus::build_input_sequence(q).unwrap()).len()
}

/// 120 code-list questions with pairwise distinct token lengths, so BM25
/// scores within any query's candidate list are strictly ordered.
pub fn fixture_corpus_120() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut lengths = std::collections::HashSet::new();
    let mut questions = Vec::new();
    while questions.len() < 120 {
        let topic = questions.len() % TOPICS.len();
        let mut q = make_question(&mut rng, format!("fx{:03}", questions.len()), topic);
        // Longer option lists spread the lengths out.
        let pad = rng.gen_range(0..150);
        for _ in 0..pad {
            let label = if rng.gen_bool(0.75) {
                *pick(&mut rng, GENERIC_LABELS)
            } else {
                {
                let words = pick(&mut rng, &TOPICS).words;
                *pick(&mut rng, words)
            }
            };
            q.options.push(ResponseOption::new((q.options.len() + 1).to_string(), label));
        }
        if lengths.insert(token_len(&q)) {
            questions.push(q);
        }
    }
    Corpus::from_questions(questions).unwrap()
}

/// Twelve short questions across four topics for the golden hybrid ranking.
pub fn fixture_corpus_12() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let questions = (0..12)
        .map(|i| make_question(&mut rng, format!("g{i:02}"), [2, 3, 6, 10][i % 4]))
        .collect();
    Corpus::from_questions(questions).unwrap()
}

/// Ten verbatim twins (same wording and options, different questionnaires)
/// among forty distractors.
pub fn duplicate_corpus() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut questions = Vec::new();
    for pair in 0..10 {
        let topic = pair % TOPICS.len();
        let mut base = make_question(&mut rng, format!("dup{pair:02}a"), topic);
        base.text = format!("{} {}", TOPICS[topic].stems[0], TOPICS[topic].words[pair % 10]);
        let mut twin = base.clone();
        twin.id = QuestionId(format!("dup{pair:02}b"));
        let (qn, study, year) = QUESTIONNAIRES[(pair + 5) % QUESTIONNAIRES.len()];
        twin.questionnaire = qn.into();
        twin.study = study.into();
        twin.year = year;
        questions.push(base);
        questions.push(twin);
    }
    for i in 0..40 {
        questions.push(make_question(&mut rng, format!("other{i:02}"), (i * 5) % TOPICS.len()));
    }
    Corpus::from_questions(questions).unwrap()
}

/// Large corpus for throughput tests: topic stems plus Zipf-distributed filler
/// so postings lists have a realistic long tail. Mean length is about
/// `mean_tokens`.
pub fn bulk_corpus(n: usize, mean_tokens: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 20_000usize;
    // Zipf(1) sampling by inverse CDF over harmonic partial sums.
    let mut cdf = Vec::with_capacity(vocab);
    let mut acc = 0.0;
    for r in 1..=vocab {
        acc += 1.0 / r as f64;
        cdf.push(acc);
    }
    let total = acc;
    let mut questions = Vec::with_capacity(n);
    for i in 0..n {
        let topic = rng.gen_range(0..TOPICS.len());
        let mut q = make_question(&mut rng, format!("b{i:06}"), topic);
        let base = token_len(&q);
        let target = rng.gen_range(mean_tokens / 2..=mean_tokens * 3 / 2);
        if target > base {
            let mut filler = String::new();
            for _ in 0..target - base {
                let u = rng.gen::<f64>() * total;
                let r = cdf.partition_point(|&c| c < u);
                filler.push_str(&format!(" w{r}"));
            }
            q.text.push_str(&filler);
        }
        questions.push(q);
    }
    Corpus::from_questions(questions).unwrap()
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ seed);
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Bag-of-token embeddings: each token maps to a fixed pseudo-random vector,
/// token rows mix in their left neighbour, and the sequence vector is either
/// the row mean or a summary built from the first row.
pub fn synthetic_store(
    corpus: &Corpus,
    dim: usize,
    rep_kind: RepKind,
    with_tokens: bool,
    max_tokens: usize,
    seed: u64,
) -> EmbeddingStore {
    let records = corpus
        .iter()
        .map(|q| {
            let text = harmoniser_core::corpus::build_input_sequence(q).unwrap();
            let tokens = tokenize(&text);
            let mut rows: Vec<Vec<f32>> = Vec::new();
            let mut prev: Option<Vec<f32>> = None;
            for t in tokens.iter().take(max_tokens) {
                let v = token_vector(t, dim, seed);
                let row: Vec<f32> = match &prev {
                    Some(p) => v.iter().zip(p).map(|(a, b)| a + 0.25 * b).collect(),
                    None => v.clone(),
                };
                prev = Some(v);
                rows.push(row);
            }
            let mean: Vec<f32> = (0..dim)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f32>() / rows.len() as f32)
                .collect();
            let dense = match rep_kind {
                RepKind::Mean => mean,
                RepKind::Sst => rows[0].iter().zip(&mean).map(|(a, m)| a + 0.5 * m).collect(),
            };
            EmbeddingRecord {
                question_id: q.id.clone(),
                dense,
                tokens: with_tokens.then(|| TokenMatrix::from_rows(&rows).unwrap()),
            }
        })
        .collect();
    EmbeddingStore::new(dim, rep_kind, format!("synthetic-{rep_kind}-d{dim}"), records).unwrap()
}

pub fn corpus_bytes(corpus: &Corpus) -> Vec<u8> {
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).unwrap();
    buf
}

pub fn load_corpus(name: &str) -> Corpus {
    let bytes = std::fs::read(fixture_path(name)).unwrap();
    harmoniser_core::corpus::parse_corpus(bytes.as_slice()).unwrap()
}

pub fn load_store(name: &str) -> EmbeddingStore {
    let bytes = std::fs::read(fixture_path(name)).unwrap();
    EmbeddingStore::from_bytes(&bytes).unwrap()
}

/// The four runs behind the golden report files: BM25, dense (SST), hybrid
/// end-to-end and hybrid re-ranking of the BM25 run.
pub fn report_fixture_runs(corpus: &Corpus) -> Vec<RankingRun> {
    let mean = load_store("corpus120_mean.hemb");
    let sst = load_store("corpus120_sst.hemb");
    let index = InvertedIndex::build(corpus, Analyzer::default()).unwrap();
    let scorer = Bm25Scorer::new(&index, Bm25Params::default()).unwrap();
    let bm25 = end_to_end_rank(&Bm25Model::new(corpus, scorer.clone()), corpus, 50, 1).unwrap();
    let dense = end_to_end_rank(&DenseModel::new(&sst), corpus, 50, 1).unwrap();
    let hybrid_scorer = HybridScorer::new(corpus, Some(&scorer), Some(&mean), FusionWeights::default()).unwrap();
    let hybrid = HybridModel::new(hybrid_scorer, Some(&scorer), Some(&mean));
    let hybrid_e2e = end_to_end_rank(&hybrid, corpus, 50, 1).unwrap();
    let hybrid_rr = rerank(&bm25, &hybrid, 50, 50, 1).unwrap();
    vec![bm25, dense, hybrid_e2e, hybrid_rr]
}

/// Fixture annotator: exact wording is class 1, same sub-topic 1a, same
/// top-level topic 2, otherwise 3.
pub fn fixture_label(corpus: &Corpus, q: &harmoniser_core::QuestionId, c: &harmoniser_core::QuestionId) -> Label {
    let (a, b) = (corpus.get(q).unwrap(), corpus.get(c).unwrap());
    if a.text == b.text && a.options == b.options {
        Label::Exact
    } else if a.topic == b.topic {
        Label::Equivalent
    } else if a.topic.top_level == b.topic.top_level {
        Label::SubConceptMismatch
    } else {
        Label::TotalMismatch
    }
}


pub fn fixture_metric_reports(corpus: &Corpus, runs: &[RankingRun], averaging: Averaging) -> Vec<MetricsReport> {
    runs.iter()
        .map(|r| MetricsReport::new(r, topic_match_metrics_with(r, corpus, averaging).unwrap()))
        .collect()
}

/// Label distributions for a seeded sample of 40 top-1 pairs from the BM25,
/// dense and hybrid re-rank runs, judged by [`fixture_label`].
pub fn fixture_label_rows(corpus: &Corpus, runs: &[RankingRun]) -> Vec<(String, LabelDistribution)> {
    [&runs[0], &runs[1], &runs[3]]
        .into_iter()
        .map(|run| {
            let annotations: Vec<Annotation> = sample_for_review(run, 40, 203)
                .unwrap()
                .iter()
                .map(|(q, c)| Annotation {
                    query_id: q.clone(),
                    candidate_id: c.clone(),
                    label: fixture_label(corpus, q, c),
                    annotator: "fixture".into(),
                    run_id: run.run_id.clone(),
                    timestamp: "2024-06-01T12:00:00Z".into(),
                })
                .collect();
            (format!("{} {}", run.model, run.mode), label_distribution(&annotations).unwrap())
        })
        .collect()
}
