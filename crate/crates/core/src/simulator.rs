//! Synthetic respondents with two separate constructs: a holistic verdict and
//! a text that reports only the most salient episodes of the visit.
//!
//! Each respondent lives through a few episodes with a sentiment in [-1, 1].
//! The verdict integrates all of them (peak-end weighted) plus a dispositional
//! affinity that never reaches the text. The text describes the top-k episodes
//! by salience, and negative episodes are more salient. Polarity words come
//! from the bundled lexicon so the lexicon provider can read the text back.

use std::io::Write;
use std::sync::OnceLock;

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::annotate::Lexicon;
use crate::error::{Error, Result};
use crate::model::{Aspect, AspectRatings, Rating, SessionRecord};

const DEFAULTS: &str = include_str!("../data/sim_defaults.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub version: u32,
    pub seed: u64,
    pub corpus_size: usize,
    pub start_date: NaiveDate,
    pub days: u32,
    pub teams: u32,
    pub episode_slots: usize,
    pub report_top_k: usize,
    pub good_mood: f64,
    pub bad_mood: f64,
    pub bad_mood_prob: f64,
    pub episode_sd: f64,
    pub friction_prob: f64,
    pub friction_mean: f64,
    pub friction_sd: f64,
    pub amplification: f64,
    pub salience_floor: f64,
    pub salience_jitter_sd: f64,
    pub peak_end_weight: f64,
    pub affinity_mean: f64,
    pub affinity_sd: f64,
    pub verdict_noise_sd: f64,
    pub daily_shock_sd: f64,
    pub aspect_verdict_weight: f64,
    pub aspect_noise_sd: f64,
    pub text_length_median: f64,
    pub text_length_sigma: f64,
    pub lexicon_coverage: f64,
    pub friction_ramp: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        static PARSED: OnceLock<SimParams> = OnceLock::new();
        PARSED
            .get_or_init(|| SimParams::from_toml(DEFAULTS).expect("bundled defaults are valid"))
            .clone()
    }
}

impl SimParams {
    /// Parses a full parameter set and validates it.
    pub fn from_toml(src: &str) -> Result<Self> {
        let p: SimParams =
            toml::from_str(src).map_err(|e| Error::Config(format!("simulator params: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    /// The constructs coincide: no amplification, no affinity, no peak-end
    /// weighting, every episode reported. The predicted-minus-verdict gap
    /// should vanish up to noise.
    pub fn ablated(&self) -> Self {
        SimParams {
            amplification: 1.0,
            affinity_mean: 0.0,
            affinity_sd: 0.0,
            peak_end_weight: 0.0,
            report_top_k: self.episode_slots,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.corpus_size == 0 {
            return bad("corpus_size must be at least 1".into());
        }
        if self.days == 0 || self.teams == 0 {
            return bad("days and teams must be at least 1".into());
        }
        if self.report_top_k > self.episode_slots {
            return bad(format!(
                "report_top_k {} exceeds episode_slots {}",
                self.report_top_k, self.episode_slots
            ));
        }
        let scales = [
            ("episode_sd", self.episode_sd),
            ("friction_sd", self.friction_sd),
            ("salience_floor", self.salience_floor),
            ("salience_jitter_sd", self.salience_jitter_sd),
            ("affinity_sd", self.affinity_sd),
            ("verdict_noise_sd", self.verdict_noise_sd),
            ("daily_shock_sd", self.daily_shock_sd),
            ("aspect_noise_sd", self.aspect_noise_sd),
            ("text_length_median", self.text_length_median),
            ("text_length_sigma", self.text_length_sigma),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        let probs = [
            ("bad_mood_prob", self.bad_mood_prob),
            ("friction_prob", self.friction_prob),
            ("peak_end_weight", self.peak_end_weight),
            ("aspect_verdict_weight", self.aspect_verdict_weight),
            ("lexicon_coverage", self.lexicon_coverage),
            ("friction_ramp", self.friction_ramp),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.amplification.is_finite() && self.amplification >= 1.0) {
            return bad(format!("amplification must be >= 1, got {}", self.amplification));
        }
        for (name, v) in [
            ("good_mood", self.good_mood),
            ("bad_mood", self.bad_mood),
            ("friction_mean", self.friction_mean),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [-1, 1], got {v}"));
            }
        }
        if !self.affinity_mean.is_finite() {
            return bad("affinity_mean must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub aspect: Aspect,
    pub sentiment: f64,
    pub salience_weight: f64,
    pub phrase: String,
    pub reported: bool,
    /// Scenario friction that reaches the text but not the verdict.
    pub injected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSession {
    pub record: SessionRecord,
    pub latent_verdict: Rating,
    pub latent_salience: f64,
    pub affinity: f64,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub verdict: Rating,
    pub salience: f64,
}

pub fn latent_truth(session: &SimulatedSession) -> LatentTruth {
    LatentTruth {
        verdict: session.latent_verdict,
        salience: session.latent_salience,
    }
}

fn aspect_nouns(a: Aspect) -> &'static [&'static str] {
    match a {
        Aspect::Staff => &["the staff", "the ushers", "the gate crew"],
        Aspect::Concessions => &["the food", "the concession stand", "the hot dogs"],
        Aspect::Entertainment => &["the between-inning entertainment", "the music", "the scoreboard show"],
        Aspect::Seatview => &["our seats", "the view from our section"],
        Aspect::Merchandise => &["the team store", "the merchandise selection"],
        Aspect::Parking => &["parking", "the parking lot"],
        Aspect::ParkingExit => &["getting out of the lot", "the exit after the game"],
    }
}

// {n} noun, {a} and {b} polarity words
const TEMPLATES: &[&str] = &[
    "{n} was {a} and {b}.",
    "Honestly {n} was {a}, just {b} all around.",
    "I thought {n} was {a}. Really {b}.",
    "{n} felt {a} and {b} to us.",
    "We found {n} {a}, even {b}.",
];

/// Sentences with no polarity words; they pad texts to realistic lengths.
pub const FILLERS: &[&str] = &[
    "We came out for the Saturday afternoon game with my brother and his kids.",
    "It was our second visit this season.",
    "We sat along the first base line near the visiting dugout.",
    "The game went into extra innings.",
    "My son brought his glove hoping to catch a foul ball.",
    "We took the train in from the suburbs.",
    "I have been a season ticket holder for about six years now.",
    "We stayed until the final out.",
    "It was a warm night with a breeze coming off the water.",
    "This was the first game for my daughter.",
    "We arrived about an hour before first pitch.",
    "The home team won by two runs in the eighth inning.",
    "My wife and I try to catch a game every month.",
    "We celebrated a birthday with a group of twelve.",
    "I drove in from two hours away for this one.",
    "There was a fireworks show scheduled after the game.",
    "We brought my father, who has followed this team since the sixties.",
    "It rained for a bit in the third inning but cleared up.",
    "I bought the tickets through the app a week ahead.",
    "Our group was mostly coworkers from the office.",
];

const OFF_LEXICON_POSITIVE: &[&str] = &["stellar", "lovely", "splendid", "marvelous", "swell"];
const OFF_LEXICON_NEGATIVE: &[&str] = &["lousy", "dreadful", "abysmal", "shoddy", "subpar"];

/// Lexicon words grouped by weight, ascending.
struct Vocabulary {
    levels: Vec<(f64, Vec<&'static str>)>,
}

impl Vocabulary {
    fn bundled() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(|| {
            let mut levels: Vec<(f64, Vec<&'static str>)> = Vec::new();
            let mut entries: Vec<(&'static str, f64)> = Lexicon::bundled()
                .entries()
                .iter()
                .map(|(w, x)| (w.as_str(), *x))
                .collect();
            entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
            for (w, x) in entries {
                match levels.last_mut() {
                    Some((lx, ws)) if *lx == x => ws.push(w),
                    _ => levels.push((x, vec![w])),
                }
            }
            Vocabulary { levels }
        })
    }

    /// A word whose weight equals `s` in expectation (randomized rounding
    /// between the two neighboring weight levels).
    fn word_for<R: Rng>(&self, s: f64, rng: &mut R) -> &'static str {
        let first = self.levels[0].0;
        let last = self.levels[self.levels.len() - 1].0;
        let s = s.clamp(first, last);
        let hi = self.levels.partition_point(|(x, _)| *x < s);
        let level = if self.levels[hi].0 == s || hi == 0 {
            hi
        } else {
            let (lo_x, hi_x) = (self.levels[hi - 1].0, self.levels[hi].0);
            if rng.random::<f64>() < (s - lo_x) / (hi_x - lo_x) { hi } else { hi - 1 }
        };
        self.levels[level].1.choose(rng).expect("nonempty level")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn polarity_word<R: Rng>(s: f64, coverage: f64, rng: &mut R) -> &'static str {
    let w = Vocabulary::bundled().word_for(s, rng);
    if coverage < 1.0 && rng.random::<f64>() >= coverage {
        let pool = if s >= 0.0 { OFF_LEXICON_POSITIVE } else { OFF_LEXICON_NEGATIVE };
        return pool.choose(rng).expect("nonempty pool");
    }
    w
}

fn core_phrase<R: Rng>(aspect: Aspect, s: f64, coverage: f64, rng: &mut R) -> String {
    let noun = aspect_nouns(aspect).choose(rng).expect("nouns");
    let template = TEMPLATES.choose(rng).expect("templates");
    let a = polarity_word(s, coverage, rng);
    let b = polarity_word(s, coverage, rng);
    let text = template.replace("{n}", noun).replace("{a}", a).replace("{b}", b);
    capitalize(&text)
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated scale")
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn draw_episode<R: Rng>(p: &SimParams, mood: f64, shock: f64, rng: &mut R) -> (Aspect, f64) {
    let aspect = *Aspect::ALL.choose(rng).expect("aspects");
    let s = if rng.random::<f64>() < p.friction_prob {
        normal(p.friction_mean, p.friction_sd).sample(rng)
    } else {
        normal(mood, p.episode_sd).sample(rng)
    };
    (aspect, clamp_unit(s + shock))
}

fn salience_weight<R: Rng>(p: &SimParams, s: f64, rng: &mut R) -> f64 {
    let jitter = LogNormal::new(0.0, p.salience_jitter_sd).expect("validated").sample(rng);
    (s.abs() + p.salience_floor) * (1.0 + (p.amplification - 1.0) * (-s).max(0.0)) * jitter
}

/// Samples one respondent. `shock` is the day's shared sentiment shift and
/// `inject_prob` the chance of a text-only friction episode.
pub fn sample_session<R: Rng>(
    p: &SimParams,
    session_id: &str,
    team_id: &str,
    date: NaiveDate,
    shock: f64,
    inject_prob: f64,
    rng: &mut R,
) -> Result<SimulatedSession> {
    let mood = if rng.random::<f64>() < p.bad_mood_prob { p.bad_mood } else { p.good_mood };
    let affinity = normal(p.affinity_mean, p.affinity_sd).sample(rng);

    let mut episodes: Vec<Episode> = (0..p.episode_slots)
        .map(|_| {
            let (aspect, sentiment) = draw_episode(p, mood, shock, rng);
            Episode {
                aspect,
                sentiment,
                salience_weight: salience_weight(p, sentiment, rng),
                phrase: core_phrase(aspect, sentiment, p.lexicon_coverage, rng),
                reported: false,
                injected: false,
            }
        })
        .collect();
    if inject_prob > 0.0 && rng.random::<f64>() < inject_prob {
        let aspect = *Aspect::ALL.choose(rng).expect("aspects");
        let sentiment = clamp_unit(normal(p.friction_mean, p.friction_sd).sample(rng));
        episodes.push(Episode {
            aspect,
            sentiment,
            salience_weight: salience_weight(p, sentiment, rng),
            phrase: core_phrase(aspect, sentiment, p.lexicon_coverage, rng),
            reported: false,
            injected: true,
        });
    }

    // verdict: peak-end weighted aggregate of the lived (non-injected) episodes
    let lived: Vec<f64> = episodes.iter().filter(|e| !e.injected).map(|e| e.sentiment).collect();
    let agg = if lived.is_empty() {
        0.0
    } else {
        let mean = lived.iter().sum::<f64>() / lived.len() as f64;
        let peak = lived.iter().copied().fold(0.0, |acc: f64, s| if s.abs() > acc.abs() { s } else { acc });
        let end = *lived.last().expect("nonempty");
        (1.0 - p.peak_end_weight) * mean + p.peak_end_weight * (peak + end) / 2.0
    };
    let noise = normal(0.0, p.verdict_noise_sd).sample(rng);
    let verdict = Rating::clamped(5.0 + 5.0 * agg + affinity + noise);

    // reporting: top-k by salience, kept in the order they happened
    let k = p.report_top_k.min(episodes.len());
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.sort_by(|&a, &b| episodes[b].salience_weight.total_cmp(&episodes[a].salience_weight));
    for &i in &order[..k] {
        episodes[i].reported = true;
    }

    let reported: Vec<usize> = (0..episodes.len()).filter(|&i| episodes[i].reported).collect();
    let wsum: f64 = reported.iter().map(|&i| episodes[i].salience_weight).sum();
    let latent_salience = if reported.is_empty() || wsum == 0.0 {
        5.0
    } else {
        let m = reported
            .iter()
            .map(|&i| episodes[i].salience_weight * episodes[i].sentiment)
            .sum::<f64>()
            / wsum;
        (5.0 + 5.0 * m).clamp(0.0, 10.0)
    };

    // pad with neutral sentences toward a lognormal length target
    let target = LogNormal::new(p.text_length_median.max(1.0).ln(), p.text_length_sigma)
        .expect("validated")
        .sample(rng);
    let mut fillers: Vec<&str> = FILLERS.to_vec();
    let mut pad: Vec<&str> = Vec::new();
    let base_len: usize = reported.iter().map(|&i| episodes[i].phrase.chars().count() + 1).sum();
    let mut len = base_len;
    while !fillers.is_empty() {
        let j = rng.random_range(0..fillers.len());
        let f = fillers[j];
        let next = f.chars().count() + 1;
        if (len as f64) + next as f64 / 2.0 > target && !(reported.is_empty() && pad.is_empty()) {
            break;
        }
        pad.push(fillers.swap_remove(j));
        len += next;
    }
    let text = if reported.is_empty() {
        pad.join(" ")
    } else {
        for (n, f) in pad.iter().enumerate() {
            let slot = reported[n % reported.len()];
            episodes[slot].phrase.push(' ');
            episodes[slot].phrase.push_str(f);
        }
        reported.iter().map(|&i| episodes[i].phrase.as_str()).collect::<Vec<_>>().join(" ")
    };

    let mut aspects = AspectRatings::new();
    for aspect in Aspect::ALL {
        let ss: Vec<f64> = episodes
            .iter()
            .filter(|e| !e.injected && e.aspect == aspect)
            .map(|e| e.sentiment)
            .collect();
        if ss.is_empty() {
            continue;
        }
        let sa = ss.iter().sum::<f64>() / ss.len() as f64;
        let w = p.aspect_verdict_weight;
        let noise = normal(0.0, p.aspect_noise_sd).sample(rng);
        aspects.set(
            aspect,
            Rating::clamped((1.0 - w) * (5.0 + 5.0 * sa) + w * verdict.as_f64() + noise),
        );
    }

    Ok(SimulatedSession {
        record: SessionRecord::new(session_id, team_id, date, text, verdict, aspects)?,
        latent_verdict: verdict,
        latent_salience,
        affinity,
        episodes,
    })
}

/// Samples a whole corpus from one ChaCha stream seeded by `params.seed`.
pub fn sample_corpus(p: &SimParams) -> Result<Vec<SimulatedSession>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let shock = normal(0.0, p.daily_shock_sd);
    let mut shocks: Vec<f64> = (0..p.days).map(|_| shock.sample(&mut rng)).collect();
    // centered: days move relative to each other, the season level stays put
    let level = shocks.iter().sum::<f64>() / shocks.len() as f64;
    shocks.iter_mut().for_each(|s| *s -= level);
    let width = p.corpus_size.to_string().len().max(5);
    (0..p.corpus_size)
        .map(|i| {
            let day = rng.random_range(0..p.days);
            let team = rng.random_range(0..p.teams);
            let date = p
                .start_date
                .checked_add_days(Days::new(u64::from(day)))
                .ok_or_else(|| Error::Config("date range overflows".into()))?;
            let ramp = if p.days == 1 {
                p.friction_ramp
            } else {
                p.friction_ramp * f64::from(day) / f64::from(p.days - 1)
            };
            sample_session(
                p,
                &format!("sim{i:0width$}"),
                &format!("team_{:02}", team + 1),
                date,
                shocks[day as usize],
                ramp,
                &mut rng,
            )
        })
        .collect()
}

pub fn records(corpus: &[SimulatedSession]) -> Vec<SessionRecord> {
    corpus.iter().map(|s| s.record.clone()).collect()
}

#[derive(Serialize)]
struct LatentLine<'a> {
    session_id: &'a str,
    latent_verdict: Rating,
    latent_salience: f64,
    affinity: f64,
    reported_episodes: usize,
}

/// Sidecar of latents keyed by session id, one JSON object per line.
pub fn write_latents_jsonl<W: Write>(corpus: &[SimulatedSession], mut out: W) -> Result<()> {
    for s in corpus {
        let line = LatentLine {
            session_id: &s.record.session_id,
            latent_verdict: s.latent_verdict,
            latent_salience: s.latent_salience,
            affinity: s.affinity,
            reported_episodes: s.episodes.iter().filter(|e| e.reported).count(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<latents>", e))?;
    }
    Ok(())
}
