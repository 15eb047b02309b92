#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eventpoint::evaluation::DisparityMap;
use eventpoint::features::{FeatureSet, Keypoint};
use eventpoint::io;
use eventpoint::selfsup::LossHistory;
use eventpoint::{Event, EventStream, Frame1, Frame3, Geometry, Match, Point2, Polarity, WeightSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_stream(rng: &mut impl Rng, n: usize) -> EventStream {
    let g = Geometry::new(rng.gen_range(1..400), rng.gen_range(1..300));
    let mut t = rng.gen_range(-1_000_000i64..1_000_000);
    let events = (0..n)
        .map(|_| {
            t += rng.gen_range(0..50);
            let p = if rng.gen() { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.gen_range(0..g.width) as u16, rng.gen_range(0..g.height) as u16, t, p)
        })
        .collect();
    EventStream::from_sorted(events, g).unwrap()
}

pub fn random_frame3(rng: &mut impl Rng, w: usize, h: usize) -> Frame3 {
    Frame3::from_raw(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

pub fn random_frame1(rng: &mut impl Rng, w: usize, h: usize) -> Frame1 {
    Frame1::from_raw(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

pub fn random_features(rng: &mut impl Rng, n: usize, dim: usize) -> FeatureSet {
    let (w, h) = (rng.gen_range(1..200), rng.gen_range(1..200));
    let kps = (0..n)
        .map(|_| Keypoint::new(rng.gen_range(0.0..w as f64 - 0.01), rng.gen_range(0.0..h as f64 - 0.01), rng.gen()))
        .collect();
    let desc = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureSet::new(w, h, dim, kps, desc).unwrap()
}

pub fn random_matches(rng: &mut impl Rng, n: usize) -> Vec<Match> {
    (0..n)
        .map(|_| {
            Match::new(
                Point2::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)),
                Point2::new(rng.gen::<f64>() * 1e-9, rng.gen_range(-1e6..1e6)),
                rng.gen(),
            )
        })
        .collect()
}

pub fn random_disparity(rng: &mut impl Rng) -> DisparityMap {
    let mut d = DisparityMap::new(rng.gen_range(1..60), rng.gen_range(1..60));
    for _ in 0..rng.gen_range(0..100) {
        let (x, y) = (rng.gen_range(0..d.width()), rng.gen_range(0..d.height()));
        d.set(x, y, rng.gen_range(0.0..64.0)).unwrap();
    }
    d
}

type Decoder = fn(&[u8]) -> bool;

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// Every reader, applied to arbitrary bytes. The result only reports
/// whether decoding succeeded.
pub const DECODERS: [(&str, Decoder); 11] = [
    ("events", |b| io::decode_events(b).is_ok()),
    ("events_csv", |b| io::decode_events_csv(&text(b)).is_ok()),
    ("ppm", |b| io::decode_ppm(b).is_ok()),
    ("pgm", |b| io::decode_pgm(b).is_ok()),
    ("weights", |b| io::decode_weights(b).is_ok()),
    ("features", |b| io::decode_features(b).is_ok()),
    ("matches_csv", |b| io::decode_matches_csv(&text(b)).is_ok()),
    ("disparity_csv", |b| io::decode_disparity_csv(&text(b)).is_ok()),
    ("loss_csv", |b| io::decode_loss_csv(&text(b)).is_ok()),
    ("config", |b| io::parse_config(&text(b), Path::new("fuzz.ini")).is_ok()),
    ("mask", |b| io::decode_mask(b).is_ok()),
];

/// A valid input for each decoder, capped at 64 KiB.
pub fn seeds(rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut weights = io::encode_weights(&WeightSet::init(0));
    weights.truncate(64 * 1024);
    let history = LossHistory {
        steps: vec![0.5, 0.25, 0.125],
        epochs: vec![0.3],
    };
    vec![
        io::encode_events(&random_stream(rng, 200)).unwrap(),
        io::encode_events_csv(&random_stream(rng, 50)).into_bytes(),
        io::encode_ppm(&random_frame3(rng, 9, 7)),
        io::encode_pgm(&random_frame1(rng, 9, 7)),
        weights,
        io::encode_features(&random_features(rng, 5, 8)).unwrap(),
        io::encode_matches_csv(&random_matches(rng, 10)).into_bytes(),
        io::encode_disparity_csv(&random_disparity(rng)).into_bytes(),
        io::encode_loss_csv(&history).into_bytes(),
        b"[training]\nlr = 0.01\nepochs = 2\n[homography]\ncount = 4\n[eval]\nsigmas = 3,6\n[synth]\nwidth = 32\n".to_vec(),
        io::encode_pgm(&random_frame1(rng, 5, 5)),
    ]
}

fn mutate(rng: &mut ChaCha8Rng, seed: &[u8]) -> Vec<u8> {
    let mut b = seed.to_vec();
    match rng.gen_range(0..6) {
        0 => {
            let n = rng.gen_range(0..=b.len());
            b.truncate(n);
        }
        1 => {
            for _ in 0..rng.gen_range(1..8) {
                if !b.is_empty() {
                    let i = rng.gen_range(0..b.len());
                    b[i] = rng.gen();
                }
            }
        }
        2 => {
            // Header fields: large counts and dimensions.
            let i = rng.gen_range(0..b.len().clamp(1, 32));
            for j in i..(i + 8).min(b.len()) {
                b[j] = 0xff;
            }
        }
        3 => {
            let i = rng.gen_range(0..=b.len());
            let extra: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen()).collect();
            b.splice(i..i, extra);
        }
        4 => {
            let n = rng.gen_range(0..1024);
            b = (0..n).map(|_| rng.gen()).collect();
        }
        _ => {
            // Printable noise for the text codecs.
            let alphabet = b"0123456789,.-#[]= \nabcdefNaNinf";
            for _ in 0..rng.gen_range(1..16) {
                let i = rng.gen_range(0..=b.len());
                b.insert(i, alphabet[rng.gen_range(0..alphabet.len())]);
            }
        }
    }
    b.truncate(64 * 1024);
    b
}

/// Runs `cases` mutated inputs through every decoder; returns the number
/// of decoder calls and the descriptions of any that panicked.
pub fn fuzz(cases: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = seeds(&mut rng);
    let mut panics = Vec::new();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for case in 0..cases {
        let k = case % DECODERS.len();
        let input = mutate(&mut rng, &seeds[k]);
        let (name, decode) = DECODERS[k];
        if catch_unwind(AssertUnwindSafe(|| decode(&input))).is_err() {
            panics.push(format!("{name} case {case}"));
        }
    }
    std::panic::set_hook(hook);
    (cases, panics)
}
