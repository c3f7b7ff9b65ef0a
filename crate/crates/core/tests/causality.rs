//! Prefix property: perturbing inputs at positions ≥ p leaves every output
//! before p bitwise unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use fasttalker::frontend::phonemize;
use fasttalker::gesture::GestureLatentDecoder;
use fasttalker::model::{FastTalker, ModelOptions};
use fasttalker::nas::{ArchitectureConfig, ModuleConfig};
use fasttalker::numerics::{Graph, ParamStore};
use fasttalker::rng;
use fasttalker::speech::{PhonemeEncoder, WaveformDecoder};
use fasttalker::Tensor;

const TRIALS: u64 = 50;
const VOCAB: usize = 64;
const HOP: usize = 160;

fn rows(t: &Tensor, n: usize) -> Vec<u64> {
    let width = t.len() / t.shape()[0];
    t.data()[..n * width].iter().map(|v| v.to_bits()).collect()
}

fn random_matrix(r: &mut ChaCha8Rng, t: usize, c: usize) -> Tensor {
    Tensor::new(
        vec![t, c],
        (0..t * c).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Returns a copy with every row from `p` on redrawn.
fn perturb_suffix(r: &mut ChaCha8Rng, x: &Tensor, p: usize) -> Tensor {
    let mut y = x.clone();
    let width = x.len() / x.shape()[0];
    for v in &mut y.data_mut()[p * width..] {
        *v += r.gen_range(-1.0..1.0);
    }
    y
}

fn encoder_configs() -> Vec<ModuleConfig> {
    vec![
        ArchitectureConfig::searched_preset(3).phoneme_encoder,
        ModuleConfig::new(32, 2, 2, 5),
        ModuleConfig::new(16, 0, 1, 3),
    ]
}

#[test]
fn phoneme_encoder_prefix_property() {
    for trial in 0..TRIALS {
        let cfgs = encoder_configs();
        let cfg = cfgs[trial as usize % cfgs.len()];
        let mut r = rng::stream(trial, "causality/encoder");
        let mut store = ParamStore::new();
        let enc = PhonemeEncoder::new(&mut store, VOCAB, &cfg, 0.0, &mut r).unwrap();
        let n = r.gen_range(2..14);
        let p = r.gen_range(1..n);
        let tokens: Vec<usize> = (0..n).map(|_| r.gen_range(0..VOCAB)).collect();
        let mut changed = tokens.clone();
        for t in &mut changed[p..] {
            *t = (*t + r.gen_range(1..VOCAB)) % VOCAB;
        }
        let run = |tok: &[usize]| {
            let mut g = Graph::new();
            let out = enc.forward(&mut g, &store, tok).unwrap();
            g.value(out).clone()
        };
        let a = run(&tokens);
        let b = run(&changed);
        assert_eq!(rows(&a, p), rows(&b, p), "trial {trial}: n={n} p={p}");
        assert_ne!(
            a.data(),
            b.data(),
            "trial {trial}: perturbation had no effect"
        );
    }
}

#[test]
fn waveform_decoder_prefix_property() {
    let cfgs = [
        ArchitectureConfig::searched_preset(3).waveform_decoder,
        ModuleConfig::new(16, 5, 4, 5),
        ModuleConfig::new(16, 0, 1, 3),
    ];
    for trial in 0..TRIALS {
        let cfg = cfgs[trial as usize % cfgs.len()];
        let mut r = rng::stream(trial, "causality/waveform");
        let in_dim = 24;
        let mut store = ParamStore::new();
        let dec = WaveformDecoder::new(&mut store, in_dim, &cfg, &mut r).unwrap();
        let m = r.gen_range(2..24);
        let p = r.gen_range(1..m);
        let x = random_matrix(&mut r, m, in_dim);
        let y = perturb_suffix(&mut r, &x, p);
        let run = |f: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(f.clone());
            let out = dec.forward(&mut g, &store, v).unwrap();
            g.value(out)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        let a = run(&x);
        let b = run(&y);
        assert_eq!(a.len(), m * HOP);
        assert_eq!(a[..p * HOP], b[..p * HOP], "trial {trial}: m={m} p={p}");
        assert_ne!(a, b, "trial {trial}: perturbation had no effect");
    }
}

#[test]
fn gesture_latent_decoder_prefix_property() {
    let cfgs = [
        ArchitectureConfig::searched_preset(3).gesture_latent_decoder,
        ModuleConfig::new(32, 2, 4, 3),
    ];
    for trial in 0..TRIALS {
        let cfg = cfgs[trial as usize % cfgs.len()];
        let mut r = rng::stream(trial, "causality/gesture");
        let in_dim = 40;
        let mut store = ParamStore::new();
        let dec = GestureLatentDecoder::new(&mut store, in_dim, &cfg, 0.0, &mut r).unwrap();
        let t = r.gen_range(2..16);
        let p = r.gen_range(1..t);
        let x = random_matrix(&mut r, t, in_dim);
        let y = perturb_suffix(&mut r, &x, p);
        let run = |f: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(f.clone());
            let (logits, latent) = dec.forward(&mut g, &store, v).unwrap();
            (g.value(logits).clone(), g.value(latent).clone())
        };
        let (la, za) = run(&x);
        let (lb, zb) = run(&y);
        assert_eq!(
            rows(&la, p),
            rows(&lb, p),
            "trial {trial}: logits, t={t} p={p}"
        );
        assert_eq!(
            rows(&za, p),
            rows(&zb, p),
            "trial {trial}: latent, t={t} p={p}"
        );
        assert_ne!(la.data(), lb.data());
    }
}

#[test]
fn speech_branch_prefix_property_end_to_end() {
    let opts = ModelOptions {
        dropout: 0.0,
        ..Default::default()
    };
    let model = FastTalker::new(ArchitectureConfig::preset("small").unwrap(), opts, 3).unwrap();
    let full = phonemize("the quick brown fox jumps").unwrap();
    let durations: Vec<usize> = (0..full.len()).map(|i| 2 + i % 4).collect();
    let whole = model.synthesize(&full, Some(&durations)).unwrap();
    for words in 1..5 {
        let prefix = full.truncate_words(words);
        let d = &durations[..prefix.len()];
        let part = model.synthesize(&prefix, Some(d)).unwrap();
        let samples = d.iter().sum::<usize>() * HOP;
        assert_eq!(part.waveform.len(), samples);
        let a: Vec<u64> = part.waveform.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = whole.waveform[..samples]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b, "{words} words");
    }
}
