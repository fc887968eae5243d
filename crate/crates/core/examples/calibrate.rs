//! Scratch calibration runs (not part of the test suite).

use retina_codec::{analyze, build_dog_bank, metrics, synth, Codec, CodecConfig, DoGParams};
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "percentile".into());
    match which.as_str() {
        "percentile" => percentile(),
        "cgtime" => cgtime(),
        "trend" => trend(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn percentile() {
    for n in [128usize, 256] {
        let image = synth::scene(n, 7);
        let bank = build_dog_bank(n, &DoGParams::default()).unwrap();
        let p = analyze(&image, &bank).unwrap();
        let mut mags: Vec<f64> = p.bands.iter().flat_map(|b| b.iter().map(|v| v.abs())).collect();
        mags.push(p.dc.abs());
        mags.sort_by(f64::total_cmp);
        for pct in [0.5, 0.9, 0.99, 0.999, 1.0] {
            let idx = ((mags.len() - 1) as f64 * pct) as usize;
            println!("n={n} pct={pct}: |c| = {:.6e}", mags[idx]);
        }
        let p99 = mags[((mags.len() - 1) as f64 * 0.99) as usize];
        println!("n={n}: a_cal for 200 pA at p99 = {:.6e}", 200e-12 / p99);
    }
}

fn cgtime() {
    for n in [64usize, 128, 256] {
        let cfg = CodecConfig::for_side(n);
        let codec = Codec::new(cfg).unwrap();
        let image = synth::scene(n, 7);
        let t0 = Instant::now();
        let encoded = codec.encode_at(&image, 50e-3).unwrap();
        let t_enc = t0.elapsed();
        let t1 = Instant::now();
        let decoded = codec.decode(&encoded).unwrap();
        let t_dec = t1.elapsed();
        let t2 = Instant::now();
        let decoded2 = codec.decode(&encoded).unwrap();
        let t_dec2 = t2.elapsed();
        assert_eq!(decoded, decoded2);
        let psnr = metrics::psnr(&decoded, &image, 1.0).unwrap();
        println!(
            "n={n}: encode {:?} decode {:?} decode2 {:?} psnr {:.2} dB",
            t_enc, t_dec, t_dec2, psnr
        );
    }
}

fn trend() {
    let n = 256usize;
    let a_cal: f64 = std::env::args()
        .nth(2)
        .and_then(|v| v.parse().ok())
        .unwrap_or(retina_codec::codec::DEFAULT_CALIBRATION_GAIN);
    let mut cfg = CodecConfig::for_side(n);
    cfg.a_cal = a_cal;
    let codec = Codec::new(cfg).unwrap();
    let image = synth::scene(n, 7);
    println!("a_cal = {a_cal:e}");
    let t_all = Instant::now();
    for t_ms in [20.0, 30.0, 40.0, 50.0] {
        let t0 = Instant::now();
        let encoded = codec.encode_at(&image, t_ms * 1e-3).unwrap();
        let decoded = codec.decode(&encoded).unwrap();
        let psnr = metrics::psnr(&decoded, &image, 1.0).unwrap();
        let ssim = metrics::mean_ssim(&decoded, &image).unwrap();
        let bpp = metrics::entropy_bpp(&encoded);
        println!(
            "t={t_ms} ms: bpp {bpp:.4} psnr {psnr:.2} dB ssim {ssim:.4} ({:?})",
            t0.elapsed()
        );
    }
    println!("total {:?}", t_all.elapsed());
}
