use fdmask::io::load_image;
use fdmask::spectra::{analyze, SpectrumReport, DEFAULT_DENOISE_RADIUS};
use fdmask::synthgen::{gen_fake, gen_real, ArtifactFamily};
use fdmask::{Image, Rng};

fn sinusoid(size: usize, u: f64, phase: f64) -> Image {
    let tau = std::f64::consts::TAU;
    Image::from_fn(size, size, 1, |r, _, _| {
        (0.5 + 0.3 * (tau * u * r as f64 / size as f64 + phase).cos()) as f32
    })
    .unwrap()
}

fn top_two(report: &SpectrumReport) -> Vec<(usize, usize)> {
    let g = &report.normalized;
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g.as_slice()[b].total_cmp(&g.as_slice()[a]).then(a.cmp(&b)));
    let mut out: Vec<(usize, usize)> = idx[..2].iter().map(|&i| (i / g.cols(), i % g.cols())).collect();
    out.sort();
    out
}

#[test]
fn sinusoid_gives_symmetric_peaks() {
    let images: Vec<Image> = (0..4).map(|k| sinusoid(64, 8.0, k as f64 * 0.7)).collect();
    for radius in [0, DEFAULT_DENOISE_RADIUS] {
        let report = analyze(&images, radius).unwrap();
        assert_eq!(top_two(&report), vec![(24, 32), (40, 32)], "radius {radius}");
        let (a, b) = (report.normalized[(24, 32)], report.normalized[(40, 32)]);
        assert!((a - b).abs() < 1e-9 && a > 0.99);
    }
}

fn real_set(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| gen_real(64, 3, &mut rng).unwrap()).collect()
}

#[test]
fn invariant_to_affine_intensity_changes() {
    let images = real_set(6, 1);
    let base = analyze(&images, 1).unwrap();
    for (gain, offset) in [(2.0f32, 0.1f32), (0.3, -0.2), (-1.5, 0.7)] {
        let moved: Vec<Image> = images
            .iter()
            .map(|im| {
                let data = im.as_slice().iter().map(|v| gain * v + offset).collect();
                Image::new(im.height(), im.width(), im.channels(), data).unwrap()
            })
            .collect();
        let other = analyze(&moved, 1).unwrap();
        let worst = base
            .normalized
            .as_slice()
            .iter()
            .zip(other.normalized.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "gain {gain}: {worst}");
    }
}

#[test]
fn order_invariant() {
    let images = real_set(5, 2);
    let mut reversed = images.clone();
    reversed.reverse();
    let a = analyze(&images, 1).unwrap();
    let b = analyze(&reversed, 1).unwrap();
    for (x, y) in a.normalized.as_slice().iter().zip(b.normalized.as_slice()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn values_in_unit_interval_with_matching_shape() {
    let report = analyze(&real_set(3, 3), 2).unwrap();
    assert_eq!((report.rows(), report.cols()), (64, 64));
    assert!(report.normalized.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(report.samples, 3);
    assert_eq!(report.channels, 3);
}

fn fake_set(family: &ArtifactFamily, n: usize, seed: u64) -> Vec<Image> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| gen_fake(64, 3, family, &mut rng).unwrap()).collect()
}

#[test]
fn grid_family_peaks_and_real_stays_flat() {
    let real = analyze(&real_set(100, 5), DEFAULT_DENOISE_RADIUS).unwrap();
    for (amplitude, min_ratio) in [(0.05, 5.0), (0.1, 10.0)] {
        let grid = ArtifactFamily::Grid { period: 8, amplitude };
        let fake = analyze(&fake_set(&grid, 100, 4), DEFAULT_DENOISE_RADIUS).unwrap();
        for (u, v) in [(8, 0), (0, 8)] {
            let f = fake.peak_to_background(u, v, 3).unwrap();
            let r = real.peak_to_background(u, v, 3).unwrap();
            assert!(f >= min_ratio, "amplitude {amplitude}: fake ratio {f} at ({u},{v})");
            assert!(r < 2.0, "real ratio {r} at ({u},{v})");
        }
    }
}

#[test]
fn peaks_family_shows_its_frequencies() {
    let peaks = ArtifactFamily::Peaks { count: 4, amplitude: 0.1, seed: 1 };
    let fake = analyze(&fake_set(&peaks, 100, 6), DEFAULT_DENOISE_RADIUS).unwrap();
    let real = analyze(&real_set(100, 7), DEFAULT_DENOISE_RADIUS).unwrap();
    for (u, v) in peaks.peak_frequencies(64) {
        assert!(fake.peak_to_background(u, v, 3).unwrap() >= 5.0);
        assert!(real.peak_to_background(u, v, 3).unwrap() < 2.0);
    }
}

#[test]
fn heatmap_round_trip_and_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..3).map(|k| sinusoid(32, 5.0, k as f64)).collect();
    let report = analyze(&images, 0).unwrap();
    for name in ["map.pgm", "map.png"] {
        let path = dir.path().join(name);
        report.render_heatmap(&path, Some("test")).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.height(), back.width(), back.channels()), (32, 32, 1));
        for (a, b) in back.as_slice().iter().zip(report.normalized.as_slice()) {
            assert!((*a as f64 - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let (r, c) = report.argmax();
        let peak = back.get(r, c, 0);
        assert!(back.as_slice().iter().all(|&v| v <= peak));
        assert_eq!(peak, 1.0);
    }
}

#[test]
fn zero_report_renders_black() {
    let dir = tempfile::tempdir().unwrap();
    let images = vec![Image::new(16, 16, 1, vec![0.7; 256]).unwrap()];
    let report = analyze(&images, 1).unwrap();
    let path = dir.path().join("black.pgm");
    report.render_heatmap(&path, None).unwrap();
    assert!(load_image(&path).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn text_dump_has_one_line_per_row() {
    let report = analyze(&real_set(2, 8), 1).unwrap();
    let text = report.to_text(Some("# hdr"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2 + 64);
    assert!(lines[1].starts_with("# samples=2"));
    assert_eq!(lines[2].split('\t').count(), 64);
}
