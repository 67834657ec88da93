use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use obbkit::evalkit::{rotated_nms, Detection};
use obbkit::geom::min_area_rect;
use obbkit::piou::{piou, piou_grad, PiouConfig};
use obbkit::{iou_exact, Obb};

fn random_box(rng: &mut impl Rng) -> Obb {
    let w = rng.gen_range(20.0..80.0);
    let h = rng.gen_range(10.0..w);
    Obb::new(
        rng.gen_range(-20.0..20.0),
        rng.gen_range(-20.0..20.0),
        w,
        h,
        rng.gen_range(0.0..PI),
    )
    .unwrap()
}

fn bench_iou_exact(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Obb, Obb)> = (0..64)
        .map(|_| (random_box(&mut rng), random_box(&mut rng)))
        .collect();
    c.bench_function("iou_exact", |b| {
        b.iter(|| {
            for (x, y) in &pairs {
                black_box(iou_exact(x, y));
            }
        })
    });
}

fn bench_piou(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_box(&mut rng);
    let b2 = random_box(&mut rng);
    let cfg = PiouConfig::default();
    c.bench_function("piou", |b| {
        b.iter(|| black_box(piou(&a, &b2, &cfg).unwrap()))
    });
    c.bench_function("piou_grad", |b| {
        b.iter(|| black_box(piou_grad(&a, &b2, &cfg).unwrap()))
    });
}

fn bench_min_area_rect(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clouds: Vec<Vec<obbkit::Point>> = (0..32)
        .map(|_| {
            (0..64)
                .map(|_| obbkit::Point::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
                .collect()
        })
        .collect();
    c.bench_function("min_area_rect_64pts", |b| {
        b.iter(|| {
            for cloud in &clouds {
                black_box(min_area_rect(cloud).unwrap());
            }
        })
    });
}

fn bench_nms(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dets: Vec<Detection> = (0..200)
        .map(|_| Detection {
            image_id: "img".into(),
            class_id: 0,
            score: rng.gen_range(0.0..1.0),
            obb: random_box(&mut rng),
        })
        .collect();
    c.bench_function("rotated_nms_200", |b| {
        b.iter(|| black_box(rotated_nms(&dets, 0.5)))
    });
}

criterion_group!(benches, bench_iou_exact, bench_piou, bench_min_area_rect, bench_nms);
criterion_main!(benches);
