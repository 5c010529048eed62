mod common;

use common::{brute_dbscan, brute_knn, brute_silhouette, random_inputs, seeded, two_blobs};
use eventcube::analyze::{self, HeadConfig, HeadKind, Query, NOISE};
use eventcube::embed::{self, LatentMatrix, TsneConfig};
use eventcube::ingest::EventSeries;
use eventcube::report::{self, ColorBy};
use eventcube::tensorize::{self, BinningConfig};
use rand::Rng;

#[test]
fn tsne_separates_blobs_and_descends() {
    let mut rng = seeded(1);
    let (rows, labels) = two_blobs(&mut rng, 40, 6, 8.0);
    let m = LatentMatrix::from_rows(rows, 6).unwrap();
    let cfg = TsneConfig {
        perplexity: 10.0,
        iterations: 500,
        seed: 3,
        ..TsneConfig::default()
    };
    let e = embed::tsne_project(&m, &cfg).unwrap();
    assert!(brute_silhouette(&e.points, &labels) > 0.5);
    assert!(e.kl_history.last().unwrap() <= &e.kl_history[cfg.exaggeration_iters - 1]);
    assert_eq!(embed::tsne_project(&m, &cfg).unwrap(), e, "seeded runs are identical");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    embed::write_embedding_csv(&e, None, &path).unwrap();
    let back = embed::read_embedding_csv(&path).unwrap();
    assert_eq!(back.points, e.points);
    assert_eq!(back.ids, e.ids);
}

#[test]
fn joint_probabilities_are_a_distribution() {
    let mut rng = seeded(2);
    let m = LatentMatrix::from_rows(random_inputs(&mut rng, 60 * 3), 3).unwrap();
    let (p, unconverged) = embed::joint_probabilities(&m, 8.0).unwrap();
    assert_eq!(unconverged, 0);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for i in 0..60 {
        assert_eq!(p[i * 60 + i], 0.0);
        for j in 0..60 {
            assert!((p[i * 60 + j] - p[j * 60 + i]).abs() < 1e-15);
        }
    }
}

#[test]
fn dbscan_and_knn_match_brute_force() {
    let mut rng = seeded(3);
    for case in 0..30 {
        let (n, d) = (rng.gen_range(10..150), rng.gen_range(1..6));
        let rows = random_inputs(&mut rng, n * d);
        let m = LatentMatrix::from_rows(rows.clone(), d).unwrap();
        let eps = rng.gen_range(0.1..0.8);
        let min_pts = rng.gen_range(1..6);
        let labels = analyze::dbscan(&m, eps, min_pts).unwrap();
        assert_eq!(labels.labels, brute_dbscan(&rows, d, eps, min_pts), "case {case}");
        let k = rng.gen_range(1..n.min(12));
        let got = analyze::knn_query(&m, Query::Id(&m.ids[0]), k).unwrap();
        let got: Vec<(usize, f64)> = got.neighbors.iter().map(|nb| (nb.index, nb.distance)).collect();
        assert_eq!(got, brute_knn(&rows, d, m.row(0), Some(0), k));
    }
}

#[test]
fn documented_cluster_and_neighbor_cases() {
    let m = LatentMatrix::from_rows(vec![0.0, 0.1, 10.0], 1).unwrap();
    assert_eq!(analyze::dbscan(&m, 0.5, 2).unwrap().labels, vec![0, 0, NOISE]);
    let same = LatentMatrix::from_rows(vec![1.5; 8], 2).unwrap();
    assert_eq!(analyze::dbscan(&same, 0.1, 4).unwrap().labels, vec![0; 4]);

    let dup = LatentMatrix::from_rows(vec![0.0, 3.0, 3.0, 9.0], 1).unwrap();
    let nn = analyze::knn_query(&dup, Query::Id("1"), 1).unwrap();
    assert_eq!((nn.neighbors[0].index, nn.neighbors[0].distance), (2, 0.0));
    let scores = analyze::anomaly_scores(&dup, 1).unwrap();
    assert_eq!(&scores[1..3], &[0.0, 0.0]);
    assert_eq!(scores.iter().copied().fold(f64::MIN, f64::max), scores[3]);
    assert!(matches!(analyze::knn_query(&dup, Query::Id("zz"), 1), Err(analyze::AnalyzeError::UnknownId(_))));
    assert!(matches!(analyze::knn_query(&dup, Query::Id("0"), 4), Err(analyze::AnalyzeError::KTooLarge { .. })));
}

#[test]
fn heads_learn_separable_blobs() {
    let mut rng = seeded(4);
    let (x, labels) = two_blobs(&mut rng, 100, 4, 5.0);
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let cfg = HeadConfig::default();
    let clf = analyze::fit_head(&x, 4, &y, HeadKind::Classifier, &cfg).unwrap();
    let p = analyze::predict_head(&clf, &x, 4).unwrap();
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    let correct = p.iter().zip(&y).filter(|(p, y)| f64::from(**p > 0.5) == **y).count();
    assert!(correct as f64 / 200.0 >= 0.99);

    let target: Vec<f64> = (0..200).map(|i| x[i * 4] * 2.0 - x[i * 4 + 1]).collect();
    let reg = analyze::fit_head(&x, 4, &target, HeadKind::Regressor, &cfg).unwrap();
    let mse = |rounds: usize| {
        let mut m = reg.clone();
        m.trees.truncate(rounds);
        let p = analyze::predict_head(&m, &x, 4).unwrap();
        p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0
    };
    assert!(mse(100) <= mse(1));
    assert!(matches!(
        analyze::fit_head(&x, 4, &vec![1.0; 200], HeadKind::Classifier, &cfg),
        Err(analyze::AnalyzeError::DegenerateLabels(_))
    ));
}

#[test]
fn svg_reports_are_wellformed_and_deterministic() {
    let mut rng = seeded(5);
    let (rows, labels) = two_blobs(&mut rng, 15, 3, 4.0);
    let m = LatentMatrix::from_rows(rows, 3).unwrap();
    let cfg = TsneConfig {
        perplexity: 5.0,
        iterations: 300,
        ..TsneConfig::default()
    };
    let e = embed::tsne_project(&m, &cfg).unwrap();
    let a = report::scatter_svg(&e, ColorBy::Clusters(&labels), "blobs").unwrap();
    assert_eq!(a, report::scatter_svg(&e, ColorBy::Clusters(&labels), "blobs").unwrap());
    let doc = roxmltree::Document::parse(&a).unwrap();
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(circles, 30);

    let t: Vec<f64> = (0..900).map(|i| i as f64 * 2.0).collect();
    let s = EventSeries::new("u", t, vec![1000.0; 900]);
    let lc = report::light_curve(&s, 300.0).unwrap();
    assert_eq!(lc.counts.len(), (1798.0f64 / 300.0).ceil() as usize);
    assert_eq!(lc.counts.iter().sum::<u64>(), 900);
    assert!(lc.counts[..5].iter().all(|&c| c == 150));

    let map = tensorize::tensorize(&s, &BinningConfig { n_dtau: 0, ..BinningConfig::default() }).unwrap();
    roxmltree::Document::parse(&report::series_svg(&s, 300.0, Some(&map)).unwrap()).unwrap();
    let cube = tensorize::tensorize(&s, &BinningConfig::default()).unwrap();
    roxmltree::Document::parse(&report::cube_mosaic_svg(&cube).unwrap()).unwrap();
    assert!(report::series_svg(&s, 300.0, Some(&cube)).is_err());
    roxmltree::Document::parse(&report::k_distance_svg(&[0.1, 0.2, 0.9], 4, Some(0.2))).unwrap();
}
