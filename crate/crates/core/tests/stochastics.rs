use hyposde::model::builtin_model;
use hyposde::stochastics::{
    increment_covariance, increment_from_normals, project_observed, sample_increment, simulate, simulate_subsampled,
    subsample, write_path_csv, NoiseStream, ObservationSet, Scheme,
};
use hyposde::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn increment_second_moments() {
    let dl = 0.02f64;
    let want = [dl, dl * dl / 2.0, dl.powi(3) / 6.0, dl.powi(3) / 3.0, dl.powi(4) / 8.0, dl.powi(5) / 20.0];
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut s = [0.0f64; 6];
    let mut s2 = [0.0f64; 6];
    let mut mean = [0.0f64; 3];
    for _ in 0..n {
        let inc = sample_increment(dl, 1, &mut rng).unwrap();
        let v = [inc.db[0], inc.i10[0], inc.i110[0]];
        for (k, (i, j)) in pairs.iter().enumerate() {
            let p = v[*i] * v[*j];
            s[k] += p;
            s2[k] += p * p;
        }
        for i in 0..3 {
            mean[i] += v[i];
        }
    }
    let nf = n as f64;
    for k in 0..6 {
        let m = s[k] / nf;
        let se = ((s2[k] / nf - m * m) / nf).sqrt();
        assert!((m - want[k]).abs() < 4.5 * se, "entry {k}: {m} vs {} (se {se})", want[k]);
    }
    for i in 0..3 {
        let se = (want[[0, 3, 5][i]] / nf).sqrt();
        assert!((mean[i] / nf).abs() < 4.5 * se);
    }
}

#[test]
fn increment_map_factors_the_exact_covariance() {
    let dl = 0.3f64;
    let cols: Vec<[f64; 3]> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .iter()
        .map(|z| {
            let (a, b, c) = increment_from_normals(dl, z[0], z[1], z[2]);
            [a, b, c]
        })
        .collect();
    let want = increment_covariance(dl);
    for i in 0..3 {
        for j in 0..3 {
            let got: f64 = cols.iter().map(|c| c[i] * c[j]).sum();
            assert!((got - want[i][j]).abs() < 1e-14 * want[i][j].abs(), "({i},{j})");
        }
    }
    assert!((want[2][2] - dl.powi(5) / 20.0).abs() < 1e-18);
}

#[test]
fn seek_gives_random_access() {
    let mut seq = NoiseStream::new(5, 2, 2);
    let mut z = vec![0.0f64; 6];
    for _ in 0..37 {
        seq.next_step(&mut z);
    }
    let mut expected = vec![0.0f64; 6];
    seq.next_step(&mut expected);
    let mut jump = NoiseStream::new(5, 2, 2);
    jump.seek(37);
    jump.next_step(&mut z);
    assert_eq!(z, expected);
    let mut other = NoiseStream::new(5, 3, 2);
    other.seek(37);
    other.next_step(&mut z);
    assert_ne!(z, expected);
}

#[test]
fn lg2_step_matches_hand_formula_on_toy_chain() {
    let p = builtin_model::<f64>("toy3").unwrap();
    let (beta, sigma) = (2.0, 4.0);
    let x0 = [0.3, -0.5, 1.2];
    let dl = 0.05;
    let path =
        simulate(p.model.as_ref(), &p.theta_true, &x0, dl, 1, Scheme::Lg2, &mut NoiseStream::new(8, 0, 1), 8).unwrap();
    let mut z = [0.0f64; 3];
    NoiseStream::new(8, 0, 1).next_step(&mut z);
    let (db, i10, i110) = increment_from_normals(dl, z[0], z[1], z[2]);
    let (q, pp, s) = (x0[0], x0[1], x0[2]);
    let want = [
        q + pp * dl + s * dl * dl / 2.0 - beta * s * dl.powi(3) / 6.0 + sigma * i110,
        pp + s * dl - beta * s * dl * dl / 2.0 + sigma * i10,
        s - beta * s * dl + sigma * db,
    ];
    for i in 0..3 {
        assert!((path.state(1)[i] - want[i]).abs() < 1e-14, "{i}");
    }
}

#[test]
fn schemes_differ_only_where_expected() {
    let p = builtin_model::<f64>("toy3").unwrap();
    let x0 = [0.3, -0.5, 1.2];
    let run = |s: Scheme| {
        simulate(p.model.as_ref(), &p.theta_true, &x0, 0.05, 1, s, &mut NoiseStream::new(1, 0, 1), 1)
            .unwrap()
            .state(1)
            .to_vec()
    };
    let (em, lg1, lg2, nc) = (run(Scheme::Em), run(Scheme::Lg1), run(Scheme::Lg2), run(Scheme::Lg2NoCorr));
    // rough coordinate is an Euler step under every scheme
    assert!(em[2] == lg1[2] && lg1[2] == lg2[2] && lg2[2] == nc[2]);
    // Euler leaves the smooth coordinates noiseless
    assert_eq!(em[0], x0[0] + x0[1] * 0.05);
    assert_ne!(lg2[0], nc[0]);
}

#[test]
fn subsampling_matches_fine_path() {
    let p = builtin_model::<f64>("qgle_dw").unwrap();
    let fine =
        simulate(p.model.as_ref(), &p.theta_true, &p.x0, 1e-3, 200, Scheme::Lg2, &mut NoiseStream::new(4, 1, 1), 4)
            .unwrap();
    let coarse = subsample(&fine, 10).unwrap();
    let direct = simulate_subsampled(
        p.model.as_ref(),
        &p.theta_true,
        &p.x0,
        1e-3,
        10,
        20,
        0,
        Scheme::Lg2,
        &mut NoiseStream::new(4, 1, 1),
        4,
    )
    .unwrap();
    assert_eq!(coarse.states, direct.states);
    assert!((direct.delta - 0.01).abs() < 1e-15);
    assert!(matches!(subsample(&fine, 7), Err(Error::Argument(_))));
}

#[test]
fn burn_in_continues_the_same_stream() {
    let p = builtin_model::<f64>("toy3").unwrap();
    let full =
        simulate(p.model.as_ref(), &p.theta_true, &p.x0, 1e-3, 50, Scheme::Lg2, &mut NoiseStream::new(6, 0, 1), 6)
            .unwrap();
    let late = simulate_subsampled(
        p.model.as_ref(),
        &p.theta_true,
        &p.x0,
        1e-3,
        1,
        20,
        30,
        Scheme::Lg2,
        &mut NoiseStream::new(6, 0, 1),
        6,
    )
    .unwrap();
    assert_eq!(late.state(0), full.state(30));
    assert_eq!(late.state(20), full.state(50));
}

#[test]
fn divergence_is_reported() {
    let p = builtin_model::<f64>("toy3").unwrap();
    // beta < 0 with a huge step blows up geometrically
    let wild = hyposde::model::ParamVector::new(
        p.theta_true.layout().clone(),
        vec![-50.0, 4.0],
        vec![-100.0, 0.0],
        vec![100.0, 10.0],
    )
    .unwrap();
    let r =
        simulate(p.model.as_ref(), &wild, &[1.0, 1.0, 1.0], 1.0, 100, Scheme::Em, &mut NoiseStream::new(0, 0, 1), 0);
    assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
}

#[test]
fn csv_round_trip_is_exact() {
    let p = builtin_model::<f64>("qgle_ho").unwrap();
    let path = simulate(
        p.model.as_ref(),
        &p.theta_true,
        &[0.1, 0.2, 0.3],
        0.01,
        30,
        Scheme::Lg2,
        &mut NoiseStream::new(3, 0, 1),
        3,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_path_csv(&path, &mut buf).unwrap();
    let back = ObservationSet::<f64>::read_csv(buf.as_slice(), None).unwrap();
    assert_eq!(back, project_observed(&path, &[0, 1, 2]).unwrap());

    let obs = project_observed(&path, &[0, 2]).unwrap();
    let mut buf = Vec::new();
    obs.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("t,x1,x3\n"));
    let back = ObservationSet::<f64>::read_csv(buf.as_slice(), Some(3)).unwrap();
    assert_eq!(back, obs);
}

#[test]
fn csv_errors_name_the_problem() {
    let bad_header = "t,q\n0,1\n1,2\n";
    match ObservationSet::<f64>::read_csv(bad_header.as_bytes(), None) {
        Err(Error::Parse { row: 1, detail }) => assert!(detail.contains("'q'"), "{detail}"),
        other => panic!("{other:?}"),
    }
    let bad_value = "t,x1\n0,1\n0.1,abc\n";
    match ObservationSet::<f64>::read_csv(bad_value.as_bytes(), None) {
        Err(Error::Parse { row: 3, detail }) => assert!(detail.contains("x1"), "{detail}"),
        other => panic!("{other:?}"),
    }
    let uneven = "t,x1\n0,1\n0.1,2\n0.3,3\n";
    assert!(matches!(ObservationSet::<f64>::read_csv(uneven.as_bytes(), None), Err(Error::Parse { .. })));
}

#[test]
fn f32_paths_follow_f64_paths() {
    let p64 = builtin_model::<f64>("toy3").unwrap();
    let p32 = builtin_model::<f32>("toy3").unwrap();
    let a = simulate(
        p64.model.as_ref(),
        &p64.theta_true,
        &p64.x0,
        0.01,
        100,
        Scheme::Lg2,
        &mut NoiseStream::new(2, 0, 1),
        2,
    )
    .unwrap();
    let b = simulate(
        p32.model.as_ref(),
        &p32.theta_true,
        &p32.x0,
        0.01f32,
        100,
        Scheme::Lg2,
        &mut NoiseStream::new(2, 0, 1),
        2,
    )
    .unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!((x - *y as f64).abs() < 1e-4 * x.abs().max(1.0));
    }
}
