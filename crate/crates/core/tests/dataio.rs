use upanets::dataio::{synth_blobs, Dataset, PIXELS};

/// Multiclass perceptron on raw flattened pixels; returns training accuracy.
fn perceptron_accuracy(data: &Dataset, epochs: usize) -> f64 {
    let k = data.classes();
    let mut w = vec![vec![0f64; PIXELS + 1]; k];
    let score = |w: &[f64], x: &[f32]| w[PIXELS] + w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum::<f64>();
    let predict = |w: &[Vec<f64>], x: &[f32]| {
        (0..k)
            .map(|c| score(&w[c], x))
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (c, s)| if s > best.1 { (c, s) } else { best },
            )
            .0
    };
    for _ in 0..epochs {
        let mut mistakes = 0;
        for i in 0..data.len() {
            let (x, y) = (data.image(i), data.labels()[i]);
            let p = predict(&w, x);
            if p != y {
                mistakes += 1;
                for (j, &v) in x.iter().enumerate() {
                    w[y][j] += f64::from(v);
                    w[p][j] -= f64::from(v);
                }
                w[y][PIXELS] += 1.0;
                w[p][PIXELS] -= 1.0;
            }
        }
        if mistakes == 0 {
            break;
        }
    }
    let correct = (0..data.len())
        .filter(|&i| predict(&w, data.image(i)) == data.labels()[i])
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn two_class_blobs_are_linearly_separable() {
    let data = synth_blobs(2, 200, 11).unwrap();
    assert_eq!(perceptron_accuracy(&data, 500), 1.0);
}

#[test]
fn ten_class_blobs_are_linearly_separable() {
    let data = synth_blobs(10, 200, 3).unwrap();
    assert_eq!(perceptron_accuracy(&data, 2000), 1.0);
}

#[test]
fn same_seed_same_dataset() {
    assert_eq!(synth_blobs(4, 50, 9).unwrap(), synth_blobs(4, 50, 9).unwrap());
    assert_ne!(synth_blobs(4, 50, 9).unwrap(), synth_blobs(4, 50, 10).unwrap());
}

#[test]
fn labels_are_balanced() {
    for (classes, n) in [(2, 200), (3, 100), (10, 95), (7, 3)] {
        let d = synth_blobs(classes, n, 0).unwrap();
        let mut hist = vec![0usize; classes];
        d.labels().iter().for_each(|&l| hist[l] += 1);
        let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(hi - lo <= 1, "{hist:?}");
    }
}

#[test]
fn batch_stacks_in_index_order() {
    let d = synth_blobs(3, 9, 2).unwrap();
    let (t, labels) = d.batch(&[4, 0, 8], |_, img| Ok(img.to_vec())).unwrap();
    assert_eq!(t.shape(), &[3, 3, 32, 32]);
    assert_eq!(labels, vec![1, 0, 2]);
    assert_eq!(&t.data()[..PIXELS], d.image(4));
    assert_eq!(&t.data()[2 * PIXELS..], d.image(8));
}

#[test]
fn batch_rejects_bad_index() {
    let d = synth_blobs(2, 4, 2).unwrap();
    assert!(d.batch(&[4], |_, img| Ok(img.to_vec())).is_err());
}
