use fairvic::experiments::{self, ExperimentSpec, ModelKind};
use fairvic::train::{batch_iterator, train, TrainConfig};
use fairvic::{Dataset, LambdaWeights, Matrix, Network};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `rows` samples of 3 features; column 1 is the binary group.
fn toy_dataset(rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * 3);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let a: f64 = rng.gen_range(-2.0..2.0);
        let g = f64::from(rng.gen::<bool>());
        let c: f64 = rng.gen_range(-2.0..2.0);
        data.extend([a, g, c]);
        labels.push(f64::from(a + 0.5 * g + rng.gen_range(-0.5..0.5) > 0.0));
    }
    let names = ["a", "g", "c"].map(String::from).to_vec();
    Dataset::new(
        "toy",
        Matrix::from_vec(rows, 3, data).unwrap(),
        labels,
        1,
        names,
    )
    .unwrap()
}

/// Dense ReLU/sigmoid net over nested vectors, trained one sample at a time.
struct Reference {
    /// `[layer][in][out]`
    w: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

impl Reference {
    fn from_network(net: &Network) -> Self {
        let w = net
            .layers()
            .iter()
            .map(|l| {
                (0..l.in_width())
                    .map(|i| l.weights().row(i).to_vec())
                    .collect()
            })
            .collect();
        let b = net.layers().iter().map(|l| l.bias().to_vec()).collect();
        Self { w, b }
    }

    /// Activations per layer, input first.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.w.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (k, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            let input = &acts[k];
            let out: Vec<f64> = (0..b.len())
                .map(|j| {
                    let mut z = b[j];
                    for i in 0..input.len() {
                        z += input[i] * w[i][j];
                    }
                    if k == last {
                        1.0 / (1.0 + (-z).exp())
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Mean-BCE gradient over the given samples.
    fn gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let n = xs.len() as f64;
        let mut gw: Vec<Vec<Vec<f64>>> = self
            .w
            .iter()
            .map(|w| vec![vec![0.0; w[0].len()]; w.len()])
            .collect();
        let mut gb: Vec<Vec<f64>> = self.b.iter().map(|b| vec![0.0; b.len()]).collect();
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let p = acts.last().unwrap()[0];
            let dp = (-y / p + (1.0 - y) / (1.0 - p)) / n;
            let mut delta = vec![dp * p * (1.0 - p)];
            for k in (0..self.w.len()).rev() {
                let input = &acts[k];
                for i in 0..input.len() {
                    for j in 0..delta.len() {
                        gw[k][i][j] += input[i] * delta[j];
                    }
                }
                for j in 0..delta.len() {
                    gb[k][j] += delta[j];
                }
                if k > 0 {
                    delta = (0..input.len())
                        .map(|i| {
                            let back: f64 =
                                (0..delta.len()).map(|j| self.w[k][i][j] * delta[j]).sum();
                            if input[i] > 0.0 {
                                back
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        (gw, gb)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        for (i, p) in params.iter_mut().enumerate() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - b2.powi(self.t));
            **p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

fn reference_train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Reference {
    let mut r = Reference::from_network(net);
    let count = net.parameter_count();
    let mut adam = Adam {
        m: vec![0.0; count],
        v: vec![0.0; count],
        t: 0,
    };
    for epoch in 0..cfg.epochs {
        for idx in batch_iterator(data.len(), cfg.batch_size, cfg.seed, epoch).unwrap() {
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| data.features.row(i).to_vec()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| data.labels[i]).collect();
            let (gw, gb) = r.gradient(&xs, &ys);
            let mut flat_g = Vec::with_capacity(count);
            let mut flat_p: Vec<&mut f64> = Vec::with_capacity(count);
            for ((w, b), (gw, gb)) in r.w.iter_mut().zip(r.b.iter_mut()).zip(gw.iter().zip(&gb)) {
                for (row, grow) in w.iter_mut().zip(gw) {
                    flat_p.extend(row.iter_mut());
                    flat_g.extend(grow);
                }
                flat_p.extend(b.iter_mut());
                flat_g.extend(gb);
            }
            adam.step(&mut flat_p, &flat_g, cfg);
        }
    }
    r
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn plain_bce_training_matches_reference_loop() {
    let data = toy_dataset(20, 11);
    let net = Network::init(&[3, 4, 2, 4, 1], 5).unwrap();
    let mut cfg = TrainConfig::new(LambdaWeights::accuracy_only(), 9);
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;

    let (trained, _) = train(net.clone(), &data, &cfg).unwrap();
    let expected = reference_train(&net, &data, &cfg);
    let mut worst = 0.0f64;
    let mut moved = 0usize;
    for (k, layer) in trained.layers().iter().enumerate() {
        for i in 0..layer.in_width() {
            for j in 0..layer.out_width() {
                let got = layer.weights().get(i, j);
                worst = worst.max(relative_gap(got, expected.w[k][i][j]));
                moved += usize::from(got != net.layers()[k].weights().get(i, j));
            }
        }
        for (j, &got) in layer.bias().iter().enumerate() {
            worst = worst.max(relative_gap(got, expected.b[k][j]));
        }
    }
    assert!(moved > 10, "training barely changed the weights");
    assert!(worst < 1e-9, "worst relative gap {worst}");
}

#[test]
fn training_is_bit_identical_across_runs() {
    let data = toy_dataset(64, 3);
    let mut cfg = TrainConfig::new(LambdaWeights::new(0.4, 0.2, 0.2, 0.2).unwrap(), 17);
    cfg.epochs = 3;
    cfg.batch_size = 16;
    let run = || {
        let net = experiments::build_network(3, 17).unwrap();
        train(net, &data, &cfg).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha, hb);

    let mut other = cfg;
    other.seed = 18;
    let (c, _) = train(experiments::build_network(3, 17).unwrap(), &data, &other).unwrap();
    assert_ne!(
        a.to_bytes(),
        c.to_bytes(),
        "the seed must drive shuffling and dropout"
    );
}

#[test]
fn saved_network_round_trips_bit_exactly() {
    let data = toy_dataset(40, 8);
    let mut cfg = TrainConfig::new(LambdaWeights::new(0.1, 0.1, 0.1, 0.7).unwrap(), 2);
    cfg.epochs = 2;
    cfg.batch_size = 10;
    let net = experiments::build_network(3, 2)
        .unwrap()
        .with_regularization(1e-4, 1e-3)
        .unwrap();
    let (net, _) = train(net, &data, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    let loaded = Network::load(&path).unwrap();
    assert_eq!(loaded, net);
    let bits = |n: &Network| {
        n.parameters()
            .iter()
            .map(|p| p.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&loaded), bits(&net));
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(
        loaded.predict(&data.features).unwrap(),
        net.predict(&data.features).unwrap()
    );
}

#[test]
fn experiment_outputs_are_byte_identical_on_rerun() {
    let data = toy_dataset(120, 21);
    let mut spec = ExperimentSpec::new("toy", ModelKind::Fairvic).with_seeds(vec![4, 0, 9]);
    spec.epochs = 2;
    spec.batch_size = 32;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let written: Vec<Vec<Vec<u8>>> = dirs
        .iter()
        .map(|d| {
            let report = experiments::run_on_dataset(&spec, &data).unwrap();
            let paths = report.write_to(d.path()).unwrap();
            paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
        })
        .collect();
    assert_eq!(written[0].len(), 4);
    assert_eq!(written[0], written[1]);

    let fitted = experiments::fit_seed(&spec, &data, 4).unwrap();
    let a = dirs[0].path().join("emb_a.csv");
    let b = dirs[0].path().join("emb_b.csv");
    experiments::export_embeddings(&fitted.network, &fitted.test, &a).unwrap();
    experiments::export_embeddings(&fitted.network, &fitted.test, &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
