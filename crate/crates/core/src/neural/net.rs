use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::layout_for;
use super::{Activation, NetSpec, NeuralError, Params, Result};

/// A batch: dense rows plus one label column per embedding table
/// (`labels[table][row]`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub dense: Array2<f64>,
    pub labels: Vec<Vec<usize>>,
}

impl NetInput {
    pub fn new(dense: Array2<f64>, labels: Vec<Vec<usize>>) -> Self {
        NetInput { dense, labels }
    }

    pub fn single(dense: &[f64], labels: &[usize]) -> Self {
        let d = Array2::from_shape_vec((1, dense.len()), dense.to_vec()).expect("row shape");
        NetInput { dense: d, labels: labels.iter().map(|&l| vec![l]).collect() }
    }

    pub fn rows(&self) -> usize {
        self.dense.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
    Eval,
}

/// Intermediates of one forward pass, enough for an exact backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    params_id: u64,
    labels: Vec<Vec<usize>>,
    x0: Array2<f64>,
    /// `h[0]` is the stem output, `h[k + 1]` the output of block `k`.
    h: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    zout: Array2<f64>,
    y: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as the parameter vector.
    pub params: Vec<f64>,
    /// Gradient with respect to the dense input rows.
    pub input: Array2<f64>,
}

/// Stateless evaluator for one [`NetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    spec: NetSpec,
    n_params: usize,
}

fn linear(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z += &b.column(0);
    z
}

fn grad_block<'a>(g: &'a mut [f64], p: &Params, seg: usize) -> ArrayViewMut2<'a, f64> {
    let s = &p.layout()[seg];
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut g[s.range()]).expect("layout shape")
}

impl Net {
    pub fn new(spec: NetSpec) -> Result<Net> {
        spec.validate()?;
        let n_params = spec.param_count();
        Ok(Net { spec, n_params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn init(&self, seed: u64) -> Params {
        Params::init(&self.spec, seed).expect("validated spec")
    }

    fn stem_seg(&self) -> usize {
        self.spec.embeddings.len()
    }

    fn block_seg(&self, k: usize) -> usize {
        self.stem_seg() + 2 + 2 * k
    }

    fn head_seg(&self) -> usize {
        self.block_seg(self.spec.blocks)
    }

    fn check(&self, params: &Params, input: &NetInput) -> Result<()> {
        if params.len() != self.n_params || params.layout() != layout_for(&self.spec).as_slice() {
            return Err(NeuralError::Dimension { what: "parameters", expected: self.n_params, got: params.len() });
        }
        let dd = self.spec.dense_dim();
        if input.dense.ncols() != dd {
            return Err(NeuralError::Dimension { what: "dense input", expected: dd, got: input.dense.ncols() });
        }
        if input.labels.len() != self.spec.embeddings.len() {
            return Err(NeuralError::Dimension {
                what: "label columns",
                expected: self.spec.embeddings.len(),
                got: input.labels.len(),
            });
        }
        for (t, (col, &(vocab, _))) in input.labels.iter().zip(&self.spec.embeddings).enumerate() {
            if col.len() != input.rows() {
                return Err(NeuralError::Dimension { what: "label rows", expected: input.rows(), got: col.len() });
            }
            if let Some(&label) = col.iter().find(|&&l| l >= vocab) {
                return Err(NeuralError::Label { table: t, label, vocab });
            }
        }
        Ok(())
    }

    fn assemble(&self, params: &Params, input: &NetInput) -> Array2<f64> {
        let n = input.rows();
        let dd = self.spec.dense_dim();
        let mut x0 = Array2::zeros((n, self.spec.input_dim));
        x0.slice_mut(s![.., ..dd]).assign(&input.dense);
        let mut off = dd;
        for (t, &(_, dim)) in self.spec.embeddings.iter().enumerate() {
            let table = params.matrix(t);
            for (r, &l) in input.labels[t].iter().enumerate() {
                x0.slice_mut(s![r, off..off + dim]).assign(&table.row(l));
            }
            off += dim;
        }
        x0
    }

    fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.spec.output_activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::None => z.clone(),
        }
    }

    fn run(&self, params: &Params, input: &NetInput, mode: Mode, record: bool) -> Result<(Array2<f64>, Option<Tape>)> {
        self.check(params, input)?;
        let x0 = self.assemble(params, input);
        let stem = self.stem_seg();
        let mut h = linear(&x0.view(), params.matrix(stem), params.matrix(stem + 1));

        let p = self.spec.dropout_rate;
        let mut rng = match mode {
            Mode::Train { seed } if p > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let keep_scale = 1.0 / (1.0 - p);

        let mut hs = Vec::new();
        let mut zs = Vec::new();
        let mut masks = Vec::new();
        for k in 0..self.spec.blocks {
            let seg = self.block_seg(k);
            let z = linear(&h.view(), params.matrix(seg), params.matrix(seg + 1));
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = rng.as_mut().map(|rng| {
                let m = Array2::from_shape_simple_fn(z.raw_dim(), || if rng.random::<f64>() < p { 0.0 } else { keep_scale });
                a *= &m;
                m
            });
            let next = &h + &a;
            if record {
                hs.push(std::mem::replace(&mut h, next));
                zs.push(z);
                masks.push(mask);
            } else {
                h = next;
            }
        }
        let head = self.head_seg();
        let zout = linear(&h.view(), params.matrix(head), params.matrix(head + 1));
        let y = self.activate(&zout);
        let tape = record.then(|| {
            hs.push(h);
            Tape { params_id: params.id(), labels: input.labels.clone(), x0, h: hs, z: zs, masks, zout, y: y.clone() }
        });
        Ok((y, tape))
    }

    /// Forward pass recording a tape. In `Eval` mode dropout is off; the
    /// tape is still valid for [`Net::backward`].
    pub fn forward(&self, params: &Params, input: &NetInput, mode: Mode) -> Result<(Array2<f64>, Tape)> {
        let (y, tape) = self.run(params, input, mode, true)?;
        Ok((y, tape.expect("recorded")))
    }

    /// Eval-mode forward without a tape.
    pub fn predict(&self, params: &Params, input: &NetInput) -> Result<Array2<f64>> {
        Ok(self.run(params, input, Mode::Eval, false)?.0)
    }

    pub fn backward(&self, params: &Params, tape: &Tape, dout: &Array2<f64>) -> Result<Gradients> {
        if tape.params_id != params.id() {
            return Err(NeuralError::StaleTape);
        }
        if dout.dim() != tape.y.dim() {
            return Err(NeuralError::Dimension { what: "output gradient", expected: tape.y.len(), got: dout.len() });
        }
        let mut g = vec![0.0; self.n_params];

        let dz_out = match self.spec.output_activation {
            Activation::Relu => Zip::from(dout).and(&tape.zout).map_collect(|&d, &z| if z > 0.0 { d } else { 0.0 }),
            Activation::Sigmoid => Zip::from(dout).and(&tape.y).map_collect(|&d, &y| d * y * (1.0 - y)),
            Activation::None => dout.clone(),
        };
        let head = self.head_seg();
        let top = &tape.h[self.spec.blocks];
        general_mat_mul(1.0, &dz_out.t(), top, 0.0, &mut grad_block(&mut g, params, head));
        grad_block(&mut g, params, head + 1).column_mut(0).assign(&dz_out.sum_axis(Axis(0)));
        let mut dh = dz_out.dot(&params.matrix(head));

        for k in (0..self.spec.blocks).rev() {
            let seg = self.block_seg(k);
            let mut dz = dh.clone();
            if let Some(m) = &tape.masks[k] {
                dz *= m;
            }
            Zip::from(&mut dz).and(&tape.z[k]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            general_mat_mul(1.0, &dz.t(), &tape.h[k], 0.0, &mut grad_block(&mut g, params, seg));
            grad_block(&mut g, params, seg + 1).column_mut(0).assign(&dz.sum_axis(Axis(0)));
            general_mat_mul(1.0, &dz, &params.matrix(seg), 1.0, &mut dh);
        }

        let stem = self.stem_seg();
        general_mat_mul(1.0, &dh.t(), &tape.x0, 0.0, &mut grad_block(&mut g, params, stem));
        grad_block(&mut g, params, stem + 1).column_mut(0).assign(&dh.sum_axis(Axis(0)));
        let dx0 = dh.dot(&params.matrix(stem));

        let dd = self.spec.dense_dim();
        let mut off = dd;
        for (t, &(_, dim)) in self.spec.embeddings.iter().enumerate() {
            let mut table = grad_block(&mut g, params, t);
            for (r, &l) in tape.labels[t].iter().enumerate() {
                let mut row = table.row_mut(l);
                row += &dx0.slice(s![r, off..off + dim]);
            }
            off += dim;
        }
        let input = dx0.slice(s![.., ..dd]).to_owned();
        Ok(Gradients { params: g, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{central_difference, max_relative_error, mse};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(act: Activation, dropout: f64) -> NetSpec {
        NetSpec {
            input_dim: 6,
            blocks: 2,
            width: 5,
            dropout_rate: dropout,
            output_dim: 3,
            output_activation: act,
            embeddings: vec![(4, 2)],
        }
    }

    fn input(rows: usize, seed: u64) -> NetInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = Array2::from_shape_simple_fn((rows, 4), || rng.random_range(-1.0..1.0));
        let labels = vec![(0..rows).map(|r| r % 4).collect()];
        NetInput::new(dense, labels)
    }

    #[test]
    fn zero_weights_relu_output_is_zero() {
        let net = Net::new(spec(Activation::Relu, 0.0)).unwrap();
        let mut p = net.init(1);
        p.values_mut().fill(0.0);
        let y = net.predict(&p, &input(3, 2)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_block_weights_make_blocks_identity() {
        let net = Net::new(spec(Activation::None, 0.0)).unwrap();
        let mut p = net.init(1);
        for k in 0..2 {
            p.segment_mut(&format!("block.{k}.weight")).unwrap().fill(0.0);
            p.segment_mut(&format!("block.{k}.bias")).unwrap().fill(0.0);
        }
        let x = input(2, 3);
        let y = net.predict(&p, &x).unwrap();
        let x0 = net.assemble(&p, &x);
        let h = linear(&x0.view(), p.matrix(1), p.matrix(2));
        let expect = linear(&h.view(), p.matrix(p.layout().len() - 2), p.matrix(p.layout().len() - 1));
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_ignores_dropout_seed() {
        let net = Net::new(spec(Activation::Relu, 0.3)).unwrap();
        let p = net.init(5);
        let x = input(4, 6);
        let a = net.forward(&p, &x, Mode::Eval).unwrap().0;
        let b = net.predict(&p, &x).unwrap();
        assert_eq!(a, b);
        let t1 = net.forward(&p, &x, Mode::Train { seed: 1 }).unwrap().0;
        let t2 = net.forward(&p, &x, Mode::Train { seed: 2 }).unwrap().0;
        assert_ne!(t1, t2);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let net = Net::new(spec(Activation::Relu, 0.0)).unwrap();
        let mut p = net.init(5);
        let (y, tape) = net.forward(&p, &input(2, 1), Mode::Eval).unwrap();
        p.values_mut()[0] += 0.1;
        assert!(matches!(net.backward(&p, &tape, &y), Err(NeuralError::StaleTape)));
    }

    #[test]
    fn out_of_range_label_and_bad_dims_error() {
        let net = Net::new(spec(Activation::Relu, 0.0)).unwrap();
        let p = net.init(5);
        let mut x = input(2, 1);
        x.labels[0][1] = 4;
        assert!(matches!(net.predict(&p, &x), Err(NeuralError::Label { label: 4, .. })));
        let x = NetInput::single(&[0.0; 3], &[0]);
        assert!(matches!(net.predict(&p, &x), Err(NeuralError::Dimension { .. })));
    }

    #[test]
    fn identity_net_has_unit_input_gradient() {
        let s = NetSpec {
            input_dim: 1,
            blocks: 1,
            width: 1,
            dropout_rate: 0.0,
            output_dim: 1,
            output_activation: Activation::None,
            embeddings: vec![],
        };
        let net = Net::new(s.clone()).unwrap();
        let p = Params::from_values(&s, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let x = NetInput::single(&[0.7], &[]);
        let (y, tape) = net.forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(y[[0, 0]], 0.7);
        let g = net.backward(&p, &tape, &array![[1.0]]).unwrap();
        assert_eq!(g.input[[0, 0]], 1.0);
    }

    #[test]
    fn head_weight_gradient_is_outer_product() {
        let net = Net::new(spec(Activation::None, 0.0)).unwrap();
        let p = net.init(11);
        let x = input(1, 12);
        let (_, tape) = net.forward(&p, &x, Mode::Eval).unwrap();
        let up = array![[0.3, -1.2, 2.0]];
        let g = net.backward(&p, &tape, &up).unwrap();
        let seg = p.segment("head.weight").unwrap();
        let hidden = &tape.h[2];
        for r in 0..3 {
            for c in 0..5 {
                let got = g.params[seg.offset + r * 5 + c];
                assert!((got - up[[0, r]] * hidden[[0, c]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn embedding_gradient_touches_only_used_rows() {
        let net = Net::new(spec(Activation::None, 0.0)).unwrap();
        let p = net.init(2);
        let mut x = input(3, 4);
        x.labels[0] = vec![1, 1, 3];
        let (y, tape) = net.forward(&p, &x, Mode::Eval).unwrap();
        let g = net.backward(&p, &tape, &Array2::ones(y.raw_dim())).unwrap();
        let seg = p.segment("embed.0").unwrap();
        for row in 0..4 {
            let r = &g.params[seg.offset + row * 2..seg.offset + row * 2 + 2];
            if row == 0 || row == 2 {
                assert!(r.iter().all(|&v| v == 0.0));
            } else {
                assert!(r.iter().any(|&v| v != 0.0));
            }
        }
    }

    fn check_gradients(act: Activation, dropout: f64, seed: u64) -> f64 {
        let net = Net::new(spec(act, dropout)).unwrap();
        let p0 = net.init(seed);
        let x = input(4, seed + 100);
        let target = Array2::from_shape_fn((4, 3), |(r, c)| 0.2 + 0.1 * (r + c) as f64);
        let mode = Mode::Train { seed: seed + 7 };
        let loss = |v: &[f64]| {
            let p = Params::from_values(net.spec(), v.to_vec()).unwrap();
            let (y, _) = net.forward(&p, &x, mode).unwrap();
            mse(&y, &target).0
        };
        let (y, tape) = net.forward(&p0, &x, mode).unwrap();
        let (_, dy) = mse(&y, &target);
        let g = net.backward(&p0, &tape, &dy).unwrap();
        let numeric = central_difference(loss, p0.values(), 1e-5);
        max_relative_error(&g.params, &numeric, 1e-7)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Relu, Activation::Sigmoid, Activation::None] {
            let err = check_gradients(act, 0.2, 3);
            assert!(err < 1e-5, "{act:?}: {err}");
        }
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        // One block and a linear head keep the output linear in the mask.
        let net = Net::new(NetSpec { blocks: 1, ..spec(Activation::None, 0.25) }).unwrap();
        let p = net.init(8);
        let x = input(1, 9);
        let eval = net.predict(&p, &x).unwrap();
        let n = 20_000;
        let mut sum = Array2::<f64>::zeros(eval.raw_dim());
        let mut sq = Array2::<f64>::zeros(eval.raw_dim());
        for seed in 0..n {
            let y = net.forward(&p, &x, Mode::Train { seed }).unwrap().0;
            sq += &y.mapv(|v| v * v);
            sum += &y;
        }
        let mean = &sum / n as f64;
        let var = &sq / n as f64 - &mean.mapv(|v| v * v);
        for ((m, v), e) in mean.iter().zip(var.iter()).zip(eval.iter()) {
            let se = (v / n as f64).sqrt();
            assert!((m - e).abs() <= 3.0 * se + 1e-12, "mean {m} eval {e} se {se}");
        }
    }

    #[test]
    fn training_forward_is_bit_reproducible() {
        let net = Net::new(spec(Activation::Relu, 0.1)).unwrap();
        let p = net.init(8);
        let x = input(3, 9);
        let a = net.forward(&p, &x, Mode::Train { seed: 4 }).unwrap();
        let b = net.forward(&p, &x, Mode::Train { seed: 4 }).unwrap();
        assert_eq!(a.0, b.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradient_check_random_small_nets(seed in 0u64..1000, blocks in 0usize..3, width in 1usize..8) {
            let s = NetSpec { blocks, width, ..spec(Activation::Sigmoid, 0.1) };
            let net = Net::new(s).unwrap();
            let p0 = net.init(seed);
            let x = input(3, seed ^ 0xABCD);
            let mode = Mode::Train { seed };
            let target = Array2::from_elem((3, 3), 0.5);
            let (y, tape) = net.forward(&p0, &x, mode).unwrap();
            let (_, dy) = mse(&y, &target);
            let g = net.backward(&p0, &tape, &dy).unwrap();
            let numeric = central_difference(|v: &[f64]| {
                let p = Params::from_values(net.spec(), v.to_vec()).unwrap();
                mse(&net.forward(&p, &x, mode).unwrap().0, &target).0
            }, p0.values(), 1e-5);
            let err = max_relative_error(&g.params, &numeric, 1e-7);
            prop_assert!(err < 1e-5, "err {}", err);
        }
    }
}
