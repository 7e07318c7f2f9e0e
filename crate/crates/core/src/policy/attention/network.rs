//! Forward pass of the assignment network.
//!
//! Parameters are stored as f32 but every computation runs in f64.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::weights::{NetworkConfig, Tensor, WeightBundle, WeightError, ARM_INPUT, OBJECT_INPUT};
use crate::model::Arm;

#[derive(Debug, Clone)]
struct Linear {
    /// `[out, in]`
    w: Array2<f64>,
    b: Option<Array1<f64>>,
}

impl Linear {
    fn load(bundle: &WeightBundle, name: &str, bias: bool) -> Self {
        let to2 = |t: &Tensor| {
            Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.iter().map(|&v| v as f64).collect())
                .expect("validated shape")
        };
        let to1 = |t: &Tensor| t.data.iter().map(|&v| v as f64).collect::<Array1<f64>>();
        Self {
            w: to2(&bundle.tensors[&format!("{name}.weight")]),
            b: bias.then(|| to1(&bundle.tensors[&format!("{name}.bias")])),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    fn apply1(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = self.w.dot(&x);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

#[derive(Debug, Clone)]
struct Mlp {
    l0: Linear,
    l1: Linear,
}

impl Mlp {
    fn load(bundle: &WeightBundle, prefix: &str) -> Self {
        Self {
            l0: Linear::load(bundle, &format!("{prefix}.0"), true),
            l1: Linear::load(bundle, &format!("{prefix}.1"), true),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.l1.apply(relu(self.l0.apply(x)).view())
    }
}

#[derive(Debug, Clone)]
struct Mha {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Mha {
    fn load(bundle: &WeightBundle, prefix: &str, heads: usize) -> Self {
        let l = |p: &str| Linear::load(bundle, &format!("{prefix}.{p}"), true);
        Self {
            q: l("q"),
            k: l("k"),
            v: l("v"),
            o: l("o"),
            heads,
        }
    }

    /// Attention output (before the residual) for each query row.
    fn apply(&self, query: ArrayView2<f64>, source: ArrayView2<f64>) -> Array2<f64> {
        let (q, k, v) = (self.q.apply(query), self.k.apply(source), self.v.apply(source));
        let d = q.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros((q.nrows(), d));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.axis_iter_mut(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        self.o.apply(concat.view())
    }
}

/// Object embeddings and both decoders' keys for one instance. Object states
/// do not change during an episode, so this is computed once.
#[derive(Debug, Clone)]
pub struct ObjectCache {
    pub states: Vec<[f64; 4]>,
    pub embeddings: Array2<f64>,
    pub keys: [Array2<f64>; 2],
}

#[derive(Debug, Clone)]
pub struct AttentionNet {
    config: NetworkConfig,
    arm_mlp: Vec<Mlp>,
    obj_mlp: Mlp,
    arm_mha: Option<Mha>,
    obj_mha: Option<Mha>,
    dec_q: [Linear; 2],
    dec_k: [Linear; 2],
    value0: Linear,
    value1: Linear,
}

impl AttentionNet {
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self, WeightError> {
        bundle.validate()?;
        let cfg = bundle.config.clone();
        let dec = |i: usize, p: &str| Linear::load(bundle, &format!("dec{i}.{p}"), false);
        Ok(Self {
            arm_mlp: cfg.arm_mlp_prefixes().iter().map(|p| Mlp::load(bundle, p)).collect(),
            obj_mlp: Mlp::load(bundle, "obj_mlp"),
            arm_mha: cfg.arm_encoder.then(|| Mha::load(bundle, "arm_mha", cfg.heads)),
            obj_mha: cfg.object_encoder.then(|| Mha::load(bundle, "obj_mha", cfg.heads)),
            dec_q: [dec(1, "q"), dec(2, "q")],
            dec_k: [dec(1, "k"), dec(2, "k")],
            value0: Linear::load(bundle, "value.0", true),
            value1: Linear::load(bundle, "value.1", true),
            config: cfg,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, WeightError> {
        Self::from_bundle(&WeightBundle::load(path)?)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// `n x 4` object states to `n x d` embeddings.
    pub fn encode_objects(&self, object_states: &[[f64; 4]]) -> Array2<f64> {
        let x = Array2::from_shape_fn((object_states.len(), OBJECT_INPUT), |(i, j)| object_states[i][j]);
        let h = self.obj_mlp.apply(x.view());
        match &self.obj_mha {
            Some(mha) => &h + &mha.apply(h.view(), h.view()),
            None => h,
        }
    }

    /// Both arms' `2 x 2` states to `2 x d` embeddings; each arm attends to
    /// the other.
    pub fn encode_arms(&self, arm_states: &[[f64; 2]; 2]) -> Array2<f64> {
        let mut h = Array2::zeros((2, self.config.d));
        for (i, state) in arm_states.iter().enumerate() {
            let mlp = &self.arm_mlp[i.min(self.arm_mlp.len() - 1)];
            let x = Array2::from_shape_fn((1, ARM_INPUT), |(_, j)| state[j]);
            h.row_mut(i).assign(&mlp.apply(x.view()).row(0));
        }
        let Some(mha) = &self.arm_mha else { return h };
        let mut out = h.clone();
        for i in 0..2 {
            let q = h.slice(s![i..i + 1, ..]);
            let kv = h.slice(s![1 - i..2 - i, ..]);
            let mut row = out.row_mut(i);
            row += &mha.apply(q, kv).row(0);
        }
        out
    }

    /// Precomputes object embeddings and decoder keys.
    pub fn cache_objects(&self, object_states: &[[f64; 4]]) -> ObjectCache {
        let embeddings = self.encode_objects(object_states);
        let keys = [0, 1].map(|i| self.dec_k[i].apply(embeddings.view()));
        ObjectCache {
            states: object_states.to_vec(),
            embeddings,
            keys,
        }
    }

    /// Masked pointer logits of `arm` over every object.
    pub fn decode_logits(
        &self,
        arm: Arm,
        arm_embedding: ArrayView1<f64>,
        object_embeddings: ArrayView2<f64>,
        mask: &[bool],
    ) -> Vec<f64> {
        let i = arm.index();
        let q = self.dec_q[i].apply1(arm_embedding);
        let keys = self.dec_k[i].apply(object_embeddings);
        pointer_logits(q.view(), keys.view(), mask, self.config.logit_clip)
    }

    /// Logits for one arm against cached keys.
    pub fn decode_cached(&self, arm: Arm, arm_embedding: ArrayView1<f64>, cache: &ObjectCache, mask: &[bool]) -> Vec<f64> {
        let q = self.dec_q[arm.index()].apply1(arm_embedding);
        pointer_logits(q.view(), cache.keys[arm.index()].view(), mask, self.config.logit_clip)
    }

    /// State value from the mean of the remaining objects' embeddings and
    /// both arm embeddings.
    pub fn value(&self, arms: ArrayView2<f64>, objects: ArrayView2<f64>, global_mask: &[bool]) -> f64 {
        let d = self.config.d;
        let mut x = Array1::zeros(3 * d);
        let live: Vec<usize> = (0..objects.nrows()).filter(|&j| global_mask[j]).collect();
        if !live.is_empty() {
            let mut mean = x.slice_mut(s![..d]);
            for &j in &live {
                mean += &objects.row(j);
            }
            mean /= live.len() as f64;
        }
        x.slice_mut(s![d..2 * d]).assign(&arms.row(0));
        x.slice_mut(s![2 * d..]).assign(&arms.row(1));
        let hidden = self.value0.apply1(x.view()).mapv(|v| v.max(0.0));
        self.value1.apply1(hidden.view())[0]
    }
}

/// `u_j = q . k_j / sqrt(d)`, optionally squashed to `C tanh(u_j / C)`;
/// masked entries are `-inf`.
pub fn pointer_logits(q: ArrayView1<f64>, keys: ArrayView2<f64>, mask: &[bool], clip: Option<f64>) -> Vec<f64> {
    assert_eq!(keys.nrows(), mask.len(), "one mask entry per object");
    let scale = 1.0 / (q.len() as f64).sqrt();
    keys.outer_iter()
        .zip(mask)
        .map(|(k, &m)| {
            if !m {
                return f64::NEG_INFINITY;
            }
            let u = q.dot(&k) * scale;
            match clip {
                Some(c) => c * (u / c).tanh(),
                None => u,
            }
        })
        .collect()
}

/// Softmax over the finite entries; `-inf` entries get exactly 0. `None`
/// when no entry is finite.
pub fn masked_softmax(logits: &[f64]) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .copied()
        .filter(|u| u.is_finite())
        .fold(None, |m: Option<f64>, u| Some(m.map_or(u, |m| m.max(u))))?;
    let exp: Vec<f64> = logits
        .iter()
        .map(|&u| if u.is_finite() { (u - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exp.iter().sum();
    Some(exp.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(seed: u64) -> AttentionNet {
        let cfg = NetworkConfig {
            d: 16,
            heads: 4,
            mlp_hidden: 12,
            ..NetworkConfig::default()
        };
        AttentionNet::from_bundle(&WeightBundle::random(cfg, seed)).unwrap()
    }

    fn states(seed: u64, n: usize) -> Vec<[f64; 4]> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect()
    }

    #[test]
    fn unit_vectors_give_inverse_sqrt_d() {
        let mut q = Array1::zeros(128);
        q[0] = 1.0;
        let keys = Array2::from_shape_fn((2, 128), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let u = pointer_logits(q.view(), keys.view(), &[true, false], None);
        assert!((u[0] - 1.0 / 128f64.sqrt()).abs() < 1e-15);
        assert!((u[0] - 0.0884).abs() < 1e-4);
        assert_eq!(u[1], f64::NEG_INFINITY);
    }

    #[test]
    fn clip_bounds_logits() {
        let q = array![100.0, 100.0];
        let keys = array![[100.0, 100.0], [-1.0, 0.5]];
        let u = pointer_logits(q.view(), keys.view(), &[true, true], Some(10.0));
        assert!(u[0] <= 10.0 && u[0] > 9.99);
        let raw = (-100.0 + 50.0) / 2f64.sqrt();
        assert!((u[1] - 10.0 * (raw / 10.0).tanh()).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(masked_softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(masked_softmax(&[f64::NEG_INFINITY, 3.2]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(masked_softmax(&[f64::NEG_INFINITY; 3]), None);
        let p = masked_softmax(&[1.0, 2.0, 3.0]).unwrap();
        let z: f64 = [1f64, 2.0, 3.0].iter().map(|u| u.exp()).sum();
        for (pi, u) in p.iter().zip([1f64, 2.0, 3.0]) {
            assert!((pi - u.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn single_object_self_attention_is_value_path() {
        let net = small(1);
        let st = states(2, 1);
        let enc = net.encode_objects(&st);
        let x = Array2::from_shape_fn((1, 4), |(_, j)| st[0][j]);
        let h = net.obj_mlp.apply(x.view());
        let mha = net.obj_mha.as_ref().unwrap();
        let expect = &h + &mha.o.apply(mha.v.apply(h.view()).view());
        for (a, b) in enc.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_weights_leave_residual() {
        let mut bundle = WeightBundle::random(
            NetworkConfig {
                d: 16,
                heads: 4,
                mlp_hidden: 12,
                ..NetworkConfig::default()
            },
            3,
        );
        for (name, t) in bundle.tensors.iter_mut() {
            if name.starts_with("obj_mha.") || name.starts_with("arm_mha.o") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let net = AttentionNet::from_bundle(&bundle).unwrap();
        let st = states(4, 5);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| st[i][j]);
        assert_eq!(net.encode_objects(&st), net.obj_mlp.apply(x.view()));
        let arms = [[0.1, 0.2], [0.9, 0.4]];
        let enc = net.encode_arms(&arms);
        for (i, a) in arms.iter().enumerate() {
            let x = Array2::from_shape_fn((1, 2), |(_, j)| a[j]);
            assert_eq!(enc.row(i), net.arm_mlp[0].apply(x.view()).row(0));
        }
    }

    #[test]
    fn object_encoder_is_permutation_equivariant() {
        let net = small(5);
        let st = states(6, 7);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let permuted: Vec<_> = perm.iter().map(|&p| st[p]).collect();
        let (a, b) = (net.encode_objects(&st), net.encode_objects(&permuted));
        for (row, &p) in perm.iter().enumerate() {
            for (x, y) in b.row(row).iter().zip(a.row(p).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_arms_get_identical_embeddings() {
        let net = small(7);
        let e = net.encode_arms(&[[0.3, 0.6], [0.3, 0.6]]);
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn arm_embedding_depends_on_other_arm() {
        // Finite difference on the other arm's x coordinate.
        let net = small(8);
        let base = net.encode_arms(&[[0.2, 0.5], [0.8, 0.5]]);
        let moved = net.encode_arms(&[[0.2, 0.5], [0.8 + 1e-4, 0.5]]);
        let diff: f64 = base.row(0).iter().zip(moved.row(0).iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9, "arm 1 embedding ignores arm 2: {diff}");
        let off = AttentionNet::from_bundle(&WeightBundle::random(
            NetworkConfig {
                d: 16,
                heads: 4,
                mlp_hidden: 12,
                arm_encoder: false,
                ..NetworkConfig::default()
            },
            8,
        ))
        .unwrap();
        let a = off.encode_arms(&[[0.2, 0.5], [0.8, 0.5]]);
        let b = off.encode_arms(&[[0.2, 0.5], [0.9, 0.5]]);
        assert_eq!(a.row(0), b.row(0));
    }

    #[test]
    fn cached_decode_matches_direct() {
        let net = small(9);
        let st = states(10, 6);
        let cache = net.cache_objects(&st);
        let arms = net.encode_arms(&[[0.0, 0.0], [1.0, 0.0]]);
        let mask = [true, false, true, true, false, true];
        for arm in Arm::BOTH {
            let direct = net.decode_logits(arm, arms.row(arm.index()), cache.embeddings.view(), &mask);
            let cached = net.decode_cached(arm, arms.row(arm.index()), &cache, &mask);
            assert_eq!(direct, cached);
            assert_eq!(direct.iter().filter(|u| u.is_finite()).count(), 4);
        }
    }
}
