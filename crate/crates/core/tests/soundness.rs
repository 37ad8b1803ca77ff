mod common;

use nestbox_core::training::{correct_count, cross_entropy, guaranteed_count, worst_case_batch};
use nestbox_core::Network;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_sound(seed: u64, samples: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = common::random_mlp(&mut rng, 12);
    let net = Network::new(arch.clone()).unwrap();
    let b = common::random_box(&mut rng, &arch, 0.2);
    let x = common::random_inputs(&mut rng, 6, arch.input.len());
    let (lo, hi) = net.logit_bounds(&b, &x, None).unwrap();
    let labels: Vec<usize> = (0..x.nrows()).map(|i| i % arch.outputs).collect();
    let wc_loss = cross_entropy(&worst_case_batch(&lo, &hi, &labels).unwrap(), &labels).unwrap();
    let wc_acc = guaranteed_count(&lo, &hi, &labels);
    for _ in 0..samples {
        let theta = b.sample_uniform(&mut rng);
        let z = net.forward_at(&theta, &x, None).unwrap();
        for ((&v, &l), &u) in z.iter().zip(lo.iter()).zip(hi.iter()) {
            prop_assert!(l <= v && v <= u, "{v} outside [{l}, {u}]");
        }
        prop_assert!(cross_entropy(&z, &labels).unwrap() <= wc_loss);
        prop_assert!(correct_count(&z, &labels) >= wc_acc);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_networks_stay_inside_bounds(seed in any::<u64>()) {
        check_sound(seed, 100)?;
    }

    #[test]
    fn shrinking_a_box_never_raises_the_worst_case_loss(seed in any::<u64>(), keep in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = common::random_mlp(&mut rng, 8);
        let net = Network::new(arch.clone()).unwrap();
        let outer = common::random_box(&mut rng, &arch, 0.3);
        let mut inner = outer.clone();
        for t in &mut inner.tensors {
            t.radius.mapv_inplace(|r| r * keep);
        }
        prop_assert!(outer.contains(&inner).unwrap());
        let x = common::random_inputs(&mut rng, 5, arch.input.len());
        let labels: Vec<usize> = (0..5).map(|i| i % arch.outputs).collect();
        let (lo, hi) = net.logit_bounds(&outer, &x, None).unwrap();
        let (ilo, ihi) = net.logit_bounds(&inner, &x, None).unwrap();
        let l_out = cross_entropy(&worst_case_batch(&lo, &hi, &labels).unwrap(), &labels).unwrap();
        let l_in = cross_entropy(&worst_case_batch(&ilo, &ihi, &labels).unwrap(), &labels).unwrap();
        prop_assert!(l_in <= l_out, "{l_in} > {l_out}");
        prop_assert!(guaranteed_count(&ilo, &ihi, &labels) >= guaranteed_count(&lo, &hi, &labels));
        for (a, b) in ilo.iter().zip(lo.iter()) {
            prop_assert!(a >= b);
        }
        for (a, b) in ihi.iter().zip(hi.iter()) {
            prop_assert!(a <= b);
        }
    }
}

#[test]
fn conv_networks_are_sound() {
    use nestbox_core::nn::parse_layers;
    use nestbox_core::{Architecture, Heads};
    let arch = Architecture {
        input: "2x6x6".parse().unwrap(),
        layers: parse_layers("conv:3:3:1:1,relu,maxpool:2,conv:2:2:1:0,tanh,avgpool:2,dense:5,sigmoid").unwrap(),
        outputs: 3,
        heads: Heads::Shared,
    };
    let net = Network::new(arch.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = common::random_box(&mut rng, &arch, 0.1);
    let x = common::random_inputs(&mut rng, 4, 72);
    let (lo, hi) = net.logit_bounds(&b, &x, None).unwrap();
    for _ in 0..300 {
        let z = net.forward_at(&b.sample_uniform(&mut rng), &x, None).unwrap();
        for ((&v, &l), &u) in z.iter().zip(lo.iter()).zip(hi.iter()) {
            assert!(l <= v && v <= u, "{v} outside [{l}, {u}]");
        }
    }
}
