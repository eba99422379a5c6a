use proptest::prelude::*;
use vggfer::oracle::{oracle_conv2d, oracle_dense, oracle_maxpool};
use vggfer::tensor::{conv2d, dense, maxpool2d, relu};
use vggfer::Tensor;

fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs() / f64::from(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn values(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-4.0f32..4.0, len)
}

fn conv_case() -> impl Strategy<Value = (Tensor, Tensor, Vec<f32>)> {
    (1usize..=4, 1usize..=4, 1usize..=9, 1usize..=9).prop_flat_map(|(cin, cout, h, w)| {
        (values(cin * h * w), values(cout * cin * 9), values(cout)).prop_map(move |(x, k, b)| {
            (
                Tensor::new(vec![cin, h, w], x).unwrap(),
                Tensor::new(vec![cout, cin, 3, 3], k).unwrap(),
                b,
            )
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conv2d_matches_naive_loops((x, k, b) in conv_case()) {
        let fast = conv2d(&x, &k, &b).unwrap();
        let slow = oracle_conv2d(&x, &k, &b).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(rel_err(fast.data(), slow.data()) <= 1e-5);
    }

    #[test]
    fn maxpool_matches_exactly(c in 1usize..=5, h2 in 1usize..=8, w2 in 1usize..=8, seed in any::<u64>()) {
        let (h, w) = (2 * h2, 2 * w2);
        let data: Vec<f32> = (0..c * h * w)
            .map(|i| ((i as u64).wrapping_mul(seed | 1).rotate_left(17) % 1000) as f32 - 500.0)
            .collect();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        let fast = maxpool2d(&x).unwrap();
        let slow = oracle_maxpool(&x).unwrap();
        prop_assert_eq!(fast.shape(), &[c, h2, w2][..]);
        prop_assert_eq!(fast.data(), slow.data());
    }

    #[test]
    fn dense_matches_naive_loops(
        (v, m, b) in (1usize..=96, 1usize..=40).prop_flat_map(|(n_in, n_out)| {
            (values(n_in), values(n_in * n_out), values(n_out)).prop_map(move |(v, m, b)| {
                (v, Tensor::new(vec![n_out, n_in], m).unwrap(), b)
            })
        })
    ) {
        let fast = dense(&v, &m, &b).unwrap();
        let slow = oracle_dense(&v, &m, &b).unwrap();
        prop_assert!(rel_err(&fast, &slow) <= 1e-5);
    }
}

#[test]
fn conv_uses_same_padding() {
    // a single 1 in the corner, all-ones kernel: every output touching it sees 1
    let mut x = vec![0.0f32; 16];
    x[0] = 1.0;
    let x = Tensor::new(vec![1, 4, 4], x).unwrap();
    let k = Tensor::filled(vec![1, 1, 3, 3], 1.0).unwrap();
    let y = conv2d(&x, &k, &[0.5]).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4]);
    let expect = [1.5, 1.5, 0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
    assert_eq!(y.data(), &expect);
}

#[test]
fn shape_errors_are_reported() {
    let x = Tensor::zeros(vec![2, 4, 4]).unwrap();
    let k = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
    assert!(conv2d(&x, &k, &[0.0]).is_err());
    let odd = Tensor::zeros(vec![1, 3, 4]).unwrap();
    assert!(maxpool2d(&odd).is_err());
    let m = Tensor::zeros(vec![2, 5]).unwrap();
    assert!(dense(&[1.0; 4], &m, &[0.0; 2]).is_err());
}

#[test]
fn relu_clamps_negatives() {
    let x = Tensor::new(vec![4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0, 0.0]);
}
