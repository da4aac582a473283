//! A Basic-LSTM's weights as a function of the meta vector: linear in z, and
//! a plain LSTM when z is held fixed.
//!
//!     cargo run --example dynamic_weights

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metalstm::cells::{
    basic_lstm_step, lstm_step, make_dynamic_weights, meta_stack_step, BasicLstmParams, CellState, LstmParams,
    MetaLstmParams,
};
use metalstm::numeric::Vector;

fn main() -> metalstm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, h, m, z) = (4, 3, 3, 2);
    let basic = BasicLstmParams::init(d, h, z, &mut rng);

    let z1 = Vector::from_vec(vec![1.0, 0.0]);
    let z2 = Vector::from_vec(vec![0.0, 1.0]);
    let mix = Vector::from_vec(vec![0.3, -2.0]);
    let (w1, _) = make_dynamic_weights(&basic, &z1)?;
    let (w2, _) = make_dynamic_weights(&basic, &z2)?;
    let (wm, _) = make_dynamic_weights(&basic, &mix)?;
    let err = wm
        .as_slice()
        .iter()
        .zip(w1.as_slice().iter().zip(w2.as_slice()))
        .map(|(m, (a, b))| (m - (0.3 * a - 2.0 * b)).abs())
        .fold(0.0, f64::max);
    println!("W(0.3 e1 - 2 e2) vs 0.3 W(e1) - 2 W(e2): max diff {err:.1e}");

    let xs: Vec<Vector> = (0..5).map(|_| Vector::uniform(d, 1.0, &mut rng)).collect();
    let (w, b) = make_dynamic_weights(&basic, &mix)?;
    let frozen = LstmParams { w, b };
    let (mut s1, mut s2) = (CellState::zeros(h), CellState::zeros(h));
    for x in &xs {
        s1 = basic_lstm_step(&basic, &mix, x, &s1)?;
        s2 = lstm_step(&frozen, x, &s2)?;
    }
    println!("fixed z, 5 steps: basic == standard: {}", s1 == s2);

    // With a Meta-LSTM in charge, z moves every step.
    let meta = MetaLstmParams::init(d, h, m, z, &mut rng);
    let (mut ms, mut bs) = (CellState::zeros(m), CellState::zeros(h));
    for (t, x) in xs.iter().enumerate() {
        let (next_meta, next_basic, z_t) = meta_stack_step(&meta, &basic, x, &ms, &bs)?;
        println!("t={} z = {:?}", t + 1, z_t.as_slice());
        ms = next_meta;
        bs = next_basic;
    }
    Ok(())
}
