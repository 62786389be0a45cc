//! Reverse-mode gradients through a small network, checked against finite
//! differences.

use gtvc::nn::{LayerNorm, Linear};
use gtvc::tensor::gradcheck::{check, GradCheckConfig};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gtvc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let fc1 = Linear::new(&mut store, &mut rng, "fc1", 6, 12, true)?;
    let norm = LayerNorm::new(&mut store, &mut rng, "norm", 12)?;
    let fc2 = Linear::new(&mut store, &mut rng, "fc2", 12, 3, true)?;
    let x = Tensor::from_fn(&[5, 6], |_| rng.gen_range(-1.0..1.0));

    let net = |t: &mut Tape, v: &[gtvc::tensor::Var]| {
        let h = fc1.forward(t, v[0])?;
        let h = t.gelu(h)?;
        let h = norm.forward(t, h)?;
        fc2.forward(t, h)
    };

    let mut tape = Tape::new(&store);
    let xv = tape.input(x.clone());
    let y = net(&mut tape, &[xv])?;
    let sq = tape.unary(y, gtvc::tensor::Unary::Square)?;
    let loss = tape.sum(sq)?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", tape.data(loss)[0]);
    println!("d loss / d x[0..6] = {:?}", &grads.wrt(xv).expect("input gradient")[..6]);

    let report = check(&store, &[x], GradCheckConfig::default(), net)?;
    println!(
        "{} probes, max relative error {:.2e} (worst: {})",
        report.probes, report.max_rel_err, report.worst
    );
    Ok(())
}
