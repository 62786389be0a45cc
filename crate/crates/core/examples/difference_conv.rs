//! Difference convolutions: zero response on flat regions, and the hybrid
//! block collapsing into one vanilla kernel.

use gtvc::locality::{diff_conv, DiffConvKind, Hcb};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gtvc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = ParamStore::new();
    let flat = Tensor::full(&[1, 5, 5, 1], 3.0);
    let k = Tensor::from_fn(&[3, 3, 1], |_| rng.gen_range(-1.0..1.0));
    for kind in DiffConvKind::ALL {
        let mut t = Tape::inference(&store);
        let (x, kv) = (t.constant(flat.clone()), t.constant(k.clone()));
        let y = diff_conv(&mut t, x, kv, kind)?;
        // centre pixel, away from the zero padding
        println!("{:<10} centre response {:+.3e}", kind.tag(), t.data(y)[12]);
    }

    let mut store = ParamStore::new();
    let hcb = Hcb::new(&mut store, &mut rng, "hcb", 4)?;
    let x = Tensor::from_fn(&[2, 8, 8, 4], |_| rng.gen_range(-1.0..1.0));
    let mut t = Tape::inference(&store);
    let xv = t.constant(x);
    let branches = hcb.forward(&mut t, xv)?;
    let merged = hcb.forward_merged(&mut t, xv)?;
    let diff = t.value(branches).max_abs_diff(t.value(merged));
    println!("five branches vs merged kernel: max abs difference {diff:.3e}");
    Ok(())
}
