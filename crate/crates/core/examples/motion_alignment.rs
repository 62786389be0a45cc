//! Warp the previous latent of a translating sequence by its motion and
//! compare with the current latent.

use gtvc::entropy::motion::{align, translation_flow};
use gtvc::tensor::{ParamStore, Tape, Tensor};

fn main() -> gtvc::Result<()> {
    let (h, w, c) = (6, 8, 2);
    let v = (2i64, -1i64);
    let frame = |t: i64| {
        Tensor::from_fn(&[1, h, w, c], |i| {
            let (y, x, ch) = ((i / (w * c)) as i64, ((i / c) % w) as i64, i % c);
            let sy = (y - t * v.1).rem_euclid(h as i64);
            let sx = (x - t * v.0).rem_euclid(w as i64);
            ((sy * 31 + sx * 7) % 13) as f64 + ch as f64
        })
    };
    let store = ParamStore::new();
    let mut tape = Tape::inference(&store);
    let prev = tape.constant(frame(1));
    let flow = tape.constant(translation_flow(1, h, w, (v.0 as f64, v.1 as f64)));
    let warped = align(&mut tape, prev, flow)?;
    let cur = frame(2);

    for y in 0..h {
        let row: String = (0..w)
            .map(|x| {
                let i = (y * w + x) * c;
                if tape.data(warped)[i] == cur.data()[i] {
                    '.'
                } else {
                    'x'
                }
            })
            .collect();
        println!("{row}");
    }
    println!("'.' matches the current frame; 'x' marks border pixels whose source left the frame");
    Ok(())
}
