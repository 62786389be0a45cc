//! Print the four flattening orders of a tiny video feature and check that
//! each layout transform inverts exactly.

use gtvc::geom::{apply_transform, inverse_transform, scan_sequence, ScanOrder};
use gtvc::tensor::Tensor;

fn main() -> gtvc::Result<()> {
    let (t, h, w) = (3, 2, 2);
    for order in ScanOrder::ALL {
        let seq = scan_sequence(t, h, w, order)?;
        let shown: Vec<String> = seq.iter().map(|(f, p)| format!("{f}:{p}")).collect();
        println!("{order}: {}", shown.join(" "));
    }

    let x = Tensor::from_fn(&[t, h, w, 4], |i| i as f64);
    for order in ScanOrder::ALL {
        let y = apply_transform(&x, order)?;
        let back = inverse_transform(&y, order)?;
        println!("{order}: transformed shape {:?}, round trip exact: {}", y.shape(), back == x);
    }
    Ok(())
}
