//! Scan-order transforms, the S6 selective scan, GTMB and CMM.

mod gtmb;
pub mod scan;
pub mod transform;

pub use gtmb::{Cmm, Gtmb, SsmParams, DEFAULT_STATE_DIM};
pub use transform::{apply_transform, inverse_transform, scan_sequence, ScanOrder};
