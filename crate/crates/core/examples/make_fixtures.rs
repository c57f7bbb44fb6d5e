//! Regenerates the checked-in test fixtures under `tests/fixtures/`.
//!
//! cargo run -p cmprior --example make_fixtures

use std::path::Path;

use cmprior::io::{write_mask_pgm, write_tensor};
use cmprior::synth::two_blob_episode;
use cmprior::{BinaryMask, Tensor};

fn main() -> cmprior::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir).map_err(|e| cmprior::Error::Io { path: dir.clone(), source: e })?;

    let golden = Tensor::new(vec![2, 3], vec![0.0f32, 1.0, -1.0, 0.5, -2.25, 1e-3])?;
    write_tensor(&golden, dir.join("golden_2x3.cmpt"))?;

    let ep = two_blob_episode(16, 8, 1.0, 7);
    write_tensor(ep.support.tensor(), dir.join("support.cmpt"))?;
    write_mask_pgm(&ep.support_mask, dir.join("support.pgm"))?;
    write_tensor(ep.query.tensor(), dir.join("query.cmpt"))?;
    write_mask_pgm(&ep.query_gt, dir.join("query_gt.pgm"))?;
    write_mask_pgm(&BinaryMask::zeros(16, 16)?, dir.join("empty.pgm"))?;

    let narrow = two_blob_episode(16, 4, 1.0, 8);
    write_tensor(narrow.query.tensor(), dir.join("query_c4.cmpt"))?;
    Ok(())
}
