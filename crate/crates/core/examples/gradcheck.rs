//! Finite-difference check of the tape autodiff on a masked attention head
//! followed by layer norm.

use rvb::tensor::gradcheck::{check, DEFAULT_STEP};
use rvb::tensor::{Graph, Tensor, Var};

fn tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn main() -> rvb::Result<()> {
    // x: 4 tokens of width 6; the last key is hidden from the first two queries.
    let inputs = [
        tensor(4, 6, 1),
        tensor(6, 6, 2),
        tensor(6, 6, 3),
        tensor(1, 6, 4),
        tensor(1, 6, 5),
    ];
    let mask: Vec<bool> = (0..16).map(|i| !(i / 4 < 2 && i % 4 == 3)).collect();

    let build = |g: &mut Graph, v: &[Var]| -> rvb::Result<Var> {
        let (x, wq, wk, gain, bias) = (v[0], v[1], v[2], v[3], v[4]);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / 6f64.sqrt());
        let attn = g.softmax_rows(scores, Some(&mask))?;
        let mixed = g.matmul(attn, x)?;
        let h = g.add(mixed, x)?;
        let y = g.layer_norm(h, gain, bias, 1e-12)?;
        let y = g.relu(y);
        let sq = g.mul(y, y)?;
        Ok(g.sum(sq))
    };

    let report = check(&inputs, DEFAULT_STEP, build)?;
    println!(
        "checked {} partial derivatives, worst relative error {:.2e} at input {} element {}",
        report.checked, report.max_rel_err, report.worst.0, report.worst.1
    );
    assert!(report.max_rel_err < 1e-4);
    Ok(())
}
