//! Multi-dimensional complex FFTs over flat row-major buffers.
//!
//! Every transform in the crate goes through [`transform`], which applies a
//! 1-d rustfft plan along each axis. Plans are cached per thread by the
//! planner; the scratch buffer is allocated per call.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    /// Physical to spectral, scaled by `1 / points`.
    Forward,
    /// Spectral to physical, unscaled.
    Inverse,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place transform of `data`, a row-major array of shape `[n; dim]`.
pub(crate) fn transform(data: &mut [Complex64], n: usize, dim: usize, direction: Direction) {
    let total = n.pow(dim as u32);
    assert_eq!(data.len(), total, "buffer does not match grid shape");
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    });

    // The last axis is contiguous: rustfft processes consecutive chunks.
    fft.process(data);

    if dim > 1 {
        let mut lines = vec![Complex64::default(); total];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            // Gather every line along `axis` into contiguous storage.
            let mut line = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let dst = &mut lines[line * n..(line + 1) * n];
                    for (i, slot) in dst.iter_mut().enumerate() {
                        *slot = data[base + i * stride];
                    }
                    line += 1;
                }
            }
            fft.process(&mut lines);
            let mut line = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let src = &lines[line * n..(line + 1) * n];
                    for (i, value) in src.iter().enumerate() {
                        data[base + i * stride] = *value;
                    }
                    line += 1;
                }
            }
        }
    }

    if direction == Direction::Forward {
        let scale = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}
