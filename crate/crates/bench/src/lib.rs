//! Benchmark fixtures shared by the criterion targets.

use gazezone::pipeline::{render_face, RenderedFace, SubjectLook, SyntheticFaceSpec};

/// A deterministic rendered face at the reference size.
pub fn sample_face() -> RenderedFace {
    let spec = SyntheticFaceSpec {
        iris_offset: 4.0,
        vertical_offset: 0.0,
        roll: 0.0,
        noise_sigma: 4.0,
        jitter: (0.0, 0.0),
        seed: 1,
    };
    render_face(&spec, &SubjectLook::default(), 128)
}
