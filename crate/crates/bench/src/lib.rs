//! Fixtures shared by the benchmarks.

use fieldsmith::field::{RadianceField, RaySampler, TrainRay};
use fieldsmith::scene_io::{make_synthetic_scene, presets, SceneDataset};
use fieldsmith::synth::{IdentitySynth, Prompt};
use fieldsmith::{EditSession, GridSpec, Hyperparams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The 40-view, 64 px box room used throughout the tests.
pub fn room() -> SceneDataset {
    make_synthetic_scene(&presets::box_room(40, 64, 7))
        .expect("preset scene")
        .0
}

/// A 48^3 field with random parameters over the room.
pub fn field() -> RadianceField {
    let mut f = RadianceField::new(&GridSpec::cube(48, 2.05).expect("valid grid")).expect("valid field");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..f.vertex_count() {
        let c = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        f.set_vertex(i, rng.random_range(-3.0..1.0), c);
    }
    f
}

/// `n` training rays drawn from the room's pixels.
pub fn rays(ds: &SceneDataset, field: &RadianceField, n: usize) -> Vec<TrainRay> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    RaySampler::from_dataset(ds).sample(&mut rng, n, field, 0.01)
}

/// An insertion session with the initial view and ten more admitted.
pub fn session(ds: &SceneDataset) -> EditSession {
    let mut s = EditSession::new(
        ds.clone(),
        presets::edit_box(),
        Prompt::new("a *red ball").expect("valid prompt"),
        Hyperparams::default(),
        3,
    )
    .expect("valid session");
    s.synthesize_initial(&IdentitySynth).expect("identity synthesis");
    let f = RadianceField::new(&GridSpec::cube(4, 2.05).expect("valid grid")).expect("valid field");
    let opts = fieldsmith::RenderOptions {
        n_samples: 2,
        ..Default::default()
    };
    for _ in 0..10 {
        let id = s.select_next_view().expect("views remain");
        s.synthesize_refined(&f, &IdentitySynth, id, &opts)
            .expect("identity synthesis");
    }
    s
}
