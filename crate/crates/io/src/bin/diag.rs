use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weft_core::body::{joint, stand_in_body, BodyParams};
use weft_core::garment::{sample_outfit, GeneratorConfig};
use weft_core::mesh::TriMesh;
use weft_core::sim::{build_cloth, kinetic_energy, step, Collider, SequenceConfig};
use weft_core::geom::Vec3;
use weft_io::config::PipelineConfig;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let pipeline = PipelineConfig::default();
    let model = stand_in_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = sample_outfit(&model, &GeneratorConfig::default(), &mut rng).unwrap();
    println!("seed {seed}: {:?} tightness {:?}", sample.gender, sample.tightness);

    let gender = sample.gender;
    let rest = BodyParams::rest(model.shape_count(), joint::COUNT, gender);
    let mut tight = rest.clone();
    tight.beta[0] += sample.tightness[0] * gender.first_offset_sign();
    tight.beta[1] += sample.tightness[1];
    let warmup: Vec<TriMesh> = model.transition(&tight, &rest, pipeline.warmup_shape_frames).unwrap();

    let which = std::env::args().nth(2).unwrap_or_else(|| "upper".into());
    let fabric_name = std::env::args().nth(3).unwrap_or_else(|| "cotton".into());
    let piece = if which == "lower" {
        &sample.lower.mesh
    } else {
        sample.upper.as_ref().map(|u| &u.mesh).unwrap_or(&sample.lower.mesh)
    };
    let fabric = pipeline.fabric_with_overrides(&fabric_name).unwrap();
    let mut state = build_cloth(piece, &fabric, &[]);

    // Drape-start stats against the first warmup body.
    let collider = Collider::new(&warmup[0]).unwrap();
    let mut min_signed = f64::INFINITY;
    let mut inside = 0usize;
    for p in &state.positions {
        if let Some((s, _, _)) = collider.signed_distance(*p) {
            if s < min_signed {
                min_signed = s;
            }
            if s < 0.0 {
                inside += 1;
            }
        }
    }
    println!("drape start: min signed {min_signed:.4}, {inside} vertices inside");

    let frames: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let mut target = rest.clone();
    target.theta = vec![(0..joint::COUNT)
        .map(|_| {
            use rand::Rng;
            Vec3::new(
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
            )
        })
        .collect()];
    let captured = model.transition(&rest, &target, 2 * frames).unwrap();
    let motion: Vec<TriMesh> = captured.iter().step_by(2).cloned().collect();
    let mut sequence = warmup.clone();
    for _ in 0..pipeline.warmup_pose_frames {
        sequence.push(motion[0].clone());
    }
    sequence.extend(motion.iter().cloned());

    let cfg = SequenceConfig::default();
    let dt = 1.0 / 30.0 / cfg.substeps as f64;
    for (fi, body) in sequence.iter().enumerate() {
        let collider = Collider::new(body).unwrap();
        for _ in 0..cfg.substeps {
            step(&mut state, Some(&collider), dt, cfg.gravity).unwrap();
        }
        let ke = kinetic_energy(&state);
        let max_v = state
            .velocities
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        let mut max_stretch = 0.0f64;
        for s in &state.springs {
            let len = (state.positions[s.j] - state.positions[s.i]).norm();
            max_stretch = max_stretch.max(len / s.rest_length);
        }
        let min_y = state.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        println!(
            "warm {fi:2}: ke {ke:9.4} max|v| {max_v:8.3} max_stretch {max_stretch:7.3} min_y {min_y:8.3}"
        );
        if !ke.is_finite() || ke > 1e6 {
            break;
        }
    }
    let _ = Vec3::ZERO;
}
