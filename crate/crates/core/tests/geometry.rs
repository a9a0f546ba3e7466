//! Property tests for the sphere calculus and the embeddings.

use nalgebra::DVector;
use proptest::prelude::*;

use spheresar::embed::{
    composition_to_sphere, density_to_sphere, sphere_to_composition, sphere_to_density,
    Composition, GridDensity,
};
use spheresar::frechet::{frechet_mean, FrechetMeanOptions};
use spheresar::sphere::{
    exp_map, geodesic_distance, log_map, rodrigues_exp, TransportAtom, TransportMap, UnitVector,
};

fn unit_vector(dim: usize) -> impl Strategy<Value = UnitVector> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("needs a usable norm", |v| {
            v.iter().map(|x| x * x).sum::<f64>().sqrt() > 0.1
        })
        .prop_map(|v| UnitVector::normalized(DVector::from_vec(v), 1.0).unwrap())
}

fn tangent_at(base: &UnitVector, raw: &[f64]) -> DVector<f64> {
    let v = DVector::from_row_slice(raw);
    &v - base.coords() * base.coords().dot(&v)
}

/// A transport map with up to three atoms on an m-coordinate sphere.
fn transport_map(dim: usize, atoms: usize) -> impl Strategy<Value = TransportMap> {
    prop::collection::vec(
        (
            -2.0..2.0f64,
            prop::collection::vec(-1.0..1.0f64, dim),
            prop::collection::vec(-1.0..1.0f64, dim),
        ),
        1..=atoms,
    )
    .prop_filter_map("atom directions must be independent", move |raw| {
        let mut built = Vec::new();
        for (w, a, b) in raw {
            let za = UnitVector::normalized(DVector::from_vec(a), 1.0).ok()?;
            // Orthogonalize zb against za; transport atoms need a plane.
            let vb = DVector::from_vec(b);
            let proj = &vb - za.coords() * za.coords().dot(&vb);
            if proj.norm() < 0.1 {
                return None;
            }
            let zb = UnitVector::normalized(proj, 1.0).ok()?;
            built.push(TransportAtom {
                weight: w,
                za,
                zb,
            });
        }
        TransportMap::from_atoms(dim, 1.0, built).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Mapping a point into the tangent space and back is the identity away
    /// from the antipode.
    #[test]
    fn log_exp_round_trip(
        (a, b) in (2usize..=12).prop_flat_map(|dim| (unit_vector(dim), unit_vector(dim)))
    ) {
        prop_assume!(a.inner(&b).unwrap() > -0.999);
        let v = log_map(&a, &b).unwrap();
        let back = exp_map(&a, &v).unwrap();
        prop_assert!((back.coords() - b.coords()).norm() < 1e-8);
        // The tangent length is the geodesic distance.
        let d = geodesic_distance(&a, &b).unwrap();
        prop_assert!((v.norm() - d).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// The factored pairwise inner product equals the trace of the densified
    /// operators.
    #[test]
    fn hs_inner_matches_densified_trace(
        (x, y) in (2usize..=20)
            .prop_flat_map(|dim| (transport_map(dim, 3), transport_map(dim, 3)))
    ) {
        let dense_x = x.densify();
        let dense_y = y.densify();
        let dense_trace = (dense_x.transpose() * dense_y).trace();
        let factored = x.hs_inner(&y).unwrap();
        let scale = 1.0 + dense_trace.abs();
        prop_assert!(
            (factored - dense_trace).abs() <= 1e-10 * scale,
            "factored {factored} vs dense {dense_trace}"
        );
    }

    /// The rotation exponential keeps points on the sphere.
    #[test]
    fn rodrigues_exponential_preserves_the_norm(
        (map, point) in (2usize..=12)
            .prop_flat_map(|dim| (transport_map(dim, 3), unit_vector(dim)))
    ) {
        let moved = rodrigues_exp(&map, &point).unwrap();
        prop_assert!((moved.coords().norm_squared() - 1.0).abs() < 1e-10);
    }

    /// Transport maps act skew-symmetrically.
    #[test]
    fn transport_action_is_skew(
        (map, x, y) in (2usize..=12)
            .prop_flat_map(|dim| (transport_map(dim, 3), unit_vector(dim), unit_vector(dim)))
    ) {
        let tx = map.apply(x.coords()).unwrap();
        let ty = map.apply(y.coords()).unwrap();
        let forward = tx.dot(y.coords());
        let backward = x.coords().dot(&ty);
        prop_assert!((forward + backward).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Compositions survive the square-root embedding and its inverse.
    #[test]
    fn composition_round_trip(parts in prop::collection::vec(0.01..1.0f64, 2..10)) {
        let total: f64 = parts.iter().sum();
        let normalized: Vec<f64> = parts.iter().map(|p| p / total).collect();
        let c = Composition::new(DVector::from_vec(normalized)).unwrap();
        let back = sphere_to_composition(&composition_to_sphere(&c)).unwrap();
        prop_assert!((back.parts() - c.parts()).norm() < 1e-12);
    }

    /// Grid densities survive the square-root embedding and its inverse.
    #[test]
    fn density_round_trip(
        values in prop::collection::vec(0.01..1.0f64, 2..12),
        step in 0.05..2.0f64,
    ) {
        let mass: f64 = values.iter().map(|v| v * step).sum();
        let normalized: Vec<f64> = values.iter().map(|v| v / mass).collect();
        let d = GridDensity::new(DVector::from_vec(normalized), step).unwrap();
        let back = sphere_to_density(&density_to_sphere(&d)).unwrap();
        prop_assert!((back.values() - d.values()).norm() < 1e-12);
        prop_assert_eq!(back.delta_omega(), step);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The weighted Fréchet mean satisfies the first-order condition: the
    /// weighted tangent logs at the mean cancel.
    #[test]
    fn frechet_mean_first_order_condition(
        (base, raws, weights) in (3usize..=6).prop_flat_map(|dim| (
            unit_vector(dim),
            prop::collection::vec(prop::collection::vec(-0.5..0.5f64, dim), 4..10),
            prop::collection::vec(0.1..2.0f64, 4..10),
        ))
    ) {
        let count = raws.len().min(weights.len());
        let points: Vec<UnitVector> = raws[..count]
            .iter()
            .map(|raw| exp_map(&base, &tangent_at(&base, raw)).unwrap())
            .collect();
        let w = &weights[..count];
        let opts = FrechetMeanOptions {
            tolerance: 1e-12,
            max_iterations: 500,
            ..FrechetMeanOptions::default()
        };
        let mean = frechet_mean(&points, w, &opts).unwrap();
        let mut grad = DVector::zeros(mean.dim());
        for (p, &wi) in points.iter().zip(w) {
            grad += log_map(&mean, p).unwrap() * wi;
        }
        let total: f64 = w.iter().sum();
        prop_assert!(grad.norm() / total < 1e-6, "gradient norm {}", grad.norm());
    }
}
