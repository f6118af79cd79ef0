#![allow(clippy::needless_range_loop)]
use proptest::prelude::*;
use qlpv_core::ccpoly::PolytopeTemplate;
use qlpv_core::qp::lp_membership;

fn template(kind: usize, size: usize) -> PolytopeTemplate {
    if kind == 0 {
        PolytopeTemplate::boxed(size).unwrap()
    } else {
        PolytopeTemplate::polygon(size + 2).unwrap()
    }
}

fn offsets(t: &PolytopeTemplate, scale: f64, noise: &[f64]) -> Vec<f64> {
    (0..t.num_facets()).map(|i| scale * (1.0 + 0.3 * noise[i % noise.len()])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn vertices_sit_on_their_facets(kind in 0usize..2, size in 1usize..5, scale in 0.05f64..5.0,
                                    noise in prop::collection::vec(-1.0f64..1.0, 8)) {
        let t = template(kind, size);
        let q = offsets(&t, scale, &noise);
        prop_assume!(t.check_config(&q));
        let f = t.facets();
        for (j, v) in t.vertices(&q).unwrap().iter().enumerate() {
            prop_assert!(t.contains(v, &q, 1e-9 * scale));
            for &i in &t.incidence()[j] {
                let fx: f64 = f.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
                prop_assert!((fx - q[i]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn hull_equals_polytope(kind in 0usize..2, size in 1usize..4, scale in 0.1f64..3.0,
                            noise in prop::collection::vec(-1.0f64..1.0, 8),
                            weights in prop::collection::vec(0.0f64..1.0, 16),
                            probe in prop::collection::vec(0.0f64..1.0, 4)) {
        let t = template(kind, size);
        let q = offsets(&t, scale, &noise);
        prop_assume!(t.check_config(&q));
        let verts = t.vertices(&q).unwrap();
        // hull ⊂ polytope
        let w: Vec<f64> = (0..verts.len()).map(|j| weights[j % weights.len()] + 1e-3).collect();
        let s: f64 = w.iter().sum();
        let x: Vec<f64> = (0..t.nx()).map(|r| verts.iter().zip(&w).map(|(v, l)| v[r] * l / s).sum()).collect();
        prop_assert!(t.contains(&x, &q, 1e-9 * scale));
        // polytope ⊂ hull, for a point of the bounding box that passes the facet test
        let bb = t.bounding_box(&q, 0.0).unwrap();
        let p: Vec<f64> = (0..t.nx()).map(|i| bb.center[i] + (2.0 * probe[i] - 1.0) * bb.half_width[i]).collect();
        if t.contains(&p, &q, -1e-9 * scale) {
            prop_assert!(lp_membership(&p, &verts, 1e-7).unwrap());
        } else if !t.contains(&p, &q, 1e-5 * scale) {
            prop_assert!(!lp_membership(&p, &verts, 1e-7).unwrap());
        }
    }

    #[test]
    fn vertex_maps_are_linear(kind in 0usize..2, size in 1usize..5, c in 0.1f64..10.0,
                              noise in prop::collection::vec(-1.0f64..1.0, 8)) {
        let t = template(kind, size);
        let q = offsets(&t, 1.0, &noise);
        prop_assume!(t.check_config(&q));
        let cq: Vec<f64> = q.iter().map(|v| c * v).collect();
        prop_assert!(t.check_config(&cq));
        for j in 0..t.num_vertices() {
            let (a, b) = (t.vertex(j, &q), t.vertex(j, &cq));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn inflated_box_covers_vertices(kind in 0usize..2, size in 1usize..5, zeta in 0.0f64..0.5,
                                    noise in prop::collection::vec(-1.0f64..1.0, 8)) {
        let t = template(kind, size);
        let q = offsets(&t, 1.0, &noise);
        prop_assume!(t.check_config(&q));
        let bb = t.bounding_box(&q, zeta).unwrap();
        let tight = t.bounding_box(&q, 0.0).unwrap();
        for v in t.vertices(&q).unwrap() {
            for i in 0..t.nx() {
                prop_assert!((v[i] - bb.center[i]).abs() <= bb.half_width[i] - zeta + 1e-12);
            }
        }
        for i in 0..t.nx() {
            prop_assert!((bb.half_width[i] - tight.half_width[i] - zeta).abs() < 1e-12);
            let (hi, lo) = (bb.argmax[i], bb.argmin[i]);
            prop_assert!((t.vertex(hi, &q)[i] - t.vertex(lo, &q)[i] - 2.0 * tight.half_width[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn outside_the_cone_is_refused() {
    let t = PolytopeTemplate::polygon(6).unwrap();
    let mut q = vec![1.0; 6];
    q[0] = 5.0;
    assert!(!t.check_config(&q));
    assert!(t.vertices(&q).is_err());
}
