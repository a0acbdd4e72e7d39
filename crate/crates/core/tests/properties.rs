use std::f64::consts::TAU;
use std::sync::OnceLock;

use anisokernel::assembly::{assemble_gram, assemble_mass, assemble_mass_all_nodes, AssemblyQuadrature, GramMatrix};
use anisokernel::diagnostics::{c0delta_norm, holder_seminorm, hopf_quotient_min};
use anisokernel::geometry::{build_mesh, Domain, FeSpace};
use anisokernel::kernel::{check_structural_properties, multiplier_eval, AngularDensity, KernelSpec, MultiplierQuadrature};
use anisokernel::spectral::eigenpairs;
use anisokernel::variational::{Energy, Reaction, Sign};
use proptest::prelude::*;

const S: f64 = 0.25;

struct Fixture {
    space: FeSpace,
    gram: GramMatrix,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let space = build_mesh(&Domain::interval(-1.0, 1.0).unwrap(), 1.0 / 16.0).unwrap();
        let spec = KernelSpec::isotropic(1, S).unwrap();
        let gram = assemble_gram(&space, &spec, &AssemblyQuadrature::default()).unwrap();
        Fixture { space, gram }
    })
}

fn model() -> Reaction {
    Reaction::Model {
        r: 1.5,
        q: 3.0,
        b: 0.5,
        a1: 0.5,
        beta1: 1.0,
    }
}

fn anisotropic(s: f64, c1: f64, c2: f64) -> KernelSpec {
    let a = AngularDensity::sampled(64, true, |t| 1.0 + c1 * (2.0 * t).cos() + c2 * (4.0 * t).sin()).unwrap();
    KernelSpec::new(2, s, a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_homogeneous(s in 0.05f64..0.95, th in 0.0f64..TAU, r in 0.01f64..10.0, t in 0.1f64..10.0) {
        let spec = anisotropic(s, 0.4, 0.2);
        let y = [r * th.cos(), r * th.sin()];
        let ty = [t * y[0], t * y[1]];
        let lhs = spec.eval(&ty).unwrap();
        let rhs = t.powf(-2.0 - 2.0 * s) * spec.eval(&y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn kernel_is_even(s in 0.05f64..0.95, th in 0.0f64..TAU, r in 0.01f64..10.0) {
        let spec = anisotropic(s, 0.3, -0.1);
        let y = [r * th.cos(), r * th.sin()];
        let a = spec.eval(&y).unwrap();
        let b = spec.eval(&[-y[0], -y[1]]).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn even_positive_densities_pass_structural_checks(c1 in -0.9f64..0.9, s in 0.05f64..0.95) {
        let c2 = 0.09 * c1.signum();
        let report = check_structural_properties(&anisotropic(s, c1 * 0.9, c2));
        prop_assert!(report.all_pass());
    }

    #[test]
    fn polygon_refinement_preserves_measure(sides in 3usize..9, radius in 0.3f64..2.0) {
        let domain = Domain::regular_polygon(sides, radius).unwrap();
        let space = build_mesh(&domain, radius / 2.0).unwrap();
        let fine = space.refine().unwrap();
        let area = |sp: &FeSpace| assemble_mass_all_nodes(sp).sum();
        let exact = domain.measure();
        prop_assert!((area(&space) - exact).abs() <= 1e-12 * exact);
        prop_assert!((area(&fine) - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn boundary_distance_is_one_lipschitz(
        sides in 3usize..9,
        p in (0.0f64..1.0, 0.0f64..TAU, 0.0f64..1.0, 0.0f64..TAU),
    ) {
        let domain = Domain::regular_polygon(sides, 1.0).unwrap();
        let rin = (std::f64::consts::PI / sides as f64).cos();
        let x = [rin * p.0 * p.1.cos(), rin * p.0 * p.1.sin()];
        let y = [rin * p.2 * p.3.cos(), rin * p.2 * p.3.sin()];
        let dxy = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let diff = (domain.boundary_distance(&x) - domain.boundary_distance(&y)).abs();
        prop_assert!(diff <= dxy + 1e-12);
    }

    #[test]
    fn boundary_distance_bounds_every_ray_exit(sides in 3usize..9, r in 0.0f64..0.95, th in 0.0f64..TAU, phi in 0.0f64..TAU) {
        let domain = Domain::regular_polygon(sides, 1.0).unwrap();
        let rin = (std::f64::consts::PI / sides as f64).cos();
        let x = [rin * r * th.cos(), rin * r * th.sin()];
        let d = domain.boundary_distance(&x);
        let exit = domain.ray_exit_distance(&x, &[phi.cos(), phi.sin()]);
        prop_assert!(d <= exit + 1e-12);
    }

    #[test]
    fn truncated_energy_agrees_on_nonnegative_fields(seed in proptest::collection::vec(0.0f64..1.5, 31)) {
        let f = fixture();
        prop_assume!(seed.len() == f.space.num_dofs());
        let e = Energy::new(&f.gram, &f.space, &model(), 4).unwrap();
        let ep = e.with_reaction(&model().truncate(Sign::Plus));
        let (a, b) = (e.value(&seed), ep.value(&seed));
        prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        let neg: Vec<f64> = seed.iter().map(|v| -v).collect();
        let em = e.with_reaction(&model().truncate(Sign::Minus));
        let (c, d) = (e.value(&neg), em.value(&neg));
        prop_assert!((c - d).abs() <= 1e-13 * (1.0 + c.abs()));
    }

    #[test]
    fn model_primitive_matches_reaction(t in -3.0f64..3.0) {
        let m = model();
        let h = 1e-6;
        prop_assume!((t.abs() - 1.0).abs() > 2.0 * h && t.abs() > 2.0 * h);
        let fd = (m.big_f(t + h) - m.big_f(t - h)) / (2.0 * h);
        prop_assert!((fd - m.f(t)).abs() <= 1e-6 * (1.0 + m.f(t).abs()));
    }

    #[test]
    fn quotient_norms_are_ordered_and_homogeneous(u in proptest::collection::vec(-2.0f64..2.0, 31), lam in -5.0f64..5.0) {
        let f = fixture();
        prop_assume!(u.len() == f.space.num_dofs());
        let c0 = c0delta_norm(&f.space, &u, S);
        prop_assert!(c0 >= hopf_quotient_min(&f.space, &u, S));
        prop_assert!(c0 >= -hopf_quotient_min(&f.space, &u, S));
        let lu: Vec<f64> = u.iter().map(|v| lam * v).collect();
        let c0l = c0delta_norm(&f.space, &lu, S);
        prop_assert!((c0l - lam.abs() * c0).abs() <= 1e-12 * (1.0 + c0l));
        let hs = holder_seminorm(&f.space, &u, S).unwrap();
        let hl = holder_seminorm(&f.space, &lu, S).unwrap();
        prop_assert!((hl - lam.abs() * hs).abs() <= 1e-12 * (1.0 + hl));
    }

    #[test]
    fn holder_seminorm_grows_with_exponent(u in proptest::collection::vec(-2.0f64..2.0, 31), e in 0.05f64..0.9) {
        // node distances are at most 2, so |u_i - u_j| / d^α is monotone in α up to 2^α
        let f = fixture();
        prop_assume!(u.len() == f.space.num_dofs());
        let lo = holder_seminorm(&f.space, &u, e).unwrap();
        let hi = holder_seminorm(&f.space, &u, e + 0.1).unwrap();
        prop_assert!(hi >= lo * 2f64.powf(-0.1) - 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn multiplier_is_even_and_homogeneous(th in 0.0f64..TAU, r in 0.2f64..3.0, t in 1.5f64..4.0, s in 0.2f64..0.8) {
        let spec = anisotropic(s, 0.5, 0.0);
        let q = MultiplierQuadrature::default();
        let xi = [r * th.cos(), r * th.sin()];
        let a = multiplier_eval(&spec, &xi, &q).unwrap();
        let b = multiplier_eval(&spec, &[-xi[0], -xi[1]], &q).unwrap();
        let c = multiplier_eval(&spec, &[t * xi[0], t * xi[1]], &q).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value);
        prop_assert!((c.value - t.powf(2.0 * s) * a.value).abs() <= 1e-6 * c.value);
    }

    #[test]
    fn scaling_the_density_scales_gram_and_spectrum(k in 0.5f64..4.0) {
        let f = fixture();
        let spec = KernelSpec::isotropic(1, S).unwrap().scaled(k).unwrap();
        let g = assemble_gram(&f.space, &spec, &AssemblyQuadrature::default()).unwrap();
        let diff = (&g.matrix - k * &f.gram.matrix).amax();
        prop_assert!(diff <= 1e-12 * k * f.gram.matrix.amax());
        let mass = assemble_mass(&f.space);
        let e0 = eigenpairs(&f.gram.matrix, &mass, 3, 1e-8).unwrap();
        let e1 = eigenpairs(&g.matrix, &mass, 3, 1e-8).unwrap();
        for (a, b) in e0.values.iter().zip(&e1.values) {
            prop_assert!((b - k * a).abs() <= 1e-10 * b);
        }
    }
}

#[test]
fn far_gram_entries_are_negative() {
    let f = fixture();
    let n = f.space.num_dofs();
    for i in 0..n {
        assert_far_negative(&f.gram, i, n);
    }
}

fn assert_far_negative(g: &GramMatrix, i: usize, n: usize) {
    for j in 0..n {
        if i.abs_diff(j) >= 2 {
            assert!(g.matrix[(i, j)] < 0.0, "G[{i},{j}] = {}", g.matrix[(i, j)]);
        }
    }
}
