use micam::counterfactual::{counterfactual_run, perturb, selected_pixels, weight_divergence, PerturbPolicy};
use micam::{fixtures, ColorSpace, Image, Method, ModelHandle};

fn toy() -> ModelHandle {
    ModelHandle::from_file(fixtures::toy_classifier()).unwrap()
}

#[test]
fn identity_perturbation_moves_nothing() {
    let m = toy();
    let (img, _) = fixtures::synthetic_scene(4, 32, 32);
    for policy in [
        PerturbPolicy::OccludeTopSalient { fraction: 0.0, fill: 0 },
        PerturbPolicy::ConstantFill { fraction: 0.0, fill: 128, seed: 3 },
    ] {
        let run = counterfactual_run(&m, &img, "conv2", &policy, &Method::ALL, 256).unwrap();
        assert_eq!(run.perturbed, run.original);
        assert_eq!(run.methods.len(), 3);
        for d in &run.methods {
            assert_eq!(d.report.l1, 0.0, "{}", d.method);
            assert_eq!(d.report.linf, 0.0);
        }
    }
}

#[test]
fn salient_occlusion_moves_mi_weights() {
    let m = toy();
    let (img, _) = fixtures::synthetic_scene(0, 32, 32);
    let run = counterfactual_run(&m, &img, "conv2", &PerturbPolicy::default(), &[Method::MiCam], 256).unwrap();
    let d = &run.methods[0];
    assert!(d.report.l1 > 0.0);
    assert_eq!(d.report.deltas.len(), 6);
    let changed = run.original.data().chunks(3).zip(run.perturbed.data().chunks(3)).filter(|(a, b)| a != b).count();
    assert!(changed <= 512);
    assert_eq!(run.class, m.forward(&img).unwrap().argmax());
}

#[test]
fn runs_are_deterministic() {
    let m = toy();
    let (img, _) = fixtures::synthetic_scene(7, 32, 32);
    let policy = PerturbPolicy::equal_area_patch(32, 32, 0.5, 0, 11);
    let a = counterfactual_run(&m, &img, "conv2", &policy, &Method::ALL, 256).unwrap();
    let b = counterfactual_run(&m, &img, "conv2", &policy, &Method::ALL, 256).unwrap();
    assert_eq!(a.perturbed, b.perturbed);
    for (x, y) in a.methods.iter().zip(&b.methods) {
        assert_eq!(x.report, y.report);
    }
    let mut csv = Vec::new();
    a.methods[0].write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("channel,alpha_original,alpha_counterfactual,abs_delta\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn equal_area_patch_covers_the_fraction() {
    for (w, h, f) in [(32, 32, 0.5), (20, 10, 0.3), (7, 5, 0.9), (4, 4, 0.01)] {
        let p = PerturbPolicy::equal_area_patch(w, h, f, 0, 1);
        let PerturbPolicy::RandomPatch { width, height, .. } = p else { panic!() };
        let want = (f * (w * h) as f64).ceil() as usize;
        assert!(width * height >= want.max(1), "{w}x{h} {f}: {width}x{height}");
        assert_eq!(selected_pixels(w, h, None, &p).unwrap().len(), width * height);
    }
}

#[test]
fn bad_policies_are_rejected() {
    let img = Image::filled(4, 4, ColorSpace::Gray, 9).unwrap();
    assert!(perturb(&img, None, &PerturbPolicy::ConstantFill { fraction: 1.5, fill: 0, seed: 0 }).is_err());
    assert!(perturb(&img, None, &PerturbPolicy::RandomPatch { width: 5, height: 1, fill: 0, seed: 0 }).is_err());
    assert!(perturb(&img, None, &PerturbPolicy::default()).is_err());
    let a = micam::WeightVector::new(Method::EigenCam, vec![1.0, 2.0]).unwrap();
    let b = micam::WeightVector::new(Method::EigenCam, vec![1.0]).unwrap();
    assert!(weight_divergence(&a, &b).is_err());
}
