use thermotwin_core::plant::AmbientProfile;
use thermotwin_core::sim::simulate;
use thermotwin_core::{PeltierParams, PlantLoop, PlantTruth, Scenario, SensorModel};

#[test]
fn noise_free_plant_equals_simulation() {
    let params = PeltierParams::new(0.0612345, 2.4567891, 0.3456789, 21.234567).unwrap();
    let sc = Scenario { params, duration: 20.0, sensor: SensorModel::ideal(), ..Scenario::default() };
    let truth = PlantTruth { params, ambient_profile: AmbientProfile::constant(20.0), seed: 7 };
    let mut plant = PlantLoop::new(truth, sc.clone()).unwrap();
    while plant.step().unwrap().is_some() {}
    let expected = simulate(&sc).unwrap();
    for (a, b) in plant.run_log().samples.iter().zip(&expected.samples) {
        assert_eq!(a, b);
    }
}
