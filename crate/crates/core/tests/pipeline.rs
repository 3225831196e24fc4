//! Scene -> grid -> file -> precoder -> rate, checked end to end.

use areamimo_core::geometry::{Bounds, FrequencyPlan, Position};
use areamimo_core::gridio::{export_grid, import_grid};
use areamimo_core::metrics::sum_rate;
use areamimo_core::precoding::{effective_gains, precoder, Scheme};
use areamimo_core::scanpath::{meander_path, ScanPlane};
use areamimo_core::scene::{extract_channel_matrix, place_scatterers, synthesize_grid, ChannelGrid, Scene};

fn grid() -> ChannelGrid {
    let users: Vec<Position> = (0..4).map(|i| Position::new(0.3 * i as f64, 3.25, 1.1)).collect();
    let region = Bounds::new(Position::new(-1.0, -1.0, 0.0), Position::new(3.0, 4.5, 3.0)).unwrap();
    let sc = place_scatterers(16, region, 0.3, 9).unwrap();
    let scene = Scene::new(users, FrequencyPlan::default(), vec![], sc, 9).unwrap();
    let ext = Bounds::new(Position::new(0.0, 0.0, 1.1), Position::new(0.4, 0.2, 1.1)).unwrap();
    let path = meander_path(ext, ScanPlane::Xy, 0.01, 0.04).unwrap();
    synthesize_grid(&scene, &path, &[100, 512]).unwrap()
}

#[test]
fn stored_grid_gives_identical_rates() {
    let g = grid();
    let dir = tempfile::tempdir().unwrap();
    export_grid(&g, &dir.path().join("g")).unwrap();
    let back = import_grid(&dir.path().join("g")).unwrap();
    assert_eq!(back.coefficients(), g.coefficients());

    let antennas: Vec<usize> = (0..g.num_points()).step_by(7).take(12).collect();
    for sc in [100, 512] {
        let h0 = extract_channel_matrix(&g, &antennas, sc).unwrap();
        let h1 = extract_channel_matrix(&back, &antennas, sc).unwrap();
        for scheme in [Scheme::Mr, Scheme::Zf] {
            let r0 = sum_rate(&h0, &precoder(scheme, &h0).unwrap(), 1e-9).unwrap();
            let r1 = sum_rate(&h1, &precoder(scheme, &h1).unwrap(), 1e-9).unwrap();
            assert_eq!(r0.sum_rate, r1.sum_rate);
        }
    }
}

#[test]
fn zero_forcing_nulls_cross_terms_on_a_synthesized_channel() {
    let g = grid();
    let antennas: Vec<usize> = (0..g.num_points()).step_by(5).take(10).collect();
    let h = extract_channel_matrix(&g, &antennas, 512).unwrap();
    let gains = effective_gains(&h, &precoder(Scheme::Zf, &h).unwrap()).unwrap();
    let diag = (0..4).map(|n| gains[(n, n)].norm()).fold(0.0, f64::max);
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(gains[(i, j)].norm() < 1e-9 * diag, "{i},{j}");
            }
        }
    }
}
