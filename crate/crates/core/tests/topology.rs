use nqi_core::constellation::{
    build_topology, place_gnbs, propagate_walker, GeoPoint, LinkKind, LinkOptions, NodeKind,
    Topology, WalkerParams,
};
use proptest::prelude::*;

const R_EARTH: f64 = 6_371_000.0;
const C: f64 = 299_792_458.0;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn ecef(lat: f64, lon: f64, alt: f64) -> [f64; 3] {
    let (lat, lon) = (lat.to_radians(), lon.to_radians());
    let r = R_EARTH + alt;
    [
        r * lat.cos() * lon.cos(),
        r * lat.cos() * lon.sin(),
        r * lat.sin(),
    ]
}

// orbital-plane point rotated by inclination about x, then by RAAN about z
fn walker_position(p: &WalkerParams, plane: usize, slot: usize) -> [f64; 3] {
    let r = R_EARTH + p.altitude_m;
    let raan = (plane as f64 * p.raan_spread_deg / p.num_planes as f64).to_radians();
    let u = (slot as f64 * 360.0 / p.sats_per_plane as f64 + plane as f64 * p.phase_offset_deg)
        .to_radians();
    let i = p.inclination_deg.to_radians();
    let (x, y) = (r * u.cos(), r * u.sin());
    let (y1, z1) = (y * i.cos(), y * i.sin());
    [
        x * raan.cos() - y1 * raan.sin(),
        x * raan.sin() + y1 * raan.cos(),
        z1,
    ]
}

fn elevation(ground: [f64; 3], sat: [f64; 3]) -> f64 {
    let los = [sat[0] - ground[0], sat[1] - ground[1], sat[2] - ground[2]];
    let g = dist(ground, [0.0; 3]);
    let s =
        (los[0] * ground[0] + los[1] * ground[1] + los[2] * ground[2]) / (dist(sat, ground) * g);
    s.asin().to_degrees()
}

fn walker() -> impl Strategy<Value = WalkerParams> {
    (
        1usize..7,
        1usize..10,
        400e3..2000e3,
        20.0..160.0,
        90.0..360.0,
        0.0..60.0,
    )
        .prop_map(
            |(
                num_planes,
                sats_per_plane,
                altitude_m,
                inclination_deg,
                raan_spread_deg,
                phase_offset_deg,
            )| WalkerParams {
                num_planes,
                sats_per_plane,
                altitude_m,
                inclination_deg,
                raan_spread_deg,
                phase_offset_deg,
                epoch_s: 0.0,
            },
        )
}

fn paper_small() -> (WalkerParams, Vec<GeoPoint>) {
    let w = WalkerParams {
        num_planes: 4,
        sats_per_plane: 6,
        altitude_m: 1_000_000.0,
        inclination_deg: 90.0,
        raan_spread_deg: 180.0,
        phase_offset_deg: 30.0,
        epoch_s: 0.0,
    };
    (
        w,
        vec![
            GeoPoint::new(35.71, 139.49, 0.0),
            GeoPoint::new(42.45, -117.62, 0.0),
        ],
    )
}

fn check_structure(t: &Topology, n_sat: usize) -> Result<(), TestCaseError> {
    for (i, n) in t.nodes.iter().enumerate() {
        prop_assert_eq!(n.id, i);
    }
    for (i, l) in t.links.iter().enumerate() {
        prop_assert_eq!(l.id, i);
        prop_assert!(l.capacity_bps > 0.0);
        let want = dist(t.nodes[l.from].position, t.nodes[l.to].position) / C;
        prop_assert!(l.latency_s > 0.0 && (l.latency_s - want).abs() <= 1e-9 * want);
        let kinds = (t.nodes[l.from].kind, t.nodes[l.to].kind);
        let expected = match l.kind {
            LinkKind::User => (NodeKind::Gnb, NodeKind::Satellite),
            LinkKind::InterSatellite => (NodeKind::Satellite, NodeKind::Satellite),
            LinkKind::Feeder => (NodeKind::Satellite, NodeKind::GroundStation),
        };
        prop_assert_eq!(kinds, expected);
    }
    let by_kind: usize = [LinkKind::User, LinkKind::InterSatellite, LinkKind::Feeder]
        .iter()
        .map(|&k| t.links_of_kind(k).count())
        .sum();
    prop_assert_eq!(by_kind, t.links.len());
    for n in 0..t.nodes.len() {
        let out: Vec<usize> = t.links_from(n).map(|l| l.id).collect();
        let inn: Vec<usize> = t.links_into(n).map(|l| l.id).collect();
        prop_assert_eq!(
            out,
            t.links
                .iter()
                .filter(|l| l.from == n)
                .map(|l| l.id)
                .collect::<Vec<_>>()
        );
        prop_assert_eq!(
            inn,
            t.links
                .iter()
                .filter(|l| l.to == n)
                .map(|l| l.id)
                .collect::<Vec<_>>()
        );
    }
    for s in 0..n_sat {
        prop_assert!(
            t.links_from(s)
                .filter(|l| l.kind == LinkKind::InterSatellite)
                .count()
                <= 4
        );
        prop_assert!(
            t.links_into(s)
                .filter(|l| l.kind == LinkKind::InterSatellite)
                .count()
                <= 4
        );
    }
    for l in t.links_of_kind(LinkKind::InterSatellite) {
        let back = t
            .links
            .iter()
            .find(|b| b.kind == LinkKind::InterSatellite && b.from == l.to && b.to == l.from);
        prop_assert!(
            back.is_some_and(|b| b.capacity_bps == l.capacity_bps && b.latency_s == l.latency_s)
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walker_positions_match_rotation(p in walker()) {
        let pos = propagate_walker(&p).unwrap();
        prop_assert_eq!(pos.len(), p.num_planes * p.sats_per_plane);
        for plane in 0..p.num_planes {
            for slot in 0..p.sats_per_plane {
                let got = pos[plane * p.sats_per_plane + slot];
                prop_assert!(dist(got, walker_position(&p, plane, slot)) < 1e-6);
                prop_assert!((dist(got, [0.0; 3]) - (R_EARTH + p.altitude_m)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn topology_invariants(
        p in walker(),
        close_seam in any::<bool>(),
        ogs in prop::collection::vec((-80.0..80.0f64, -180.0..180.0f64), 1..3),
        gnb_seed in 0u64..1000,
        mask in 0.0..30.0f64,
    ) {
        let sats = propagate_walker(&p).unwrap();
        let gnbs = place_gnbs(3, gnb_seed, &sats, mask);
        prop_assume!(gnbs.is_ok());
        let gnbs = gnbs.unwrap();
        let ogs: Vec<GeoPoint> = ogs.iter().map(|&(lat, lon)| GeoPoint::new(lat, lon, 0.0)).collect();
        let opts = LinkOptions { min_elevation_deg: mask, close_seam, ..LinkOptions::default() };
        let t = build_topology(&p, &ogs, &gnbs, &opts).unwrap();
        check_structure(&t, sats.len())?;
        prop_assert_eq!(&t, &build_topology(&p, &ogs, &gnbs, &opts).unwrap());

        for (k, site) in ogs.iter().enumerate() {
            let node = t.ground_stations()[k];
            prop_assert!(dist(t.nodes[node].position, ecef(site.latitude_deg, site.longitude_deg, 0.0)) < 1e-6);
            // a feeder exists exactly where the satellite clears the mask
            for (s, &pos) in sats.iter().enumerate() {
                let has = t.links_from(s).any(|l| l.kind == LinkKind::Feeder && l.to == node);
                let e = elevation(t.nodes[node].position, pos);
                if (e - mask).abs() > 1e-9 {
                    prop_assert_eq!(has, e > mask);
                }
            }
        }
        // user link goes to the closest satellite above the mask
        for (j, &g) in t.gnbs().iter().enumerate() {
            let ground = t.nodes[g].position;
            let best = sats
                .iter()
                .enumerate()
                .filter(|(_, &s)| elevation(ground, s) >= mask)
                .map(|(i, &s)| (i, dist(ground, s)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            let link = t.user_link(j).unwrap();
            prop_assert_eq!(link.from, g);
            prop_assert!((dist(ground, sats[link.to]) - best.1).abs() < 1e-6);
        }
    }
}

#[test]
fn paper_small_grid() {
    let (w, ogs) = paper_small();
    let sats = propagate_walker(&w).unwrap();
    let gnbs = place_gnbs(10, 1, &sats, 10.0).unwrap();
    let t = build_topology(&w, &ogs, &gnbs, &LinkOptions::default()).unwrap();
    assert_eq!(t.satellites().len(), 24);
    assert_eq!(t.ground_stations().len(), 2);
    assert_eq!(t.gnbs().len(), 10);
    // closed 4x6 grid: every satellite has four distinct neighbours
    assert_eq!(t.links_of_kind(LinkKind::InterSatellite).count(), 24 * 4);
    assert!(t.links_of_kind(LinkKind::Feeder).count() > 0);
    assert_eq!(t.links_of_kind(LinkKind::User).count(), 10);
    for k in 0..2 {
        let g = t.ground_stations()[k];
        assert!(
            t.links_into(g).count() > 0,
            "ground station {k} is not reachable"
        );
    }
}
