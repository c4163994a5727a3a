use dnnsched_core::{build_link_problem, generate_many, NodeKind, ScheduleSpace, SystemConfig};

#[test]
fn thousand_drops_satisfy_geometry_and_gain_invariants() {
    let cfg = SystemConfig::default();
    let drops = generate_many(&cfg, 314, 1000).unwrap();
    for (k, t) in drops.iter().enumerate() {
        let (n, m) = (t.n_cells(), t.users_per_cell());
        assert_eq!(t.nodes.len(), n + n * m);
        for a in 0..n {
            for b in a + 1..n {
                assert!(
                    t.nodes[a].distance_to(&t.nodes[b]) >= cfg.bs_min_sep_m,
                    "drop {k}"
                );
            }
        }
        for c in 0..n {
            let bs = &t.nodes[t.bs_node(c)];
            assert_eq!(bs.kind, NodeKind::Bs);
            // UE rings may overhang the square; base stations may not.
            assert!(bs
                .position
                .iter()
                .all(|p| (0.0..=cfg.area_side_m).contains(p)));
            for s in 0..m {
                let ue = &t.nodes[t.ue_node(c, s)];
                assert_eq!((ue.kind, ue.cell), (NodeKind::Ue, c));
                let d = ue.distance_to(bs);
                assert!(
                    (cfg.ue_min_dist_m..=cfg.ue_max_dist_m).contains(&d),
                    "drop {k}: {d}"
                );
            }
        }
        for tx in 0..t.nodes.len() {
            for rx in 0..t.nodes.len() {
                let g = t.gain(tx, rx);
                if tx == rx {
                    assert_eq!(g, 0.0);
                } else {
                    assert!(g > 0.0 && g < 1.0, "drop {k} gain {tx}->{rx} = {g}");
                }
            }
        }
        assert_eq!(t.weights.len(), 2 * n * m);
        assert!(t.weights.iter().all(|w| (0.0..1.0).contains(w)));
    }
}

#[test]
fn every_schedule_builds_a_valid_problem() {
    let cfg = SystemConfig::with_cells(3, 2);
    for t in generate_many(&cfg, 9, 20).unwrap() {
        let space = ScheduleSpace::for_topology(&t).unwrap();
        assert_eq!(space.len(), 64);
        for s in space.iter() {
            let p = build_link_problem(&t, &s).unwrap();
            p.validate().unwrap();
            assert_eq!(p.n_links, 3);
        }
    }
}

#[test]
fn json_round_trip_is_exact() {
    let t = generate_many(&SystemConfig::default(), 2, 1)
        .unwrap()
        .remove(0);
    let back = dnnsched_core::Topology::from_json(&t.to_json().unwrap()).unwrap();
    assert_eq!(back, t);
}
