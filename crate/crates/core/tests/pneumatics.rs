use proptest::prelude::*;

use sepm_core::pneumatics::{
    measure_settle, FlowEdge, Network, NetworkEvent, PneumaticsError, PressureNode, TimedEvent,
};
use sepm_core::profile::Profile;
use sepm_core::rig::{self, topology_network};
use sepm_core::routing::{build_tree_decoder, decode_address};
use sepm_core::valve::{Tube, Valve, ValveModel};
use sepm_core::Sign;

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
struct Closed {
    caps: Vec<f64>,
    pressures: Vec<f64>,
    links: Vec<(usize, usize, f64, f64)>,
}

prop_compose! {
    fn closed_network()(n in 2usize..7)(
        caps in prop::collection::vec(1e-12..1e-10f64, n),
        pressures in prop::collection::vec(0.0..5e5f64, n),
        extra in prop::collection::vec((0..n, 0..n, 1e-10..1e-8f64, prop_oneof![Just(0.0), 1e5..1e7f64]), 0..4),
        chain in prop::collection::vec((1e-10..1e-8f64, prop_oneof![Just(0.0), 1e5..1e7f64]), n - 1),
    ) -> Closed {
        let mut links: Vec<_> = chain.iter().enumerate().map(|(i, &(g, l))| (i, i + 1, g, l)).collect();
        links.extend(extra.into_iter().filter(|(a, b, _, _)| a != b));
        Closed { caps, pressures, links }
    }
}

fn build(c: &Closed, with_valve: bool) -> Network {
    let mut n = Network::new(1e-4);
    for (i, (&cap, &p)) in c.caps.iter().zip(&c.pressures).enumerate() {
        n.add_node(PressureNode::internal(format!("n{i}"), cap))
            .unwrap();
        n.set_pressure(&format!("n{i}"), p).unwrap();
    }
    for (k, &(a, b, g, l)) in c.links.iter().enumerate() {
        n.add_edge(
            FlowEdge::fixed(format!("e{k}"), format!("n{a}"), format!("n{b}"), g).with_inertance(l),
        )
        .unwrap();
    }
    if with_valve {
        let model =
            std::sync::Arc::new(ValveModel::from_profile(&Profile::calibrated_default()).unwrap());
        n.add_valve(Valve::new("V1", model, Sign::Neg).unwrap())
            .unwrap();
        let last = c.caps.len() - 1;
        n.add_edge(FlowEdge::valve_tube(
            "t_up",
            "n0",
            format!("n{last}"),
            "V1",
            Tube::Upper,
        ))
        .unwrap();
        n.add_edge(FlowEdge::valve_tube(
            "t_low",
            "n0",
            format!("n{last}"),
            "V1",
            Tube::Lower,
        ))
        .unwrap();
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_network_conserves_mass_per_step(c in closed_network()) {
        let mut n = build(&c, false);
        let m0 = n.stored_mass();
        let dt = 0.5 * n.stable_dt().min(1e-3);
        for _ in 0..400 {
            n.step(dt).unwrap();
            prop_assert!(relative(n.stored_mass(), m0) < 1e-9, "{} vs {m0}", n.stored_mass());
        }
    }

    #[test]
    fn closed_network_with_switching_valve_conserves_mass(mut c in closed_network()) {
        // keep the line below the valve's closing threshold
        c.pressures.iter_mut().for_each(|p| *p *= 0.5);
        let mut n = build(&c, true);
        let m0 = n.stored_mass();
        let flip = TimedEvent { time: 0.01, event: NetworkEvent::Pulse { valve: "V1".into(), polarity: Sign::Pos } };
        n.run(0.2, &[flip], 1e-3).unwrap();
        prop_assert!(relative(n.stored_mass(), m0) < 1e-9);
    }

    #[test]
    fn reversing_an_edge_negates_its_flow(p0 in 0.0..5e5f64, p1 in 0.0..5e5f64, g in 1e-10..1e-8f64, l in prop_oneof![Just(0.0), 1e5..1e7f64]) {
        let make = |forward: bool| {
            let mut n = Network::new(1e-4);
            n.add_node(PressureNode::internal("x", 1e-11)).unwrap();
            n.add_node(PressureNode::internal("y", 2e-11)).unwrap();
            n.set_pressure("x", p0).unwrap();
            n.set_pressure("y", p1).unwrap();
            let e = if forward { FlowEdge::fixed("e", "x", "y", g) } else { FlowEdge::fixed("e", "y", "x", g) };
            n.add_edge(e.with_inertance(l)).unwrap();
            n
        };
        let (mut a, mut b) = (make(true), make(false));
        let dt = 0.5 * a.stable_dt().min(1e-4);
        for _ in 0..200 {
            a.step(dt).unwrap();
            b.step(dt).unwrap();
            prop_assert_eq!(a.flows()[0], -b.flows()[0]);
            prop_assert_eq!(a.pressure("x"), b.pressure("x"));
        }
    }

    /// One supply, no vents: every internal node rises monotonically towards supply.
    #[test]
    fn chain_fills_monotonically(
        caps in prop::collection::vec(1e-12..1e-10f64, 1..6),
        gs in prop::collection::vec(1e-10..1e-8f64, 6),
        supply in 1e4..5e5f64,
    ) {
        let mut n = Network::new(1e-4);
        n.add_node(PressureNode::supply("s", supply)).unwrap();
        let mut prev = "s".to_string();
        for (i, &c) in caps.iter().enumerate() {
            let id = format!("n{i}");
            n.add_node(PressureNode::internal(&id, c)).unwrap();
            n.add_edge(FlowEdge::fixed(format!("e{i}"), &prev, &id, gs[i])).unwrap();
            prev = id;
        }
        let tau_sum: f64 = caps.iter().sum::<f64>() * gs.iter().map(|g| 1.0 / g).sum::<f64>();
        let trace = n.run((20.0 * tau_sum).min(5.0), &[], 1e-4).unwrap();
        for i in 0..caps.len() {
            let p = trace.pressure(&format!("n{i}")).unwrap();
            prop_assert!(p.windows(2).all(|w| w[1] >= w[0] && w[1] <= supply));
        }
    }
}

#[test]
fn vented_volume_follows_exponential_decay() {
    let (c, g, p0) = (1e-10, 1e-9, 2e5);
    let tau = c / g;
    let mut n = Network::new(1e-5);
    n.add_node(PressureNode::internal("x", c)).unwrap();
    n.add_node(PressureNode::vent("amb")).unwrap();
    n.add_edge(FlowEdge::fixed("e", "x", "amb", g)).unwrap();
    n.set_pressure("x", p0).unwrap();
    let trace = n.run(5.0 * tau, &[], 1e-3).unwrap();
    let p = trace.pressure("x").unwrap();
    for (&t, &v) in trace.times.iter().zip(p) {
        let exact = p0 * (-t / tau).exp();
        assert!((v - exact).abs() <= 1e-3 * p0, "t={t}: {v} vs {exact}");
    }
    let settle = measure_settle(&trace, "x", 0.0, 0.0, 0.05).unwrap();
    assert!(
        (settle - 20f64.ln() * tau).abs() <= trace.sample_interval + 1e-12,
        "{settle}"
    );
}

#[test]
fn settle_on_constant_series_is_zero_and_mid_transient_never_settles() {
    let mut n = Network::new(1e-4);
    n.add_node(PressureNode::internal("x", 1e-10)).unwrap();
    n.add_node(PressureNode::vent("amb")).unwrap();
    n.add_edge(FlowEdge::fixed("e", "x", "amb", 1e-9)).unwrap();
    let flat = n.run(0.1, &[], 1e-3).unwrap();
    assert_eq!(measure_settle(&flat, "x", 0.0, 0.0, 0.05).unwrap(), 0.0);
    n.set_pressure("x", 1e5).unwrap();
    let short = n.run(0.05, &[], 1e-3).unwrap();
    assert!(matches!(
        measure_settle(&short, "x", 0.1, 0.0, 0.01),
        Err(PneumaticsError::NeverSettles { .. })
    ));
}

#[test]
fn oversized_step_is_rejected() {
    let mut n = Network::new(1e-4);
    n.add_node(PressureNode::supply("s", 1e5)).unwrap();
    n.add_node(PressureNode::internal("x", 1e-12)).unwrap();
    n.add_edge(FlowEdge::fixed("e", "s", "x", 1e-8)).unwrap();
    let bound = n.stable_dt();
    assert!(matches!(
        n.step(2.0 * bound),
        Err(PneumaticsError::UnstableStep { .. })
    ));
    n.step(0.5 * bound).unwrap();
}

#[test]
fn closing_the_rig_valve_spikes_the_inlet() {
    let report = rig::measure_closure(&Profile::calibrated_default(), 1e-4).unwrap();
    assert!(
        report.inlet_peak > report.inlet_before + 1.0,
        "{} vs {}",
        report.inlet_peak,
        report.inlet_before
    );
    let inlet = report.trace.pressure(rig::INLET).unwrap();
    let last = *inlet.last().unwrap();
    assert!((last - Profile::calibrated_default().rig.supply_pressure).abs() < 1e3);
}

#[test]
fn trace_csv_columns_are_sorted() {
    let p = Profile::calibrated_default();
    let t = build_tree_decoder(2).unwrap();
    let states = decode_address(&t, 2)
        .unwrap()
        .0
        .iter()
        .map(|c| c.sign().unwrap_or(Sign::Neg))
        .collect::<Vec<_>>();
    let mut n = topology_network(&t, &p, 1e5, &states).unwrap();
    let trace = n.run(0.05, &[], 1e-2).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "time_s");
    let p_cols: Vec<&str> = header
        .iter()
        .copied()
        .filter(|h| h.starts_with("p_"))
        .collect();
    let q_cols: Vec<&str> = header
        .iter()
        .copied()
        .filter(|h| h.starts_with("q_"))
        .collect();
    assert_eq!(p_cols.len() + q_cols.len() + 1, header.len());
    assert!(p_cols.windows(2).all(|w| w[0] < w[1]));
    assert!(q_cols.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(text.lines().count(), trace.len() + 1);
    let into = |y: &str| -> f64 {
        trace
            .flows
            .iter()
            .filter(|(k, _)| k.ends_with(&format!("-{y}")))
            .map(|(_, v)| *v.last().unwrap())
            .sum()
    };
    assert!(into("Y2") > 0.0);
    assert_eq!(into("Y1"), 0.0);
}
