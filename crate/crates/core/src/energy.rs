//! Analytical energy model for splitting the pipeline between the image
//! sensor's stacked logic and the host processor.
//!
//! Units are normalized: one FLOP on a 7 nm chip costs 1, scaling with the
//! square of the process node, and moving one byte between the chips costs
//! `tx_ratio`. Costs are per steady-state frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    EvMapGen,
    EdMapGen,
    PredNet,
    SegNet,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::EvMapGen, Component::EdMapGen, Component::PredNet, Component::SegNet];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chip {
    Sensor,
    Processor,
}

pub const KIB: f64 = 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub name: Component,
    pub flops: f64,
    /// Bytes produced per frame.
    pub output_bytes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub components: Vec<ComponentCost>,
    /// Bytes of one full-resolution camera frame.
    pub frame_bytes: f64,
}

impl Default for CostTable {
    /// Per-component costs of the reference design at 640x400.
    fn default() -> Self {
        let c = |name, mflops: f64, kib: f64| ComponentCost {
            name,
            flops: mflops * 1e6,
            output_bytes: kib * KIB,
        };
        Self {
            components: vec![
                c(Component::EvMapGen, 0.3, 7.8),
                c(Component::EdMapGen, 1.9, 7.8),
                c(Component::PredNet, 55.4, 41.7),
                c(Component::SegNet, 2641.6, 62.5),
            ],
            frame_bytes: 250.0 * KIB,
        }
    }
}

impl CostTable {
    pub fn get(&self, c: Component) -> Result<&ComponentCost> {
        self.components
            .iter()
            .find(|x| x.name == c)
            .ok_or_else(|| Error::Config(format!("cost table lacks {c:?}")))
    }
}

pub type Placement = BTreeMap<Component, Chip>;

fn placement(sensor: &[Component]) -> Placement {
    Component::ALL
        .into_iter()
        .map(|c| (c, if sensor.contains(&c) { Chip::Sensor } else { Chip::Processor }))
        .collect()
}

/// Everything on the processor; the sensor ships raw frames.
pub fn mode_a() -> Placement {
    placement(&[])
}

/// The whole ROI predictor in the sensor.
pub fn mode_b() -> Placement {
    placement(&[Component::EvMapGen, Component::EdMapGen, Component::PredNet])
}

/// Event maps and ROI prediction in the sensor, edge maps on the processor.
pub fn mode_c() -> Placement {
    placement(&[Component::EvMapGen, Component::PredNet])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingScenario {
    pub placement: Placement,
    pub sensor_node: f64,
    pub processor_node: f64,
    /// ROI area as a fraction of the full frame.
    pub roi_fraction: f64,
    /// Fraction of frames served by extrapolation.
    pub extrapolated_fraction: f64,
    /// Energy per transmitted byte over energy per 7 nm FLOP.
    pub tx_ratio: f64,
}

impl MappingScenario {
    pub fn new(placement: Placement, sensor_node: f64, processor_node: f64) -> Self {
        Self {
            placement,
            sensor_node,
            processor_node,
            roi_fraction: 1.0 / 3.0,
            extrapolated_fraction: 0.5,
            tx_ratio: 800.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sensor_node > 0.0 && self.processor_node > 0.0) {
            return Err(Error::Config("process nodes must be positive".into()));
        }
        for (name, v) in [("roi_fraction", self.roi_fraction), ("extrapolated_fraction", self.extrapolated_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.tx_ratio >= 0.0) {
            return Err(Error::Config("tx_ratio must be non-negative".into()));
        }
        for c in Component::ALL {
            if !self.placement.contains_key(&c) {
                return Err(Error::Config(format!("placement does not assign {c:?}")));
            }
        }
        Ok(())
    }

    fn chip(&self, c: Component) -> Chip {
        self.placement[&c]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub sensor_compute: f64,
    pub processor_compute: f64,
    pub compute_energy: f64,
    pub bytes_to_processor: f64,
    pub bytes_to_sensor: f64,
    pub transmission_energy: f64,
    pub total: f64,
}

pub fn energy_per_flop(node_nm: f64) -> f64 {
    (node_nm / 7.0).powi(2)
}

/// Where data is produced, where it is consumed, and how many bytes move.
struct Flow {
    from: Option<Component>,
    to: Vec<Option<Component>>,
    bytes: f64,
}

/// Steady-state dataflow. `None` as a producer is the camera (always on the
/// sensor); `None` as a consumer is the gaze output (always on the
/// processor). The predictor forwards only the ROI crop of non-extrapolated
/// frames, so its transmitted volume follows the scenario's fractions.
fn flows(s: &MappingScenario, costs: &CostTable) -> Result<Vec<Flow>> {
    use Component::*;
    let roi_bytes = costs.frame_bytes * s.roi_fraction * (1.0 - s.extrapolated_fraction);
    Ok(vec![
        Flow {
            from: None,
            to: vec![Some(EvMapGen), Some(PredNet)],
            bytes: costs.frame_bytes,
        },
        Flow {
            from: Some(EvMapGen),
            to: vec![Some(PredNet)],
            bytes: costs.get(EvMapGen)?.output_bytes,
        },
        Flow {
            from: Some(EdMapGen),
            to: vec![Some(PredNet)],
            bytes: costs.get(EdMapGen)?.output_bytes,
        },
        Flow {
            from: Some(PredNet),
            to: vec![Some(SegNet)],
            bytes: roi_bytes,
        },
        Flow {
            from: Some(SegNet),
            to: vec![Some(EdMapGen), None],
            bytes: costs.get(SegNet)?.output_bytes,
        },
    ])
}

pub fn scenario_energy(s: &MappingScenario, costs: &CostTable) -> Result<EnergyBreakdown> {
    s.validate()?;
    let (mut sensor_compute, mut processor_compute) = (0.0, 0.0);
    for c in Component::ALL {
        let flops = costs.get(c)?.flops;
        match s.chip(c) {
            Chip::Sensor => sensor_compute += flops * energy_per_flop(s.sensor_node),
            Chip::Processor => processor_compute += flops * energy_per_flop(s.processor_node),
        }
    }
    let chip_of = |end: Option<Component>, producer: bool| match end {
        Some(c) => s.chip(c),
        None if producer => Chip::Sensor,
        None => Chip::Processor,
    };
    let (mut to_proc, mut to_sensor) = (0.0, 0.0);
    for f in flows(s, costs)? {
        let src = chip_of(f.from, true);
        // Each output crosses at most once per direction, however many
        // consumers sit on the far side.
        if f.to.iter().any(|&c| chip_of(c, false) != src) {
            match src {
                Chip::Sensor => to_proc += f.bytes,
                Chip::Processor => to_sensor += f.bytes,
            }
        }
    }
    let compute_energy = sensor_compute + processor_compute;
    let transmission_energy = (to_proc + to_sensor) * s.tx_ratio;
    Ok(EnergyBreakdown {
        sensor_compute,
        processor_compute,
        compute_energy,
        bytes_to_processor: to_proc,
        bytes_to_sensor: to_sensor,
        transmission_energy,
        total: compute_energy + transmission_energy,
    })
}

/// Every one of the 16 sensor/processor assignments, all-processor first.
pub fn all_placements() -> Vec<Placement> {
    (0u32..16)
        .map(|mask| {
            Component::ALL
                .into_iter()
                .enumerate()
                .map(|(i, c)| (c, if mask >> i & 1 == 1 { Chip::Sensor } else { Chip::Processor }))
                .collect()
        })
        .collect()
}

/// Exhaustive search for the cheapest placement. Ties keep the earlier
/// candidate, so the all-processor mapping wins when nothing is saved.
pub fn optimal_mapping(template: &MappingScenario, costs: &CostTable) -> Result<(MappingScenario, EnergyBreakdown)> {
    let mut best: Option<(MappingScenario, EnergyBreakdown)> = None;
    for p in all_placements() {
        let s = MappingScenario {
            placement: p,
            ..template.clone()
        };
        let e = scenario_energy(&s, costs)?;
        if best.as_ref().is_none_or(|(_, b)| e.total < b.total) {
            best = Some((s, e));
        }
    }
    Ok(best.expect("16 candidates"))
}

/// Short label of a placement: `a`, `b`, `c`, or the sensor-side set.
pub fn placement_label(p: &Placement) -> String {
    if *p == mode_a() {
        return "a".into();
    }
    if *p == mode_b() {
        return "b".into();
    }
    if *p == mode_c() {
        return "c".into();
    }
    let sensor: Vec<String> = p
        .iter()
        .filter(|(_, chip)| **chip == Chip::Sensor)
        .map(|(c, _)| format!("{c:?}"))
        .collect();
    format!("sensor[{}]", sensor.join("+"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(p: Placement, sensor: f64, proc_: f64) -> EnergyBreakdown {
        scenario_energy(&MappingScenario::new(p, sensor, proc_), &CostTable::default()).unwrap()
    }

    #[test]
    fn mode_a_ships_full_frames() {
        for node in [7.0, 16.0, 40.0] {
            let e = total(mode_a(), node, 7.0);
            assert_eq!(e.bytes_to_processor, 250.0 * KIB);
            assert_eq!(e.bytes_to_sensor, 0.0);
            assert_eq!(e.sensor_compute, 0.0);
        }
        assert_eq!(total(mode_a(), 7.0, 7.0).total, total(mode_a(), 40.0, 7.0).total);
    }

    #[test]
    fn transmitted_volumes_of_named_modes() {
        let b = total(mode_b(), 7.0, 7.0);
        let c = total(mode_c(), 7.0, 7.0);
        let roi = 250.0 * KIB / 3.0 * 0.5;
        assert!((b.bytes_to_processor - roi).abs() < 1e-9);
        assert_eq!(b.bytes_to_sensor, 62.5 * KIB);
        assert!((c.bytes_to_processor - roi).abs() < 1e-9);
        assert_eq!(c.bytes_to_sensor, 7.8 * KIB);
    }

    #[test]
    fn mode_ordering_at_equal_nodes() {
        let (a, b, c) = (total(mode_a(), 7.0, 7.0), total(mode_b(), 7.0, 7.0), total(mode_c(), 7.0, 7.0));
        assert!(c.total < b.total && b.total < a.total);
    }

    #[test]
    fn old_sensor_node_loses() {
        let a = total(mode_a(), 40.0, 7.0).total;
        assert!(total(mode_b(), 40.0, 7.0).total > a);
        assert!(total(mode_c(), 40.0, 7.0).total > a);
    }

    #[test]
    fn search_finds_mode_c() {
        let (s, _) = optimal_mapping(&MappingScenario::new(mode_a(), 7.0, 7.0), &CostTable::default()).unwrap();
        assert_eq!(s.placement, mode_c());
        assert_eq!(placement_label(&s.placement), "c");
    }

    #[test]
    fn limit_cases_pick_all_processor() {
        let mut free = MappingScenario::new(mode_a(), 7.0, 7.0);
        free.tx_ratio = 0.0;
        assert_eq!(optimal_mapping(&free, &CostTable::default()).unwrap().0.placement, mode_a());
        let huge = MappingScenario::new(mode_a(), 1e6, 7.0);
        assert_eq!(optimal_mapping(&huge, &CostTable::default()).unwrap().0.placement, mode_a());
    }

    #[test]
    fn dangling_placement_is_an_error() {
        let mut p = mode_c();
        p.remove(&Component::SegNet);
        let s = MappingScenario::new(p, 7.0, 7.0);
        assert!(scenario_energy(&s, &CostTable::default()).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_sensor_node(mask in 0usize..16, n1 in 1.0f64..100.0, n2 in 1.0f64..100.0) {
            let p = all_placements()[mask].clone();
            let (lo, hi) = (n1.min(n2), n1.max(n2));
            let e_lo = total(p.clone(), lo, 7.0);
            let e_hi = total(p, hi, 7.0);
            prop_assert!(e_hi.total >= e_lo.total);
            if mask == 0 {
                prop_assert_eq!(e_hi.total, e_lo.total);
            }
            prop_assert_eq!(e_hi.compute_energy + e_hi.transmission_energy, e_hi.total);
        }

        #[test]
        fn optimum_beats_every_placement(node in 1.0f64..60.0, roi in 0.0f64..1.0, ext in 0.0f64..1.0) {
            let mut t = MappingScenario::new(mode_a(), node, node);
            t.roi_fraction = roi;
            t.extrapolated_fraction = ext;
            let costs = CostTable::default();
            let (_, best) = optimal_mapping(&t, &costs).unwrap();
            for p in all_placements() {
                let s = MappingScenario { placement: p, ..t.clone() };
                prop_assert!(best.total <= scenario_energy(&s, &costs).unwrap().total);
            }
        }
    }
}
