use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LinkId, NetworkGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Low,
    High,
}

/// Noisy threshold reading of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkReading {
    pub link: LinkId,
    pub symbol: Symbol,
    pub threshold: f64,
}

/// One step's observation: noisy fidelity readings for the probed links and
/// the exact classical state of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u64,
    pub readings: Vec<LinkReading>,
    pub occupancy: Vec<u32>,
    pub alive: Vec<bool>,
    pub ages: Vec<u64>,
}

/// Read the links in `probed`, each against the threshold chosen by
/// `threshold`. Each symbol is flipped independently with probability
/// `g_flip`. Dead links are skipped.
pub fn observe<R: Rng + ?Sized>(
    g: &NetworkGraph,
    probed: &[LinkId],
    threshold: impl Fn(LinkId) -> f64,
    g_flip: f64,
    rng: &mut R,
) -> Result<Observation> {
    if !(0.0..0.5).contains(&g_flip) {
        return Err(Error::InvalidParam(format!(
            "flip probability must lie in [0, 0.5), got {g_flip}"
        )));
    }
    let mut readings = Vec::with_capacity(probed.len());
    for &link in probed {
        let l = g.link(link)?;
        if !l.state.alive {
            continue;
        }
        let t = threshold(link);
        let high = l.state.fidelity >= t;
        let flip = g_flip > 0.0 && rng.random::<f64>() < g_flip;
        readings.push(LinkReading {
            link,
            symbol: if high != flip { Symbol::High } else { Symbol::Low },
            threshold: t,
        });
    }
    Ok(Observation {
        step: g.time,
        readings,
        occupancy: g.nodes.iter().map(|n| n.occupancy()).collect(),
        alive: g.links.iter().map(|l| l.state.alive).collect(),
        ages: g.links.iter().map(|l| l.state.age).collect(),
    })
}
