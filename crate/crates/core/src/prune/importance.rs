use serde::{Deserialize, Serialize};

use super::resnet::{LayerSite, ResNet};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::neuron::NeuronKind;

/// One channel of one prunable neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub neuron: NeuronId,
    pub site: LayerSite,
    pub kind: NeuronKind,
    pub phi: f64,
    pub eta_before: u64,
    pub eta_after: u64,
}

fn check_id(net: &ResNet, id: NeuronId) -> Result<()> {
    if id.layer >= net.layer_count() || id.channel >= net.neurons(id.layer).channels() {
        return Err(Error::InvalidArgument(format!("neuron {id:?} out of range")));
    }
    Ok(())
}

/// φ: mean square of the producing convolution's output-channel slice;
/// zero for pruned neurons.
pub fn importance_l2(net: &ResNet, id: NeuronId) -> Result<f64> {
    check_id(net, id)?;
    if net.neurons(id.layer).is_pruned(id.channel) {
        return Ok(0.0);
    }
    let conv = net.producing_conv(id.layer);
    let per = conv.n_in * conv.k * conv.k;
    let w = &net.params().get(conv.weight).data()[id.channel * per..(id.channel + 1) * per];
    Ok(mean_square(w))
}

pub fn mean_square(w: &[f32]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / w.len() as f64
}

/// Zero and freeze the neuron's producing conv slice and batch-norm
/// scale/shift entries, and mask its output.
pub fn prune_neuron(net: &mut ResNet, id: NeuronId) -> Result<PruneEvent> {
    check_id(net, id)?;
    if net.neurons(id.layer).is_pruned(id.channel) {
        return Err(Error::InvalidArgument(format!("neuron {id:?} is already pruned")));
    }
    let phi = importance_l2(net, id)?;
    let eta_before = net.eta();
    let conv = net.producing_conv(id.layer).clone();
    let per = conv.n_in * conv.k * conv.k;
    let (gamma, beta) = (net.op(id.layer).bn.gamma, net.op(id.layer).bn.beta);
    let store = net.params_mut();
    store.freeze_range(conv.weight, id.channel * per, per)?;
    store.freeze_range(gamma, id.channel, 1)?;
    store.freeze_range(beta, id.channel, 1)?;
    net.op_mut(id.layer).neurons.prune(id.channel)?;
    Ok(PruneEvent {
        neuron: id,
        site: net.site(id.layer),
        kind: net.neurons(id.layer).kind(id.channel),
        phi,
        eta_before,
        eta_after: net.eta(),
    })
}

/// Prune the unpruned neuron with the smallest φ; ties go to the lowest
/// layer, then the lowest channel.
pub fn prune_step(net: &mut ResNet) -> Result<PruneEvent> {
    let mut best: Option<(f64, NeuronId)> = None;
    for layer in 0..net.layer_count() {
        for channel in 0..net.neurons(layer).channels() {
            if net.neurons(layer).is_pruned(channel) {
                continue;
            }
            let id = NeuronId { layer, channel };
            let phi = importance_l2(net, id)?;
            if best.is_none_or(|(b, _)| phi < b) {
                best = Some((phi, id));
            }
        }
    }
    let (_, id) = best.ok_or_else(|| Error::Search("every neuron is already pruned".into()))?;
    prune_neuron(net, id)
}

/// Share of total φ held by each neuron kind, as (conventional, max, coincidence).
pub fn kind_fractions(entries: &[(NeuronKind, f64)]) -> Result<[f64; 3]> {
    let mut sums = [0.0f64; 3];
    for &(k, phi) in entries {
        sums[k.index()] += phi;
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Search("total importance is zero; the network is degenerate".into()));
    }
    Ok(sums.map(|s| s / total))
}

/// Per-stack φ share of each neuron kind over all prunable layers.
pub fn neural_composition(net: &ResNet) -> Result<Vec<[f64; 3]>> {
    let mut per_stack: Vec<Vec<(NeuronKind, f64)>> = vec![Vec::new(); 3];
    for layer in 0..net.layer_count() {
        let stack = net.site(layer).stack;
        for channel in 0..net.neurons(layer).channels() {
            let phi = importance_l2(net, NeuronId { layer, channel })?;
            per_stack[stack].push((net.neurons(layer).kind(channel), phi));
        }
    }
    per_stack
        .iter()
        .enumerate()
        .map(|(s, e)| kind_fractions(e).map_err(|err| Error::Search(format!("stack {s}: {err}"))))
        .collect()
}
