//! Fault-site universe, uniform sampling and exhaustive enumeration.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, CampaignError};
use crate::engine::{FaultOptions, FaultSpec, MultiBitMode};
use crate::graph::{Graph, NodeId};

/// Every eligible `(node, element)` pair, weighted uniformly per element.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteUniverse {
    /// `(node id, element count, cumulative start)`.
    nodes: Vec<(NodeId, usize, usize)>,
    total: usize,
    width: u32,
}

impl SiteUniverse {
    pub fn new(graph: &Graph, options: &FaultOptions, width: u32) -> Result<Self, CampaignError> {
        let mut nodes = Vec::new();
        let mut total = 0;
        for n in graph.nodes().iter().filter(|n| options.is_eligible(n)) {
            let len = n.num_elements();
            nodes.push((n.id, len, total));
            total += len;
        }
        if total == 0 {
            return Err(CampaignError::NoEligibleSites);
        }
        Ok(SiteUniverse { nodes, total, width })
    }

    /// Number of scalar elements that can be hit.
    pub fn elements(&self) -> usize {
        self.total
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|&(id, _, _)| id)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    fn locate(&self, flat: usize) -> (NodeId, usize) {
        let i = self.nodes.partition_point(|&(_, _, start)| start <= flat) - 1;
        let (id, _, start) = self.nodes[i];
        (id, flat - start)
    }

    /// Draws one fault uniformly over `(element, k-bit set)`; the draw depends
    /// only on `(seed, trial_index)`.
    pub fn sample(&self, seed: u64, trial_index: u64, bit_count: u32, mode: MultiBitMode) -> FaultSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial_index));
        let flat = rng.gen_range(0..self.total);
        let (target_op, element_index) = self.locate(flat);
        let mut bit_positions: Vec<u32> = index::sample(&mut rng, self.width as usize, bit_count as usize)
            .into_iter()
            .map(|b| b as u32)
            .collect();
        bit_positions.sort_unstable();
        FaultSpec {
            target_op,
            element_index,
            bit_positions,
            trial_index,
            mode,
        }
    }

    /// Number of distinct `k`-bit sites per input.
    pub fn exhaustive_size(&self, bit_count: u32) -> u64 {
        self.total as u64 * binomial(u64::from(self.width), u64::from(bit_count))
    }

    /// Every `(node, element, k-bit set)` site in a fixed order.
    pub fn enumerate(&self, bit_count: u32, mode: MultiBitMode) -> impl Iterator<Item = FaultSpec> + '_ {
        let combos = combinations(self.width, bit_count);
        self.nodes.iter().flat_map(move |&(id, len, _)| {
            let combos = combos.clone();
            (0..len).flat_map(move |e| {
                combos.clone().into_iter().map(move |bits| FaultSpec {
                    target_op: id,
                    element_index: e,
                    bit_positions: bits,
                    trial_index: 0,
                    mode,
                })
            })
        })
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All ascending `k`-subsets of `0..width`, in lexicographic order.
pub fn combinations(width: u32, k: u32) -> Vec<Vec<u32>> {
    fn rec(start: u32, width: u32, k: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() as u32 == k {
            out.push(cur.clone());
            return;
        }
        for b in start..width {
            cur.push(b);
            rec(b + 1, width, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, width, k, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, OpKind, TaskSpec, WeightTensor};

    /// Input -> FC -> FC
    fn fc_fc() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 2] }, &[]);
        let a = b.add_weighted(OpKind::FullyConnected, &[x], "a", WeightTensor::new(vec![2, 3], vec![1.0; 6]).unwrap());
        let c = b.add_weighted(OpKind::FullyConnected, &[a], "c", WeightTensor::new(vec![3, 2], vec![1.0; 6]).unwrap());
        b.finish(c, TaskSpec::classification(2)).unwrap()
    }

    #[test]
    fn excluding_last_fc_leaves_first() {
        let g = fc_fc();
        let u = SiteUniverse::new(&g, &FaultOptions::excluding_last_fc(&g), 32).unwrap();
        for t in 0..200 {
            assert_eq!(u.sample(9, t, 1, MultiBitMode::SingleValue).target_op, 1);
        }
    }

    #[test]
    fn deterministic_per_trial() {
        let g = fc_fc();
        let u = SiteUniverse::new(&g, &FaultOptions::default(), 32).unwrap();
        let a = u.sample(42, 7, 3, MultiBitMode::SingleValue);
        let b = u.sample(42, 7, 3, MultiBitMode::SingleValue);
        assert_eq!(a, b);
        assert_eq!(a.trial_index, 7);
        assert_eq!(a.bit_positions.len(), 3);
        assert!(a.bit_positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nothing_eligible() {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 2] }, &[]);
        let g = b.finish(x, TaskSpec::classification(2)).unwrap();
        assert!(matches!(
            SiteUniverse::new(&g, &FaultOptions::default(), 32),
            Err(CampaignError::NoEligibleSites)
        ));
    }

    /// Pearson chi-square against uniform over all (element, bit) cells.
    #[test]
    fn site_distribution_is_uniform() {
        let g = fc_fc();
        let u = SiteUniverse::new(&g, &FaultOptions::default(), 16).unwrap();
        let cells = u.elements() * 16; // 5 elements x 16 bits = 80 cells
        let draws = 100_000u64;
        let mut counts = vec![0u64; cells];
        for t in 0..draws {
            let f = u.sample(1234, t, 1, MultiBitMode::SingleValue);
            let flat = if f.target_op == 1 { f.element_index } else { 3 + f.element_index };
            counts[flat * 16 + f.bit_positions[0] as usize] += 1;
        }
        let expected = draws as f64 / cells as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 79 degrees of freedom; the 0.999 quantile is about 124.8
        assert!(chi2 < 124.8, "chi2 = {chi2}");
    }

    #[test]
    fn enumeration_covers_every_site_once() {
        let g = fc_fc();
        let u = SiteUniverse::new(&g, &FaultOptions::default(), 16).unwrap();
        let all: Vec<FaultSpec> = u.enumerate(2, MultiBitMode::SingleValue).collect();
        assert_eq!(all.len() as u64, u.exhaustive_size(2));
        assert_eq!(all.len(), 5 * 120);
        let unique: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        assert_eq!(binomial(32, 5), 201_376);
        assert_eq!(combinations(4, 2).len(), 6);
    }
}
