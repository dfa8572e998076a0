//! Channel spaces: sets of layer outputs that must share one channel index set.
//!
//! Residual adds force both operands onto the same channels, and a depthwise
//! convolution processes exactly the channels its producer emits. Every such
//! tie is merged with a union-find so a space ends up listing all gated layers
//! whose gates decide which of its channels survive.

use super::config::LayerKind;
use super::{LayerSpec, Source};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Space {
    pub width: usize,
    /// Gated layers whose own gate vectors index this space.
    pub members: Vec<usize>,
    /// Contains the network input or an ungated producer; every channel is kept.
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpaces {
    pub input_space: usize,
    /// Output space of each layer.
    pub of_layer: Vec<usize>,
    pub spaces: Vec<Space>,
}

impl ChannelSpaces {
    pub fn space_of(&self, src: Source) -> usize {
        match src {
            Source::Input => self.input_space,
            Source::Layer(i) => self.of_layer[i],
        }
    }

    /// Indices of spaces that have more than one gated member.
    pub fn shared(&self) -> impl Iterator<Item = (usize, &Space)> {
        self.spaces.iter().enumerate().filter(|(_, s)| s.members.len() > 1)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Node 0 is the network input; layer `i` is node `i + 1`.
pub(crate) fn build(layers: &[LayerSpec], input_channels: usize) -> ChannelSpaces {
    let node = |s: Source| match s {
        Source::Input => 0,
        Source::Layer(i) => i + 1,
    };
    let mut uf = UnionFind((0..=layers.len()).collect());
    for (i, l) in layers.iter().enumerate() {
        let me = i + 1;
        match l.kind {
            LayerKind::Conv | LayerKind::Linear => {}
            LayerKind::DepthwiseConv | LayerKind::Batchnorm | LayerKind::Activation | LayerKind::Avgpool => {
                uf.union(me, node(l.inputs[0]))
            }
            LayerKind::Add => {
                uf.union(me, node(l.inputs[0]));
                uf.union(me, node(l.inputs[1]));
            }
        }
    }
    let mut dense = vec![usize::MAX; layers.len() + 1];
    let mut spaces: Vec<Space> = Vec::new();
    let mut id_of = |uf: &mut UnionFind, n: usize, width: usize, spaces: &mut Vec<Space>| {
        let r = uf.find(n);
        if dense[r] == usize::MAX {
            dense[r] = spaces.len();
            spaces.push(Space {
                width,
                members: Vec::new(),
                pinned: false,
            });
        }
        dense[r]
    };
    let input_space = id_of(&mut uf, 0, input_channels, &mut spaces);
    spaces[input_space].pinned = true;
    let mut of_layer = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let s = id_of(&mut uf, i + 1, l.n_out, &mut spaces);
        of_layer.push(s);
        if l.kind.is_weighted() {
            if l.gated {
                spaces[s].members.push(i);
            } else if l.kind != LayerKind::DepthwiseConv {
                spaces[s].pinned = true;
            }
        }
    }
    ChannelSpaces {
        input_space,
        of_layer,
        spaces,
    }
}
