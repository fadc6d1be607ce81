//! Read-only view of the road at one instant with per-lane ordering, shared
//! by every per-vehicle computation of a step.

use crate::dynamics::{Lane, VehicleClass, VehicleId, VehicleState};

#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub t: f64,
    /// Sorted by id.
    pub vehicles: Vec<VehicleState>,
    /// Per lane slot, indices into `vehicles` sorted by position ascending.
    lanes: Vec<Vec<usize>>,
    /// Position of each vehicle within its lane ordering.
    rank: Vec<usize>,
}

impl Snapshot {
    pub fn new(t: f64, mut vehicles: Vec<VehicleState>, lane_count: usize) -> Self {
        vehicles.sort_by_key(|v| v.id);
        let mut lanes = vec![Vec::new(); lane_count];
        for (i, v) in vehicles.iter().enumerate() {
            lanes[v.lane.slot()].push(i);
        }
        for l in &mut lanes {
            l.sort_by(|&a, &b| {
                vehicles[a]
                    .position
                    .total_cmp(&vehicles[b].position)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
        let mut rank = vec![0; vehicles.len()];
        for l in &lanes {
            for (r, &i) in l.iter().enumerate() {
                rank[i] = r;
            }
        }
        Self {
            t,
            vehicles,
            lanes,
            rank,
        }
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn lane(&self, lane: Lane) -> &[usize] {
        self.lanes.get(lane.slot()).map(Vec::as_slice).unwrap_or(&[])
    }

    fn lane_rank(&self, idx: usize) -> (Lane, usize) {
        (self.vehicles[idx].lane, self.rank[idx])
    }

    /// Same-lane leader and follower of vehicle `idx`.
    pub fn own_neighbours(&self, idx: usize) -> (Option<usize>, Option<usize>) {
        let (lane, rank) = self.lane_rank(idx);
        let order = self.lane(lane);
        (
            order.get(rank + 1).copied(),
            rank.checked_sub(1).map(|r| order[r]),
        )
    }

    /// Nearest vehicle strictly ahead of `x` and nearest at or behind `x` in
    /// `lane`, skipping `exclude`.
    pub fn neighbours_at(&self, lane: Lane, x: f64, exclude: VehicleId) -> (Option<usize>, Option<usize>) {
        let order = self.lane(lane);
        let split = order.partition_point(|&j| self.vehicles[j].position <= x);
        let leader = order[split..]
            .iter()
            .copied()
            .find(|&j| self.vehicles[j].id != exclude);
        let follower = order[..split]
            .iter()
            .rev()
            .copied()
            .find(|&j| self.vehicles[j].id != exclude);
        (leader, follower)
    }

    /// Indices in `lane` with position in `[lo, hi]`.
    pub fn in_window(&self, lane: Lane, lo: f64, hi: f64) -> &[usize] {
        let order = self.lane(lane);
        let a = order.partition_point(|&j| self.vehicles[j].position < lo);
        let b = order.partition_point(|&j| self.vehicles[j].position <= hi);
        &order[a..b.max(a)]
    }

    pub fn lane_slots(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_cav(&self, idx: usize) -> bool {
        self.vehicles[idx].class == VehicleClass::Cav
    }
}

/// Bumper gap from `follower`'s front to `leader`'s rear.
pub fn gap(leader: &VehicleState, follower: &VehicleState) -> f64 {
    leader.rear() - follower.position
}
