use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seeding::rng_for;
use crate::error::{Error, Result};

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;

/// Object bounding box in a `width x height` image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && 0.0 <= self.x_tl
            && self.x_tl <= self.x_br
            && self.x_br <= self.width
            && 0.0 <= self.y_tl
            && self.y_tl <= self.y_br
            && self.y_br <= self.height
    }

    /// `[x_tl/W, y_tl/H, x_br/W, y_br/H, w·h/(W·H)]`.
    pub fn position_vector(&self) -> [f64; 5] {
        let (w, h) = (self.x_br - self.x_tl, self.y_br - self.y_tl);
        [
            self.x_tl / self.width,
            self.y_tl / self.height,
            self.x_br / self.width,
            self.y_br / self.height,
            (w * h) / (self.width * self.height),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    /// Unique within its environment.
    pub id: usize,
    pub class: usize,
    pub bbox: BBox,
    /// Absolute heading of the view containing the object.
    pub heading: f64,
    pub elevation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: [f64; 3],
    pub landmark: usize,
    #[serde(default)]
    pub objects: Vec<ObjectInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_nodes: usize,
    pub avg_degree: f64,
    /// Side of the square the viewpoints are scattered over, in meters.
    pub extent_m: f64,
    pub n_landmarks: usize,
    pub objects_per_node: usize,
    pub n_object_classes: usize,
    /// Minimum distance between any two viewpoints.
    pub min_separation_m: f64,
    /// Give viewpoints a height so candidate elevations are non-zero.
    pub vertical: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            avg_degree: 3.0,
            extent_m: 18.0,
            n_landmarks: 24,
            objects_per_node: 2,
            n_object_classes: 4,
            min_separation_m: 3.2,
            vertical: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EnvironmentRecord {
    seed: u64,
    nodes: Vec<Viewpoint>,
    edges: Vec<(usize, usize)>,
}

/// Immutable navigation graph with precomputed geodesic distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentRecord", into = "EnvironmentRecord")]
pub struct Environment {
    seed: u64,
    nodes: Vec<Viewpoint>,
    /// Sorted `(a, b)` with `a < b`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    /// Row-major all-pairs geodesic distances in meters.
    dist: Vec<f64>,
}

impl TryFrom<EnvironmentRecord> for Environment {
    type Error = Error;

    fn try_from(r: EnvironmentRecord) -> Result<Self> {
        Self::from_parts(r.seed, r.nodes, r.edges)
    }
}

impl From<Environment> for EnvironmentRecord {
    fn from(e: Environment) -> Self {
        Self {
            seed: e.seed,
            nodes: e.nodes,
            edges: e.edges,
        }
    }
}

impl Environment {
    /// Build from explicit viewpoints and edges; checks connectivity and boxes.
    pub fn from_parts(
        seed: u64,
        nodes: Vec<Viewpoint>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return Err(Error::Contract(format!(
                "environment needs >= 2 nodes, got {n}"
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut norm_edges = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Format(format!("invalid edge ({a}, {b})")));
            }
            let (a, b) = (a.min(b), a.max(b));
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
                norm_edges.push((a, b));
            }
        }
        norm_edges.sort_unstable();
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        for v in &nodes {
            if let Some(o) = v.objects.iter().find(|o| !o.bbox.is_valid()) {
                return Err(Error::Format(format!(
                    "object {} has a box outside the image",
                    o.id
                )));
            }
        }
        let mut env = Self {
            seed,
            nodes,
            edges: norm_edges,
            adjacency,
            dist: Vec::new(),
        };
        env.dist = env.all_pairs();
        if env.dist.iter().any(|d| d.is_infinite()) {
            return Err(Error::Contract("environment graph is not connected".into()));
        }
        Ok(env)
    }

    fn all_pairs(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut d = vec![f64::INFINITY; n * n];
        for i in 0..n {
            d[i * n + i] = 0.0;
        }
        for &(a, b) in &self.edges {
            let l = self.euclidean(a, b);
            d[a * n + b] = l;
            d[b * n + a] = l;
        }
        for k in 0..n {
            for i in 0..n {
                let dik = d[i * n + k];
                if dik.is_infinite() {
                    continue;
                }
                for j in 0..n {
                    let cand = dik + d[k * n + j];
                    if cand < d[i * n + j] {
                        d[i * n + j] = cand;
                    }
                }
            }
        }
        d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &Viewpoint {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Viewpoint] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors in ascending id order.
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.nodes.len() as f64
    }

    pub fn euclidean(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a].position, self.nodes[b].position);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }

    /// Edge length; `None` if `a` and `b` are not adjacent.
    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .binary_search(&b)
            .ok()
            .map(|_| self.euclidean(a, b))
    }

    /// Shortest-path graph distance in meters.
    pub fn geodesic(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.nodes.len() + b]
    }

    /// Next hop on a shortest path from `from` to `goal`, lowest id on ties;
    /// `None` when already at the goal.
    pub fn next_hop(&self, from: usize, goal: usize) -> Option<usize> {
        if from == goal {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for &v in self.neighbors(from) {
            let cost = self.euclidean(from, v) + self.geodesic(v, goal);
            if best.is_none_or(|(_, c)| cost < c - 1e-9) {
                best = Some((v, cost));
            }
        }
        best.map(|(v, _)| v)
    }

    /// The shortest path traced by [`Environment::next_hop`].
    pub fn shortest_path(&self, from: usize, goal: usize) -> Vec<usize> {
        let mut path = vec![from];
        let mut cur = from;
        while let Some(next) = self.next_hop(cur, goal) {
            path.push(next);
            cur = next;
        }
        path
    }

    pub fn hop_diameter(&self) -> usize {
        let n = self.nodes.len();
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .map(|(a, b)| self.shortest_path(a, b).len() - 1)
            .max()
            .unwrap_or(0)
    }

    /// Nodes whose object list contains the given instance.
    pub fn object_location(&self, object_id: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|v| v.objects.iter().any(|o| o.id == object_id))
    }
}

fn union_find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Random geometric graph over scattered viewpoints, repaired to be connected.
///
/// Edges are the shortest `round(avg_degree · n / 2)` viewpoint pairs; any
/// remaining components are joined with their shortest bridging pairs.
pub fn generate_environment(seed: u64, cfg: &GenConfig) -> Result<Environment> {
    let n = cfg.n_nodes;
    if n < 2 {
        return Err(Error::Contract(format!("n_nodes must be >= 2, got {n}")));
    }
    let tree_degree = 2.0 * (n - 1) as f64 / n as f64;
    if cfg.avg_degree + 1e-9 < tree_degree || cfg.avg_degree > (n - 1) as f64 {
        return Err(Error::Config(format!(
            "avg_degree {} infeasible for {n} nodes (connected needs >= {tree_degree:.3}, max {})",
            cfg.avg_degree,
            n - 1
        )));
    }
    if cfg.n_landmarks == 0 {
        return Err(Error::Config("n_landmarks must be positive".into()));
    }
    if cfg.objects_per_node > 0 && cfg.n_object_classes == 0 {
        return Err(Error::Config(
            "objects need at least one object class".into(),
        ));
    }

    let mut rng = rng_for(&[seed, 1]);
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while positions.len() < n {
        attempts += 1;
        if attempts > 20_000 * n {
            return Err(Error::Config(format!(
                "cannot place {n} viewpoints {}m apart in a {}m square",
                cfg.min_separation_m, cfg.extent_m
            )));
        }
        let z = if cfg.vertical {
            rng.random_range(-1.5..1.5)
        } else {
            0.0
        };
        let p = [
            rng.random_range(0.0..cfg.extent_m),
            rng.random_range(0.0..cfg.extent_m),
            z,
        ];
        let ok = positions.iter().all(|q| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                >= cfg.min_separation_m
        });
        if ok {
            positions.push(p);
        }
    }

    let dist = |a: usize, b: usize| {
        let (p, q) = (positions[a], positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .collect();
    pairs.sort_by(|&(a, b), &(c, d)| dist(a, b).total_cmp(&dist(c, d)).then((a, b).cmp(&(c, d))));

    let target = ((cfg.avg_degree * n as f64) / 2.0).round() as usize;
    let mut edges: Vec<(usize, usize)> = pairs.iter().take(target).copied().collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in &edges {
        let (ra, rb) = (
            union_find_root(&mut parent, a),
            union_find_root(&mut parent, b),
        );
        parent[ra] = rb;
    }
    for &(a, b) in pairs.iter().skip(target) {
        let (ra, rb) = (
            union_find_root(&mut parent, a),
            union_find_root(&mut parent, b),
        );
        if ra != rb {
            parent[ra] = rb;
            edges.push((a, b));
        }
    }

    let mut next_object = 0;
    let nodes = positions
        .into_iter()
        .map(|position| {
            let landmark = rng.random_range(0..cfg.n_landmarks);
            let objects = (0..cfg.objects_per_node)
                .map(|_| {
                    let (w, h) = (IMAGE_WIDTH, IMAGE_HEIGHT);
                    let x0 = rng.random_range(0.0..w * 0.8);
                    let y0 = rng.random_range(0.0..h * 0.8);
                    let x1 = rng.random_range(x0 + 1.0..=w);
                    let y1 = rng.random_range(y0 + 1.0..=h);
                    let obj = ObjectInstance {
                        id: next_object,
                        class: rng.random_range(0..cfg.n_object_classes),
                        bbox: BBox {
                            x_tl: x0,
                            y_tl: y0,
                            x_br: x1,
                            y_br: y1,
                            width: w,
                            height: h,
                        },
                        heading: rng.random_range(0.0..std::f64::consts::TAU),
                        elevation: 0.0,
                    };
                    next_object += 1;
                    obj
                })
                .collect();
            Viewpoint {
                position,
                landmark,
                objects,
            }
        })
        .collect();

    Environment::from_parts(seed, nodes, edges)
}
