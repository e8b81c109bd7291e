//! Nested `delta^k`-nets and dyadic cube systems.
//!
//! Nets are grown greedily (farthest point first) and every level is seeded
//! with the coarser level's net, so centers are nested. Cubes are formed
//! bottom-up: each point hangs below its nearest finest-level center, and
//! every level-`k+1` center hangs below its nearest level-`k` center. A cube
//! is the set of points whose ancestor chain passes through its center, which
//! makes partition and nesting hold by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::MetricMeasureSpace;

/// Nested nets over the level range `k_min..=k_max` (`k_min` coarsest).
#[derive(Debug, Clone, PartialEq)]
pub struct NetSystem {
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    /// Net point indices per level, in insertion order.
    pub nets: Vec<Vec<usize>>,
    /// Measured separation constant: `min d(z, z') / delta^k` over all levels.
    /// `+inf` when no level has two centers.
    pub c0: f64,
    /// Measured covering constant: `max_x min_z d(x, z) / delta^k` over all levels.
    pub big_c0: f64,
    pub c0_per_level: Vec<f64>,
    pub big_c0_per_level: Vec<f64>,
    /// First level whose net contains every point, if any.
    pub saturation: Option<i32>,
}

impl NetSystem {
    pub fn levels(&self) -> impl Iterator<Item = i32> {
        self.k_min..=self.k_max
    }

    pub fn net(&self, k: i32) -> &[usize] {
        &self.nets[(k - self.k_min) as usize]
    }

    pub fn scale(&self, k: i32) -> f64 {
        self.delta.powi(k)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Greedy farthest-point nets, each level seeded with the previous one.
///
/// When `strict` is set the sufficient condition `12 A0^3 C0 delta <= c0`
/// is enforced on the measured constants.
pub fn build_nets<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    delta: f64,
    k_min: i32,
    k_max: i32,
    strict: bool,
) -> Result<NetSystem> {
    check_delta(delta)?;
    if k_max < k_min {
        return Err(Error::Parameter(format!("empty level range {k_min}..={k_max}")));
    }
    let n = space.len();
    let mut nets: Vec<Vec<usize>> = Vec::new();
    let mut c0_per_level = Vec::new();
    let mut big_c0_per_level = Vec::new();
    let mut saturation = None;
    let mut current: Vec<usize> = vec![0];
    for k in k_min..=k_max {
        let h = T::lit(delta).powi(k);
        let mut mind: Vec<T> = vec![T::infinity(); n];
        for &z in &current {
            relax(space, z, &mut mind);
        }
        loop {
            // farthest point, ties to the lowest index
            let mut best = 0usize;
            for x in 1..n {
                if mind[x] > mind[best] {
                    best = x;
                }
            }
            if n == 0 || !(mind[best] >= h) {
                break;
            }
            current.push(best);
            relax(space, best, &mut mind);
        }
        let hf = h.as_f64();
        let cover = mind.iter().fold(0.0f64, |a, d| a.max(d.as_f64())) / hf;
        let sep = (0..current.len())
            .into_par_iter()
            .map(|a| {
                let za = current[a];
                current[a + 1..]
                    .iter()
                    .map(|&zb| space.d(za, zb).as_f64())
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
            / hf;
        if saturation.is_none() && current.len() == n {
            saturation = Some(k);
        }
        c0_per_level.push(sep);
        big_c0_per_level.push(cover);
        nets.push(current.clone());
    }
    let c0 = c0_per_level.iter().copied().fold(f64::INFINITY, f64::min);
    let big_c0 = big_c0_per_level.iter().copied().fold(0.0, f64::max);
    if strict {
        let a0 = space.a0();
        let lhs = 12.0 * a0.powi(3) * big_c0 * delta;
        if lhs > c0 {
            return Err(Error::Parameter(format!(
                "strict mode: 12 A0^3 C0 delta = {lhs} exceeds c0 = {c0}"
            )));
        }
    }
    Ok(NetSystem {
        delta,
        k_min,
        k_max,
        nets,
        c0,
        big_c0,
        c0_per_level,
        big_c0_per_level,
        saturation,
    })
}

fn relax<T: Scalar>(space: &MetricMeasureSpace<T>, z: usize, mind: &mut [T]) {
    for (m, &d) in mind.iter_mut().zip(space.dist_row(z)) {
        if d < *m {
            *m = d;
        }
    }
}

/// Largest level `k` with `delta^k >= diam` (0 for a one-point space).
pub fn coarsest_level(diam: f64, delta: f64) -> i32 {
    if !(diam > 0.0) {
        return 0;
    }
    (diam.ln() / delta.ln() + 1e-12).floor() as i32
}

/// Smallest level `k` with `delta^k` below the minimal gap, where every point
/// is its own net point.
pub fn saturation_level(min_gap: f64, delta: f64) -> i32 {
    if !(min_gap > 0.0) {
        return 0;
    }
    (min_gap.ln() / delta.ln() - 1e-12).ceil() as i32
}

/// One dyadic cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: usize,
    /// Index of the containing cube one level coarser.
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Member points, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeLevel {
    pub k: i32,
    pub cubes: Vec<Cube>,
    /// Cube index of every point.
    pub assign: Vec<usize>,
}

/// How the sample point of each subcube is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    #[default]
    Center,
    LowestIndex,
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subcube {
    /// Cube index at level `k + j0`.
    pub cube: usize,
    pub center: usize,
    pub sample: usize,
}

/// Subcubes `Q_alpha^{k,m}` for every level that has `k + j0` built.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub j0: u32,
    pub sampler: Sampler,
    pub k_min: i32,
    /// `subcubes[k - k_min][alpha]` lists the subcubes of `Q_alpha^k`.
    pub subcubes: Vec<Vec<Vec<Subcube>>>,
}

impl Refinement {
    pub fn k_max(&self) -> i32 {
        self.k_min + self.subcubes.len() as i32 - 1
    }

    pub fn level(&self, k: i32) -> Option<&[Vec<Subcube>]> {
        if k < self.k_min || k > self.k_max() {
            return None;
        }
        Some(&self.subcubes[(k - self.k_min) as usize])
    }
}

/// Measured ball-sandwich radii of one level, in units of `delta^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSandwich {
    pub k: i32,
    pub cubes: usize,
    /// Every cube at this level is a singleton.
    pub saturated: bool,
    /// Smallest inradius ratio over cubes other than the whole space
    /// (`+inf` when the level has a single cube).
    pub min_inner: f64,
    /// Largest circumradius ratio.
    pub max_outer: f64,
    /// Cubes satisfying `B(z, c0 delta^k / (3 A0^2)) ⊆ Q`.
    pub nominal_inner_pass: usize,
    /// Cubes satisfying `Q ⊆ B(z, 2 A0 C0 delta^k)`.
    pub nominal_outer_pass: usize,
    /// Largest subcube count `N(k, alpha)` (0 when not refined).
    pub max_subcubes: usize,
}

/// Nested dyadic partitions of a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeSystem {
    pub nets: NetSystem,
    pub n: usize,
    pub a0: f64,
    pub levels: Vec<CubeLevel>,
    /// `Y^k`: level-`k+1` centers that are not level-`k` centers, for `k < k_max`.
    pub refpoints: Vec<Vec<usize>>,
    pub refinement: Option<Refinement>,
}

/// Builds the cube system over the net levels.
pub fn build_cubes<T: Scalar>(nets: &NetSystem, space: &MetricMeasureSpace<T>) -> Result<CubeSystem> {
    let n = space.len();
    let depth = nets.nets.len();
    if depth == 0 {
        return Err(Error::Parameter("net system has no levels".into()));
    }
    // Parents are picked top-down. Ties in distance are broken by comparing
    // the distances to the candidates' ancestors, nearest level first, then
    // by point index; always taking the lowest index would let every
    // midpoint drift to the same side and starve cubes on the other.
    let mut chains: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); nets.nets[0].len()]];
    let mut parents: Vec<Vec<usize>> = vec![Vec::new()];
    for l in 1..depth {
        let (coarse, prev) = (&nets.nets[l - 1], &chains[l - 1]);
        let par: Vec<usize> = nets.nets[l]
            .par_iter()
            .map(|&z| pick_parent(space, coarse, prev, z))
            .collect();
        let ch = par
            .iter()
            .map(|&p| {
                let mut c = Vec::with_capacity(l);
                c.push(coarse[p]);
                c.extend_from_slice(&prev[p]);
                c
            })
            .collect();
        parents.push(par);
        chains.push(ch);
    }
    let finest = &nets.nets[depth - 1];
    let mut assign: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|x| pick_parent(space, finest, &chains[depth - 1], x))
        .collect();
    let mut levels_rev: Vec<CubeLevel> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let net = &nets.nets[l];
        let mut cubes: Vec<Cube> = net
            .iter()
            .map(|&z| Cube {
                center: z,
                parent: None,
                children: Vec::new(),
                members: Vec::new(),
            })
            .collect();
        for (x, &a) in assign.iter().enumerate() {
            cubes[a].members.push(x);
        }
        if cubes.iter().any(|c| c.members.is_empty()) {
            // centers always sit in their own cube
            return Err(Error::Parameter("internal: empty cube".into()));
        }
        let next_assign = if l > 0 {
            let parent_of = &parents[l];
            for (i, c) in cubes.iter_mut().enumerate() {
                c.parent = Some(parent_of[i]);
            }
            Some(assign.iter().map(|&a| parent_of[a]).collect::<Vec<_>>())
        } else {
            None
        };
        levels_rev.push(CubeLevel {
            k: nets.k_min + l as i32,
            cubes,
            assign: assign.clone(),
        });
        if let Some(a) = next_assign {
            assign = a;
        }
    }
    levels_rev.reverse();
    let mut levels = levels_rev;
    for l in 1..depth {
        let (coarse, fine) = levels.split_at_mut(l);
        let coarse = &mut coarse[l - 1];
        for (i, c) in fine[0].cubes.iter().enumerate() {
            coarse.cubes[c.parent.unwrap()].children.push(i);
        }
    }
    let refpoints = (0..depth.saturating_sub(1))
        .map(|l| {
            let here: std::collections::BTreeSet<usize> = nets.nets[l].iter().copied().collect();
            nets.nets[l + 1]
                .iter()
                .copied()
                .filter(|z| !here.contains(z))
                .collect()
        })
        .collect();
    Ok(CubeSystem {
        nets: nets.clone(),
        n,
        a0: space.a0(),
        levels,
        refpoints,
        refinement: None,
    })
}

fn near_tie<T: Scalar>(a: T, b: T) -> bool {
    (a - b).abs() <= T::epsilon() * T::lit(8.0) * a.max(b)
}

/// Index into `net` of the center `x` hangs below.
fn pick_parent<T: Scalar>(space: &MetricMeasureSpace<T>, net: &[usize], chains: &[Vec<usize>], x: usize) -> usize {
    let dmin = net.iter().map(|&z| space.d(x, z)).fold(T::infinity(), |a, b| a.min(b));
    let mut best: Option<usize> = None;
    for (i, &z) in net.iter().enumerate() {
        if !near_tie(space.d(x, z), dmin) {
            continue;
        }
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let mut decided = false;
        for (&ai, &ab) in chains[i].iter().zip(&chains[b]) {
            let (di, db) = (space.d(x, ai), space.d(x, ab));
            if near_tie(di, db) {
                continue;
            }
            if di < db {
                best = Some(i);
            }
            decided = true;
            break;
        }
        if !decided && z < net[b] {
            best = Some(i);
        }
    }
    best.unwrap()
}

impl CubeSystem {
    pub fn k_min(&self) -> i32 {
        self.nets.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.nets.k_max
    }

    pub fn delta(&self) -> f64 {
        self.nets.delta
    }

    pub fn level(&self, k: i32) -> Option<&CubeLevel> {
        if k < self.k_min() || k > self.k_max() {
            return None;
        }
        Some(&self.levels[(k - self.k_min()) as usize])
    }

    /// `Y^k`; `None` when level `k + 1` was not built.
    pub fn refpoints(&self, k: i32) -> Option<&[usize]> {
        if k < self.k_min() || k >= self.k_max() {
            return None;
        }
        Some(&self.refpoints[(k - self.k_min()) as usize])
    }

    /// `d(x, Y^k)` for every point (`+inf` when `Y^k` is empty).
    pub fn refpoint_distance<T: Scalar>(&self, space: &MetricMeasureSpace<T>, k: i32) -> Option<Vec<T>> {
        let ys = self.refpoints(k)?;
        Some(
            (0..space.len())
                .map(|x| ys.iter().map(|&y| space.d(x, y)).fold(T::infinity(), |a, b| a.min(b)))
                .collect(),
        )
    }

    /// Mass of a cube.
    pub fn cube_mass<T: Scalar>(&self, space: &MetricMeasureSpace<T>, k: i32, alpha: usize) -> T {
        self.level(k).unwrap().cubes[alpha]
            .members
            .iter()
            .map(|&x| space.weight(x))
            .sum()
    }

    /// Refines every cube into its descendants `j0` levels down.
    pub fn refine_subcubes(mut self, j0: u32, sampler: Sampler) -> Result<Self> {
        let depth = self.levels.len() as i64;
        if j0 as i64 >= depth {
            return Err(Error::Range(format!(
                "j0 = {j0} needs at least {} built levels, have {depth}",
                j0 + 1
            )));
        }
        let mut rng = match sampler {
            Sampler::SeededRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let usable = (depth - j0 as i64) as usize;
        let mut subcubes = Vec::with_capacity(usable);
        for l in 0..usable {
            let fine = &self.levels[l + j0 as usize];
            let mut per_cube = Vec::with_capacity(self.levels[l].cubes.len());
            for alpha in 0..self.levels[l].cubes.len() {
                let mut frontier = vec![alpha];
                for step in 0..j0 as usize {
                    let lvl = &self.levels[l + step];
                    frontier = frontier
                        .iter()
                        .flat_map(|&c| lvl.cubes[c].children.iter().copied())
                        .collect();
                }
                let subs = frontier
                    .into_iter()
                    .map(|tau| {
                        let c = &fine.cubes[tau];
                        let sample = match sampler {
                            Sampler::Center => c.center,
                            Sampler::LowestIndex => c.members[0],
                            Sampler::SeededRandom { .. } => {
                                let r = rng.as_mut().unwrap();
                                c.members[r.random_range(0..c.members.len())]
                            }
                        };
                        Subcube {
                            cube: tau,
                            center: c.center,
                            sample,
                        }
                    })
                    .collect::<Vec<_>>();
                per_cube.push(subs);
            }
            subcubes.push(per_cube);
        }
        self.refinement = Some(Refinement {
            j0,
            sampler,
            k_min: self.k_min(),
            subcubes,
        });
        Ok(self)
    }

    /// Subcube mass `mu(Q_alpha^{k,m})`.
    pub fn subcube_mass<T: Scalar>(&self, space: &MetricMeasureSpace<T>, k: i32, sub: &Subcube) -> T {
        let j0 = self.refinement.as_ref().map_or(0, |r| r.j0) as i32;
        self.cube_mass(space, k + j0, sub.cube)
    }

    /// Smallest `j0` with `delta^j0 <= (2 A0)^-3 C0`.
    pub fn default_j0(&self) -> u32 {
        let target = self.nets.big_c0 / (2.0 * self.a0).powi(3);
        if !(target > 0.0) {
            return 0;
        }
        if target >= 1.0 {
            return 0;
        }
        (target.ln() / self.delta().ln()).ceil().max(0.0) as u32
    }

    pub fn to_dump(&self) -> CubeDump {
        CubeDump {
            n: self.n,
            delta: self.delta(),
            k_min: self.k_min(),
            k_max: self.k_max(),
            levels: self
                .levels
                .iter()
                .map(|lv| DumpLevel {
                    k: lv.k,
                    cubes: lv
                        .cubes
                        .iter()
                        .map(|c| DumpCube {
                            center: c.center,
                            parent: c.parent,
                            members: c.members.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Structured cube-system dump: per level the center, parent and members of every cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeDump {
    pub n: usize,
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    pub levels: Vec<DumpLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpLevel {
    pub k: i32,
    pub cubes: Vec<DumpCube>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpCube {
    pub center: usize,
    pub parent: Option<usize>,
    pub members: Vec<usize>,
}

/// Outcome of [`verify_cubes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeVerification {
    pub partition: bool,
    pub nesting: bool,
    pub center_membership: bool,
    /// Human-readable failures, each naming the level and the offending point.
    pub failures: Vec<String>,
    pub sandwich: Vec<LevelSandwich>,
}

impl CubeVerification {
    pub fn structural_pass(&self) -> bool {
        self.partition && self.nesting && self.center_membership
    }
}

/// Checks partition, nesting and center membership exactly, and measures
/// the ball-sandwich radii of every cube.
pub fn verify_cubes<T: Scalar>(cubes: &CubeSystem, space: &MetricMeasureSpace<T>) -> CubeVerification {
    let dump = cubes.to_dump();
    let assigns: Vec<&[usize]> = cubes.levels.iter().map(|l| l.assign.as_slice()).collect();
    let mut v = verify_dump_with(&dump, Some(&assigns), space.len());
    let max_sub: Vec<usize> = (0..cubes.levels.len())
        .map(|l| {
            cubes
                .refinement
                .as_ref()
                .and_then(|r| r.subcubes.get(l))
                .map_or(0, |lv| lv.iter().map(|s| s.len()).max().unwrap_or(0))
        })
        .collect();
    v.sandwich = sandwich(cubes, space, &max_sub);
    v
}

/// Structural verification of a (possibly hand-edited) dump against a space.
pub fn verify_dump<T: Scalar>(dump: &CubeDump, space: &MetricMeasureSpace<T>) -> CubeVerification {
    let mut v = verify_dump_with(dump, None, space.len());
    if v.structural_pass() {
        if let Ok(cs) = cube_system_from_dump(dump, space) {
            v.sandwich = sandwich(&cs, space, &vec![0; cs.levels.len()]);
        }
    }
    v
}

fn verify_dump_with(dump: &CubeDump, assigns: Option<&[&[usize]]>, n: usize) -> CubeVerification {
    let mut failures = Vec::new();
    let mut partition = true;
    let mut nesting = true;
    let mut center_membership = true;
    if dump.n != n {
        failures.push(format!("dump has n = {}, space has {n} points", dump.n));
        partition = false;
    }
    let mut owners: Vec<Vec<usize>> = Vec::with_capacity(dump.levels.len());
    for (l, lvl) in dump.levels.iter().enumerate() {
        let mut owner = vec![usize::MAX; n];
        for (a, c) in lvl.cubes.iter().enumerate() {
            if c.members.is_empty() {
                partition = false;
                failures.push(format!("level {}: cube {a} is empty", lvl.k));
            }
            for &x in &c.members {
                if x >= n {
                    partition = false;
                    failures.push(format!("level {}: cube {a} lists unknown point {x}", lvl.k));
                    continue;
                }
                if owner[x] != usize::MAX {
                    partition = false;
                    failures.push(format!(
                        "level {}: point {x} belongs to cubes {} and {a}",
                        lvl.k, owner[x]
                    ));
                } else {
                    owner[x] = a;
                }
            }
            if !c.members.contains(&c.center) {
                center_membership = false;
                failures.push(format!("level {}: center {} not in its cube {a}", lvl.k, c.center));
            }
        }
        for (x, &o) in owner.iter().enumerate() {
            if o == usize::MAX {
                partition = false;
                failures.push(format!("level {}: point {x} is in no cube", lvl.k));
            }
        }
        if let Some(assigns) = assigns {
            for (x, (&o, &a)) in owner.iter().zip(assigns[l]).enumerate() {
                if o != usize::MAX && o != a {
                    partition = false;
                    failures.push(format!(
                        "level {}: point {x} is assigned to cube {a} but listed in cube {o}",
                        lvl.k
                    ));
                }
            }
        }
        owners.push(owner);
    }
    for l in 1..dump.levels.len() {
        let lvl = &dump.levels[l];
        for (a, c) in lvl.cubes.iter().enumerate() {
            let Some(p) = c.parent else {
                nesting = false;
                failures.push(format!("level {}: cube {a} has no parent", lvl.k));
                continue;
            };
            for &x in c.members.iter().filter(|&&x| x < n) {
                if owners[l - 1][x] != p {
                    nesting = false;
                    failures.push(format!(
                        "level {}: point {x} of cube {a} lies outside parent cube {p}",
                        lvl.k
                    ));
                }
            }
        }
    }
    CubeVerification {
        partition,
        nesting,
        center_membership,
        failures,
        sandwich: Vec::new(),
    }
}

/// Rebuilds a [`CubeSystem`] from a structurally valid dump. Net constants are
/// re-measured from the dumped centers.
pub fn cube_system_from_dump<T: Scalar>(dump: &CubeDump, space: &MetricMeasureSpace<T>) -> Result<CubeSystem> {
    let v = verify_dump_with(dump, None, space.len());
    if !v.structural_pass() {
        return Err(Error::Format(v.failures.join("; ")));
    }
    check_delta(dump.delta)?;
    let nets_list: Vec<Vec<usize>> = dump
        .levels
        .iter()
        .map(|l| l.cubes.iter().map(|c| c.center).collect())
        .collect();
    let mut levels = Vec::with_capacity(dump.levels.len());
    for lvl in &dump.levels {
        let mut assign = vec![0; space.len()];
        let cubes: Vec<Cube> = lvl
            .cubes
            .iter()
            .enumerate()
            .map(|(a, c)| {
                for &x in &c.members {
                    assign[x] = a;
                }
                let mut members = c.members.clone();
                members.sort_unstable();
                Cube {
                    center: c.center,
                    parent: c.parent,
                    children: Vec::new(),
                    members,
                }
            })
            .collect();
        levels.push(CubeLevel { k: lvl.k, cubes, assign });
    }
    for l in 1..levels.len() {
        let (coarse, fine) = levels.split_at_mut(l);
        for (i, c) in fine[0].cubes.iter().enumerate() {
            coarse[l - 1].cubes[c.parent.unwrap()].children.push(i);
        }
    }
    let mut c0_per_level = Vec::new();
    let mut big_c0_per_level = Vec::new();
    for (l, net) in nets_list.iter().enumerate() {
        let h = dump.delta.powi(dump.k_min + l as i32);
        let mut sep = f64::INFINITY;
        for (a, &za) in net.iter().enumerate() {
            for &zb in &net[a + 1..] {
                sep = sep.min(space.d(za, zb).as_f64());
            }
        }
        let cover = (0..space.len())
            .map(|x| net.iter().map(|&z| space.d(x, z).as_f64()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        c0_per_level.push(sep / h);
        big_c0_per_level.push(cover / h);
    }
    let saturation = nets_list
        .iter()
        .position(|net| net.len() == space.len())
        .map(|l| dump.k_min + l as i32);
    let nets = NetSystem {
        delta: dump.delta,
        k_min: dump.k_min,
        k_max: dump.k_max,
        c0: c0_per_level.iter().copied().fold(f64::INFINITY, f64::min),
        big_c0: big_c0_per_level.iter().copied().fold(0.0, f64::max),
        nets: nets_list.clone(),
        c0_per_level,
        big_c0_per_level,
        saturation,
    };
    let refpoints = (0..nets_list.len().saturating_sub(1))
        .map(|l| {
            nets_list[l + 1]
                .iter()
                .copied()
                .filter(|z| !nets_list[l].contains(z))
                .collect()
        })
        .collect();
    Ok(CubeSystem {
        nets,
        n: space.len(),
        a0: space.a0(),
        levels,
        refpoints,
        refinement: None,
    })
}

fn sandwich<T: Scalar>(cubes: &CubeSystem, space: &MetricMeasureSpace<T>, max_sub: &[usize]) -> Vec<LevelSandwich> {
    let n = space.len();
    let a0 = cubes.a0;
    cubes
        .levels
        .iter()
        .enumerate()
        .map(|(l, lvl)| {
            let h = cubes.delta().powi(lvl.k);
            let inner_nominal = cubes.nets.c0 / (3.0 * a0 * a0) * h;
            let outer_nominal = 2.0 * a0 * cubes.nets.big_c0 * h;
            let per_cube: Vec<(f64, f64)> = lvl
                .cubes
                .par_iter()
                .enumerate()
                .map(|(a, c)| {
                    let (order, dists) = space.neighbors(c.center);
                    let mut r_in = f64::INFINITY;
                    for (&y, &d) in order.iter().zip(dists) {
                        if lvl.assign[y as usize] != a {
                            r_in = d.as_f64();
                            break;
                        }
                    }
                    let r_out = c
                        .members
                        .iter()
                        .map(|&y| space.d(c.center, y).as_f64())
                        .fold(0.0, f64::max);
                    (r_in, r_out)
                })
                .collect();
            let min_inner = per_cube.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) / h;
            let max_outer = per_cube.iter().map(|p| p.1).fold(0.0, f64::max) / h;
            LevelSandwich {
                k: lvl.k,
                cubes: lvl.cubes.len(),
                saturated: lvl.cubes.len() == n,
                min_inner,
                max_outer,
                nominal_inner_pass: per_cube.iter().filter(|p| inner_nominal <= p.0).count(),
                nominal_outer_pass: per_cube.iter().filter(|p| p.1 < outer_nominal).count(),
                max_subcubes: max_sub.get(l).copied().unwrap_or(0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{generate_space, Generator, Measure};

    fn grid(n: usize) -> MetricMeasureSpace<f64> {
        generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap()
    }

    #[test]
    fn level_helpers() {
        assert_eq!(coarsest_level(1.0, 0.5), 0);
        assert_eq!(coarsest_level(1.5, 0.5), -1);
        assert_eq!(coarsest_level(0.3, 0.5), 1);
        assert_eq!(saturation_level(1.0 / 256.0, 0.5), 8);
        assert_eq!(saturation_level(0.3, 0.5), 2);
    }

    #[test]
    fn rejects_bad_delta() {
        let s = grid(5);
        assert!(matches!(build_nets(&s, 1.0, 0, 2, false), Err(Error::Parameter(_))));
        assert!(matches!(build_nets(&s, 0.0, 0, 2, false), Err(Error::Parameter(_))));
        assert!(build_nets(&s, 0.5, 2, 1, false).is_err());
    }

    #[test]
    fn one_point_nets() {
        let s = grid(1);
        let nets = build_nets(&s, 0.5, -2, 3, false).unwrap();
        assert!(nets.nets.iter().all(|n| n == &vec![0]));
        assert_eq!(nets.c0, f64::INFINITY);
        assert_eq!(nets.big_c0, 0.0);
        let cubes = build_cubes(&nets, &s).unwrap();
        let v = verify_cubes(&cubes, &s);
        assert!(v.structural_pass());
    }

    #[test]
    fn grid1d_net_sizes() {
        let s = grid(257);
        let nets = build_nets(&s, 0.5, 0, 8, false).unwrap();
        for k in 0..=8 {
            let len = nets.net(k).len();
            assert!(len >= 1 << k && len <= (1 << (k + 1)) + 1, "level {k}: {len}");
        }
        assert!(nets.c0 >= 0.5);
        assert!(nets.big_c0 <= 1.0);
        assert_eq!(nets.saturation, Some(8));
    }

    #[test]
    fn saturation_when_scale_below_gap() {
        let s = grid(17);
        let nets = build_nets(&s, 0.5, 0, 7, false).unwrap();
        assert_eq!(nets.net(7).len(), 17);
    }

    #[test]
    fn strict_mode_rejects_half() {
        let s = grid(33);
        assert!(build_nets(&s, 0.5, 0, 3, true).is_err());
    }

    #[test]
    fn coarsest_single_cube_is_space() {
        let s = grid(33);
        let nets = build_nets(&s, 0.5, -1, 5, false).unwrap();
        assert_eq!(nets.net(-1).len(), 1);
        let cubes = build_cubes(&nets, &s).unwrap();
        let v = verify_cubes(&cubes, &s);
        assert_eq!(v.sandwich[0].cubes, 1);
        assert_eq!(v.sandwich[0].min_inner, f64::INFINITY);
        assert!((v.sandwich[0].max_outer * 2.0 - s.diam()).abs() < 1e-15);
    }

    #[test]
    fn grid1d_partition_nesting_inradius() {
        let s = grid(257);
        let nets = build_nets(&s, 0.5, 0, 9, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let v = verify_cubes(&cubes, &s);
        assert!(v.partition && v.nesting && v.center_membership, "{:?}", v.failures);
        // oracle: inradius recomputed by scanning all points, not the sorted lists
        for lvl in &cubes.levels {
            let h = 0.5f64.powi(lvl.k);
            for (a, c) in lvl.cubes.iter().enumerate() {
                let r_in = (0..257)
                    .filter(|&y| lvl.assign[y] != a)
                    .map(|y| s.d(c.center, y))
                    .fold(f64::INFINITY, f64::min);
                if r_in.is_finite() {
                    assert!(r_in / h >= 0.2, "level {} cube {a}: {}", lvl.k, r_in / h);
                }
            }
        }
    }

    #[test]
    fn grid2d_outer_radius() {
        let s = generate_space::<f64>(&Generator::Grid2d { side: 33 }, &Measure::Uniform).unwrap();
        let nets = build_nets(&s, 0.5, -1, 6, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let v = verify_cubes(&cubes, &s);
        assert!(v.structural_pass());
        for lv in &v.sandwich {
            assert!(lv.max_outer <= 4.0, "level {}: {}", lv.k, lv.max_outer);
        }
    }

    #[test]
    fn refinement_counts() {
        let s = grid(257);
        let nets = build_nets(&s, 0.5, 0, 9, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let c0 = cubes.clone().refine_subcubes(0, Sampler::Center).unwrap();
        for lvl in &c0.refinement.as_ref().unwrap().subcubes {
            for subs in lvl {
                assert_eq!(subs.len(), 1);
                assert_eq!(subs[0].sample, subs[0].center);
            }
        }
        let c2 = cubes.clone().refine_subcubes(2, Sampler::Center).unwrap();
        let r = c2.refinement.as_ref().unwrap();
        assert_eq!(r.k_max(), 7);
        for k in 1..=6 {
            let m = r.level(k).unwrap().iter().map(|s| s.len()).max().unwrap();
            assert!(m <= 8, "level {k}: {m}");
        }
        // union of subcubes is the cube
        for (l, lvl) in r.subcubes.iter().enumerate() {
            for (a, subs) in lvl.iter().enumerate() {
                let mut pts: Vec<usize> = subs
                    .iter()
                    .flat_map(|s| c2.levels[l + 2].cubes[s.cube].members.iter().copied())
                    .collect();
                pts.sort_unstable();
                assert_eq!(pts, c2.levels[l].cubes[a].members);
            }
        }
        assert!(matches!(cubes.refine_subcubes(10, Sampler::Center), Err(Error::Range(_))));
    }

    #[test]
    fn samplers_only_move_samples() {
        let s = grid(65);
        let nets = build_nets(&s, 0.5, 0, 7, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let a = cubes.clone().refine_subcubes(2, Sampler::Center).unwrap();
        let b = cubes.clone().refine_subcubes(2, Sampler::SeededRandom { seed: 9 }).unwrap();
        let b2 = cubes.refine_subcubes(2, Sampler::SeededRandom { seed: 9 }).unwrap();
        assert_eq!(b, b2);
        let (ra, rb) = (a.refinement.unwrap(), b.refinement.unwrap());
        let mut moved = 0;
        for (la, lb) in ra.subcubes.iter().zip(&rb.subcubes) {
            for (sa, sb) in la.iter().zip(lb) {
                assert_eq!(sa.len(), sb.len());
                for (x, y) in sa.iter().zip(sb) {
                    assert_eq!((x.cube, x.center), (y.cube, y.center));
                    moved += (x.sample != y.sample) as usize;
                }
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn planted_defect_is_named() {
        let s = grid(33);
        let nets = build_nets(&s, 0.5, 0, 5, false).unwrap();
        let mut cubes = build_cubes(&nets, &s).unwrap();
        let lvl = &mut cubes.levels[2];
        let x = lvl.cubes[1].members[0];
        let other = (lvl.assign[x] + 1) % lvl.cubes.len();
        lvl.assign[x] = other;
        let v = verify_cubes(&cubes, &s);
        assert!(!v.partition);
        assert!(v.failures.iter().any(|f| f.contains(&format!("point {x} "))));
    }

    #[test]
    fn tampered_dump_fails_nesting() {
        let s = grid(33);
        let nets = build_nets(&s, 0.5, 0, 5, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let mut dump = cubes.to_dump();
        assert!(verify_dump(&dump, &s).structural_pass());
        let lvl = &mut dump.levels[3];
        let x = lvl.cubes[0].members.pop().unwrap();
        lvl.cubes[2].members.push(x);
        let v = verify_dump(&dump, &s);
        assert!(!v.structural_pass());
        assert!(v.failures.iter().any(|f| f.contains(&format!("point {x} "))));
        let round = cube_system_from_dump(&cubes.to_dump(), &s).unwrap();
        assert_eq!(round.levels, cubes.levels);
    }

    #[test]
    fn refpoints_are_new_centers() {
        let s = grid(33);
        let nets = build_nets(&s, 0.5, 0, 5, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        for k in 0..5 {
            let ys = cubes.refpoints(k).unwrap();
            assert_eq!(ys.len(), nets.net(k + 1).len() - nets.net(k).len());
            for y in ys {
                assert!(!nets.net(k).contains(y));
            }
        }
        assert!(cubes.refpoints(5).is_none());
        let d = cubes.refpoint_distance(&s, 0).unwrap();
        assert_eq!(d[16], 0.0);
    }
}
