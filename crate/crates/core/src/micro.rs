//! Finite-population validation path.
//!
//! Samples an explicit population of men and women with their shock draws,
//! solves the individual-level optimal assignment exactly, and aggregates to
//! type-level matching frequencies for comparison against the continuum
//! equilibrium.
//!
//! The assignment is a maximum-weight bipartite matching with free
//! unmatched options, solved by successive shortest augmenting paths on a
//! min-cost-flow network. Separability keeps the search graph tiny: the pair
//! weight is `phi_{xy} + a_{iy} + b_{jx}` with agent-specific terms only on
//! the agent's own arc, so individuals within one (type, assigned-duty)
//! class are interchangeable and every residual arc class is represented by
//! its best member. Nodes are the |X||Y| cells plus source and sink, arc
//! costs come from lazy heaps over class members, and each augmentation
//! matches one more pair. Augmentation stops when no profitable path
//! remains, which is exactly the all-optional-matching optimum.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::heterogeneity::{HeterogeneitySpec, ShockKind, Side};
use crate::market::{Matching, SurplusMatrix, ValidatedMarket};
use crate::rng;

/// One sampled individual: own type plus the realized shock vector over the
/// opposite-side types, with the singles shock in slot 0.
#[derive(Debug, Clone)]
pub struct MicroAgent {
    pub type_idx: usize,
    pub shocks: Vec<f64>,
}

/// A finite population with explicit heterogeneity draws.
#[derive(Debug, Clone)]
pub struct SampledPopulation {
    pub men: Vec<MicroAgent>,
    pub women: Vec<MicroAgent>,
    pub seed: u64,
    pub scale: f64,
    pub num_x: usize,
    pub num_y: usize,
    pub counts_men: Vec<usize>,
    pub counts_women: Vec<usize>,
}

/// Draw a population of `round(n_x * scale)` men per type (and likewise
/// women), with i.i.d. shock vectors from the logit specification.
///
/// Draws are keyed by (seed, side, type, agent, choice) through a
/// counter-based stream: enlarging the population preserves the draws of
/// incumbent agents, and repeated calls with one seed are identical.
pub fn sample_population(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    scale: f64,
    seed: u64,
) -> Result<SampledPopulation> {
    let scale_of = |spec: &HeterogeneitySpec| -> Result<f64> {
        match spec.kind {
            ShockKind::ExtremeValueLogit { scale } => Ok(scale),
            _ => Err(Error::UnsupportedDistribution),
        }
    };
    let theta_men = scale_of(het_men)?;
    let theta_women = scale_of(het_women)?;
    sample_population_with(market, scale, seed, |side, type_idx, agent, choices| {
        let theta = match side {
            Side::Men => theta_men,
            Side::Women => theta_women,
        };
        (0..=choices)
            .map(|c| {
                theta * rng::gumbel(&[seed, side.tag(), type_idx as u64, agent as u64, c as u64])
            })
            .collect()
    })
}

/// Draw a population using a caller-supplied sampler. The sampler receives
/// (side, type index, agent index, number of non-single choices) and must
/// return a shock vector of length choices + 1 with the singles shock first.
pub fn sample_population_with<F>(
    market: &ValidatedMarket,
    scale: f64,
    seed: u64,
    mut sampler: F,
) -> Result<SampledPopulation>
where
    F: FnMut(Side, usize, usize, usize) -> Vec<f64>,
{
    if scale < 1.0 || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scale must be at least 1, got {scale}"
        )));
    }
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut counts_men = Vec::with_capacity(nx);
    for x in 0..nx {
        let count = (market.n()[x] * scale).round() as usize;
        if count == 0 {
            return Err(Error::InvalidParameter(format!(
                "type x{x} rounds to zero agents at scale {scale}"
            )));
        }
        counts_men.push(count);
    }
    let mut counts_women = Vec::with_capacity(ny);
    for y in 0..ny {
        let count = (market.m()[y] * scale).round() as usize;
        if count == 0 {
            return Err(Error::InvalidParameter(format!(
                "type y{y} rounds to zero agents at scale {scale}"
            )));
        }
        counts_women.push(count);
    }
    let mut men = Vec::with_capacity(counts_men.iter().sum());
    for (x, &count) in counts_men.iter().enumerate() {
        for agent in 0..count {
            let shocks = sampler(Side::Men, x, agent, ny);
            debug_assert_eq!(shocks.len(), ny + 1);
            men.push(MicroAgent {
                type_idx: x,
                shocks,
            });
        }
    }
    let mut women = Vec::with_capacity(counts_women.iter().sum());
    for (y, &count) in counts_women.iter().enumerate() {
        for agent in 0..count {
            let shocks = sampler(Side::Women, y, agent, nx);
            debug_assert_eq!(shocks.len(), nx + 1);
            women.push(MicroAgent {
                type_idx: y,
                shocks,
            });
        }
    }
    Ok(SampledPopulation {
        men,
        women,
        seed,
        scale,
        num_x: nx,
        num_y: ny,
        counts_men,
        counts_women,
    })
}

/// An exact optimal assignment of a sampled population, with the supporting
/// payoff split (the linear-programming duals).
#[derive(Debug, Clone)]
pub struct AssignmentResult {
    pub matched_pairs: Vec<(usize, usize)>,
    pub single_men: Vec<usize>,
    pub single_women: Vec<usize>,
    /// Sum of matched pair surpluses plus singles' outside shocks.
    pub total_surplus: f64,
    /// Equilibrium payoff of each man net of the singles option.
    pub payoffs_men: Vec<f64>,
    /// Equilibrium payoff of each woman net of the singles option.
    pub payoffs_women: Vec<f64>,
}

/// Heap entry ordered by key with the agent index as a deterministic
/// tie-break. Wrapped in `Reverse` where a minimum is needed.
#[derive(PartialEq)]
struct Entry {
    key: f64,
    agent: usize,
}

impl Entry {
    fn new(key: f64, agent: usize) -> Self {
        Self { key, agent }
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.agent.cmp(&other.agent))
    }
}

const NO_DUTY: usize = usize::MAX;
const PATH_GAIN_FLOOR: f64 = 1e-12;

/// How an augmenting-path arc changes the assignment, pinned to the specific
/// individual whose value priced the arc.
#[derive(Debug, Clone, Copy)]
enum Action {
    /// A free man takes duty y.
    EnterMan { man: usize, to_y: usize },
    /// A man switches duty (his woman is inherited within the cell).
    MoveMan { man: usize, to_y: usize },
    /// A woman switches duty.
    MoveWoman { woman: usize, to_x: usize },
    /// A free woman takes duty x.
    TakeWoman { woman: usize, to_x: usize },
}

#[derive(Debug, Clone, Copy)]
struct QuotientArc {
    from: usize,
    to: usize,
    cost: f64,
    action: Option<Action>,
}

struct AssignmentSolver<'a> {
    population: &'a SampledPopulation,
    phi: &'a nalgebra::DMatrix<f64>,
    nx: usize,
    ny: usize,
    /// Net gain of each man for each y relative to staying single.
    gain_men: Vec<Vec<f64>>,
    gain_women: Vec<Vec<f64>>,
    duty_men: Vec<usize>,
    duty_women: Vec<usize>,
    /// Free men of type x keyed by gain for y: heaps[x][y].
    free_men: Vec<Vec<BinaryHeap<Entry>>>,
    free_women: Vec<Vec<BinaryHeap<Entry>>>,
    /// Men of type x on duty y, keyed by gain[y] - gain[y']: [x][y][y'].
    exch_men: Vec<Vec<Vec<BinaryHeap<Reverse<Entry>>>>>,
    exch_women: Vec<Vec<Vec<BinaryHeap<Reverse<Entry>>>>>,
    /// Men of type x on duty y keyed by gain[y], for the un-route arcs of
    /// the dual-certificate pass: [x][y].
    unroute_men: Vec<Vec<BinaryHeap<Reverse<Entry>>>>,
    unroute_women: Vec<Vec<BinaryHeap<Reverse<Entry>>>>,
    men_by_type: Vec<Vec<usize>>,
    women_by_type: Vec<Vec<usize>>,
}

impl<'a> AssignmentSolver<'a> {
    fn new(population: &'a SampledPopulation, phi: &'a nalgebra::DMatrix<f64>) -> Self {
        let (nx, ny) = (population.num_x, population.num_y);
        let gain_men: Vec<Vec<f64>> = population
            .men
            .iter()
            .map(|a| (0..ny).map(|y| a.shocks[1 + y] - a.shocks[0]).collect())
            .collect();
        let gain_women: Vec<Vec<f64>> = population
            .women
            .iter()
            .map(|a| (0..nx).map(|x| a.shocks[1 + x] - a.shocks[0]).collect())
            .collect();
        let mut men_by_type = vec![Vec::new(); nx];
        for (i, a) in population.men.iter().enumerate() {
            men_by_type[a.type_idx].push(i);
        }
        let mut women_by_type = vec![Vec::new(); ny];
        for (j, a) in population.women.iter().enumerate() {
            women_by_type[a.type_idx].push(j);
        }
        let mut solver = Self {
            population,
            phi,
            nx,
            ny,
            duty_men: vec![NO_DUTY; gain_men.len()],
            duty_women: vec![NO_DUTY; gain_women.len()],
            free_men: (0..nx)
                .map(|_| (0..ny).map(|_| BinaryHeap::new()).collect())
                .collect(),
            free_women: (0..ny)
                .map(|_| (0..nx).map(|_| BinaryHeap::new()).collect())
                .collect(),
            exch_men: (0..nx)
                .map(|_| {
                    (0..ny)
                        .map(|_| (0..ny).map(|_| BinaryHeap::new()).collect())
                        .collect()
                })
                .collect(),
            exch_women: (0..ny)
                .map(|_| {
                    (0..nx)
                        .map(|_| (0..nx).map(|_| BinaryHeap::new()).collect())
                        .collect()
                })
                .collect(),
            unroute_men: (0..nx)
                .map(|_| (0..ny).map(|_| BinaryHeap::new()).collect())
                .collect(),
            unroute_women: (0..ny)
                .map(|_| (0..nx).map(|_| BinaryHeap::new()).collect())
                .collect(),
            gain_men,
            gain_women,
            men_by_type,
            women_by_type,
        };
        for i in 0..solver.gain_men.len() {
            solver.push_man(i);
        }
        for j in 0..solver.gain_women.len() {
            solver.push_woman(j);
        }
        solver
    }

    fn push_man(&mut self, i: usize) {
        let x = self.population.men[i].type_idx;
        match self.duty_men[i] {
            NO_DUTY => {
                for y in 0..self.ny {
                    self.free_men[x][y].push(Entry::new(self.gain_men[i][y], i));
                }
            }
            y => {
                for yp in 0..self.ny {
                    if yp != y {
                        self.exch_men[x][y][yp].push(Reverse(Entry::new(
                            self.gain_men[i][y] - self.gain_men[i][yp],
                            i,
                        )));
                    }
                }
                self.unroute_men[x][y].push(Reverse(Entry::new(self.gain_men[i][y], i)));
            }
        }
    }

    fn push_woman(&mut self, j: usize) {
        let y = self.population.women[j].type_idx;
        match self.duty_women[j] {
            NO_DUTY => {
                for x in 0..self.nx {
                    self.free_women[y][x].push(Entry::new(self.gain_women[j][x], j));
                }
            }
            x => {
                for xp in 0..self.nx {
                    if xp != x {
                        self.exch_women[y][x][xp].push(Reverse(Entry::new(
                            self.gain_women[j][x] - self.gain_women[j][xp],
                            j,
                        )));
                    }
                }
                self.unroute_women[y][x].push(Reverse(Entry::new(self.gain_women[j][x], j)));
            }
        }
    }

    /// Best current member of a lazy heap, dropping stale entries.
    fn peek_free_man(&mut self, x: usize, y: usize) -> Option<usize> {
        while let Some(top) = self.free_men[x][y].peek() {
            if self.duty_men[top.agent] == NO_DUTY {
                return Some(top.agent);
            }
            self.free_men[x][y].pop();
        }
        None
    }

    fn peek_free_woman(&mut self, y: usize, x: usize) -> Option<usize> {
        while let Some(top) = self.free_women[y][x].peek() {
            if self.duty_women[top.agent] == NO_DUTY {
                return Some(top.agent);
            }
            self.free_women[y][x].pop();
        }
        None
    }

    fn peek_exch_man(&mut self, x: usize, y: usize, yp: usize) -> Option<usize> {
        while let Some(Reverse(top)) = self.exch_men[x][y][yp].peek() {
            if self.duty_men[top.agent] == y {
                return Some(top.agent);
            }
            self.exch_men[x][y][yp].pop();
        }
        None
    }

    fn peek_exch_woman(&mut self, y: usize, x: usize, xp: usize) -> Option<usize> {
        while let Some(Reverse(top)) = self.exch_women[y][x][xp].peek() {
            if self.duty_women[top.agent] == x {
                return Some(top.agent);
            }
            self.exch_women[y][x][xp].pop();
        }
        None
    }

    fn peek_unroute_man(&mut self, x: usize, y: usize) -> Option<usize> {
        while let Some(Reverse(top)) = self.unroute_men[x][y].peek() {
            if self.duty_men[top.agent] == y {
                return Some(top.agent);
            }
            self.unroute_men[x][y].pop();
        }
        None
    }

    fn peek_unroute_woman(&mut self, y: usize, x: usize) -> Option<usize> {
        while let Some(Reverse(top)) = self.unroute_women[y][x].peek() {
            if self.duty_women[top.agent] == x {
                return Some(top.agent);
            }
            self.unroute_women[y][x].pop();
        }
        None
    }

    fn cell(&self, x: usize, y: usize) -> usize {
        x * self.ny + y
    }

    /// Residual arcs usable inside an s -> t augmenting path. A token at a
    /// cell is one extra man needing a woman of that cell's y type; the
    /// source injects a free man, exchanges move the token between cells,
    /// and the sink absorbs it with a free woman.
    fn path_arcs(&mut self) -> Vec<QuotientArc> {
        let (nx, ny) = (self.nx, self.ny);
        let s = nx * ny;
        let t = nx * ny + 1;
        let mut arcs = Vec::new();
        for x in 0..nx {
            for y in 0..ny {
                let z = self.cell(x, y);
                if let Some(i) = self.peek_free_man(x, y) {
                    arcs.push(QuotientArc {
                        from: s,
                        to: z,
                        cost: -self.gain_men[i][y],
                        action: Some(Action::EnterMan { man: i, to_y: y }),
                    });
                }
                if let Some(j) = self.peek_free_woman(y, x) {
                    arcs.push(QuotientArc {
                        from: z,
                        to: t,
                        cost: -(self.gain_women[j][x] + self.phi[(x, y)]),
                        action: Some(Action::TakeWoman { woman: j, to_x: x }),
                    });
                }
                for yp in 0..ny {
                    if yp != y {
                        if let Some(i) = self.peek_exch_man(x, y, yp) {
                            arcs.push(QuotientArc {
                                from: z,
                                to: self.cell(x, yp),
                                cost: self.gain_men[i][y] - self.gain_men[i][yp],
                                action: Some(Action::MoveMan { man: i, to_y: yp }),
                            });
                        }
                    }
                }
                // A woman of y on duty xp re-duties to x, freeing her man:
                // the token moves from (x, y) to (xp, y).
                for xp in 0..nx {
                    if xp != x {
                        if let Some(j) = self.peek_exch_woman(y, xp, x) {
                            arcs.push(QuotientArc {
                                from: z,
                                to: self.cell(xp, y),
                                cost: (self.gain_women[j][xp] + self.phi[(xp, y)])
                                    - (self.gain_women[j][x] + self.phi[(x, y)]),
                                action: Some(Action::MoveWoman { woman: j, to_x: x }),
                            });
                        }
                    }
                }
            }
        }
        arcs
    }

    /// Bellman-Ford shortest path over the quotient arcs. The residual graph
    /// of an optimal flow has no negative cycles, so distances are finite.
    fn shortest_path(
        arcs: &[QuotientArc],
        nodes: usize,
        s: usize,
        t: usize,
    ) -> Option<(f64, Vec<usize>)> {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut parent = vec![usize::MAX; nodes];
        dist[s] = 0.0;
        for _ in 0..nodes {
            let mut improved = false;
            for (idx, arc) in arcs.iter().enumerate() {
                if dist[arc.from].is_finite() && dist[arc.from] + arc.cost < dist[arc.to] {
                    dist[arc.to] = dist[arc.from] + arc.cost;
                    parent[arc.to] = idx;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if !dist[t].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut node = t;
        while node != s {
            let idx = parent[node];
            path.push(idx);
            node = arcs[idx].from;
        }
        path.reverse();
        Some((dist[t], path))
    }

    fn run(&mut self) {
        let (s, t) = (self.nx * self.ny, self.nx * self.ny + 1);
        loop {
            let arcs = self.path_arcs();
            let Some((gain, path)) = Self::shortest_path(&arcs, t + 1, s, t) else {
                break;
            };
            if gain >= -PATH_GAIN_FLOOR {
                break;
            }
            for idx in path {
                self.apply(arcs[idx].action.expect("path arcs carry actions"));
            }
        }
    }

    fn apply(&mut self, action: Action) {
        match action {
            Action::EnterMan { man, to_y } | Action::MoveMan { man, to_y } => {
                self.duty_men[man] = to_y;
                self.push_man(man);
            }
            Action::TakeWoman { woman, to_x } | Action::MoveWoman { woman, to_x } => {
                self.duty_women[woman] = to_x;
                self.push_woman(woman);
            }
        }
    }

    /// Feasible node potentials on the full residual graph (including the
    /// un-route arcs), pinned to zero at source and sink. Their existence is
    /// the optimality certificate; the implied agent payoffs are the duals.
    fn potentials(&mut self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let s = nx * ny;
        let t = nx * ny + 1;
        let mut arcs = self.path_arcs();
        for x in 0..nx {
            for y in 0..ny {
                let z = self.cell(x, y);
                if let Some(i) = self.peek_unroute_man(x, y) {
                    arcs.push(QuotientArc {
                        from: z,
                        to: s,
                        cost: self.gain_men[i][y],
                        action: None,
                    });
                }
                if let Some(j) = self.peek_unroute_woman(y, x) {
                    arcs.push(QuotientArc {
                        from: t,
                        to: z,
                        cost: self.gain_women[j][x] + self.phi[(x, y)],
                        action: None,
                    });
                }
            }
        }
        let nodes = t + 1;
        let mut pi = vec![f64::INFINITY; nodes];
        pi[s] = 0.0;
        pi[t] = 0.0;
        for _ in 0..nodes {
            let mut improved = false;
            for arc in &arcs {
                if pi[arc.from].is_finite() && pi[arc.from] + arc.cost < pi[arc.to] {
                    pi[arc.to] = pi[arc.from] + arc.cost;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        pi
    }

    fn into_result(mut self) -> AssignmentResult {
        let pi = self.potentials();
        let phi = self.phi;
        let mut payoffs_men = vec![0.0; self.gain_men.len()];
        for (i, &duty) in self.duty_men.iter().enumerate() {
            if duty != NO_DUTY {
                let x = self.population.men[i].type_idx;
                payoffs_men[i] = self.gain_men[i][duty] + pi[x * self.ny + duty];
            }
        }
        let mut payoffs_women = vec![0.0; self.gain_women.len()];
        for (j, &duty) in self.duty_women.iter().enumerate() {
            if duty != NO_DUTY {
                let y = self.population.women[j].type_idx;
                payoffs_women[j] =
                    self.gain_women[j][duty] + phi[(duty, y)] - pi[duty * self.ny + y];
            }
        }

        // Pair off men and women within each cell; the pairing inside a cell
        // is payoff-irrelevant under separability.
        let mut men_in_cell: Vec<Vec<usize>> = vec![Vec::new(); self.nx * self.ny];
        let mut single_men = Vec::new();
        for x in 0..self.nx {
            for &i in &self.men_by_type[x] {
                match self.duty_men[i] {
                    NO_DUTY => single_men.push(i),
                    y => men_in_cell[self.cell(x, y)].push(i),
                }
            }
        }
        let mut women_in_cell: Vec<Vec<usize>> = vec![Vec::new(); self.nx * self.ny];
        let mut single_women = Vec::new();
        for y in 0..self.ny {
            for &j in &self.women_by_type[y] {
                match self.duty_women[j] {
                    NO_DUTY => single_women.push(j),
                    x => women_in_cell[self.cell(x, y)].push(j),
                }
            }
        }
        let mut matched_pairs = Vec::new();
        let mut total_surplus = 0.0;
        for z in 0..self.nx * self.ny {
            let (x, y) = (z / self.ny, z % self.ny);
            debug_assert_eq!(men_in_cell[z].len(), women_in_cell[z].len());
            for (&i, &j) in men_in_cell[z].iter().zip(&women_in_cell[z]) {
                total_surplus += phi[(x, y)]
                    + self.population.men[i].shocks[1 + y]
                    + self.population.women[j].shocks[1 + x];
                matched_pairs.push((i, j));
            }
        }
        for &i in &single_men {
            total_surplus += self.population.men[i].shocks[0];
        }
        for &j in &single_women {
            total_surplus += self.population.women[j].shocks[0];
        }
        single_men.sort_unstable();
        single_women.sort_unstable();
        AssignmentResult {
            matched_pairs,
            single_men,
            single_women,
            total_surplus,
            payoffs_men,
            payoffs_women,
        }
    }
}

/// Solve the individual-level assignment exactly: maximize the sum of
/// matched pair surpluses plus the singles' outside shocks, with every agent
/// free to remain unmatched.
pub fn solve_assignment(
    population: &SampledPopulation,
    phi: &SurplusMatrix,
) -> Result<AssignmentResult> {
    if phi.phi().nrows() != population.num_x || phi.phi().ncols() != population.num_y {
        return Err(Error::DimensionMismatch {
            context: "surplus matrix vs population types",
            expected: population.num_x * population.num_y,
            got: phi.phi().nrows() * phi.phi().ncols(),
        });
    }
    let mut solver = AssignmentSolver::new(population, phi.phi());
    solver.run();
    Ok(solver.into_result())
}

/// Empirical matching frequencies: pair and single counts divided by the
/// sampling scale. Margins equal realized counts over scale exactly.
pub fn aggregate(population: &SampledPopulation, assignment: &AssignmentResult) -> Matching {
    let (nx, ny) = (population.num_x, population.num_y);
    let mut mu = nalgebra::DMatrix::zeros(nx, ny);
    for &(i, j) in &assignment.matched_pairs {
        let x = population.men[i].type_idx;
        let y = population.women[j].type_idx;
        mu[(x, y)] += 1.0;
    }
    let mut mu_x0 = nalgebra::DVector::zeros(nx);
    for &i in &assignment.single_men {
        mu_x0[population.men[i].type_idx] += 1.0;
    }
    let mut mu_0y = nalgebra::DVector::zeros(ny);
    for &j in &assignment.single_women {
        mu_0y[population.women[j].type_idx] += 1.0;
    }
    Matching::new(
        mu / population.scale,
        mu_x0 / population.scale,
        mu_0y / population.scale,
    )
}

/// Reference implementation by exhaustive enumeration over all partial
/// matchings; exponential, for validating [`solve_assignment`] on small
/// instances.
pub fn enumerate_optimal(population: &SampledPopulation, phi: &SurplusMatrix) -> f64 {
    let phi = phi.phi();
    let base: f64 = population.men.iter().map(|a| a.shocks[0]).sum::<f64>()
        + population.women.iter().map(|a| a.shocks[0]).sum::<f64>();
    let nm = population.men.len();
    let nw = population.women.len();
    let mut used = vec![false; nw];
    fn recurse(
        i: usize,
        nm: usize,
        used: &mut [bool],
        population: &SampledPopulation,
        phi: &nalgebra::DMatrix<f64>,
        acc: f64,
        best: &mut f64,
    ) {
        if i == nm {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        // Man i stays single.
        recurse(i + 1, nm, used, population, phi, acc, best);
        let man = &population.men[i];
        for j in 0..used.len() {
            if used[j] {
                continue;
            }
            let woman = &population.women[j];
            let (x, y) = (man.type_idx, woman.type_idx);
            let gain = phi[(x, y)] + man.shocks[1 + y] - man.shocks[0] + woman.shocks[1 + x]
                - woman.shocks[0];
            used[j] = true;
            recurse(i + 1, nm, used, population, phi, acc + gain, best);
            used[j] = false;
        }
    }
    let mut best = 0.0;
    recurse(0, nm, &mut used, population, phi, 0.0, &mut best);
    base + best
}

/// Worst dual-feasibility violation of the assignment's payoff split:
/// `max_ij (pair surplus gain - p_i - q_j)` together with the worst negative
/// payoff. Both near zero certify that no blocking pair exists.
pub fn stability_residual(
    population: &SampledPopulation,
    phi: &SurplusMatrix,
    assignment: &AssignmentResult,
) -> f64 {
    let phi = phi.phi();
    let mut worst = 0.0f64;
    for (i, man) in population.men.iter().enumerate() {
        for (j, woman) in population.women.iter().enumerate() {
            let (x, y) = (man.type_idx, woman.type_idx);
            let gain = phi[(x, y)] + man.shocks[1 + y] - man.shocks[0] + woman.shocks[1 + x]
                - woman.shocks[0];
            worst = worst.max(gain - assignment.payoffs_men[i] - assignment.payoffs_women[j]);
        }
    }
    for &p in assignment
        .payoffs_men
        .iter()
        .chain(assignment.payoffs_women.iter())
    {
        worst = worst.max(-p);
    }
    worst
}
