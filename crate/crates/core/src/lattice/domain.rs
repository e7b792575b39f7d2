use super::field::Field;
use super::geometry::LatticeBox;

/// The finite part `{f > -inf}` of a field, with the adjacency it inherits from
/// the box. Operators on a domain use a zero condition outside it.
#[derive(Debug, Clone)]
pub struct Domain {
    lattice: LatticeBox,
    sites: Vec<usize>,
    local: Vec<Option<usize>>,
    values: Vec<f64>,
    adj_start: Vec<usize>,
    adj: Vec<usize>,
}

/// Restricts `f` to the sites where it is finite.
pub fn restrict_domain(f: &Field) -> Domain {
    let lattice = f.lattice().clone();
    let mut local = vec![None; lattice.len()];
    let mut sites = Vec::new();
    let mut values = Vec::new();
    for (i, &v) in f.values().iter().enumerate() {
        if v > f64::NEG_INFINITY {
            local[i] = Some(sites.len());
            sites.push(i);
            values.push(v);
        }
    }
    let d = lattice.dim();
    let mut adj_start = Vec::with_capacity(sites.len() + 1);
    let mut adj = Vec::with_capacity(sites.len() * 2 * d);
    adj_start.push(0);
    for &s in &sites {
        for n in lattice.neighbors(s)[..2 * d].iter().flatten() {
            if let Some(j) = local[*n] {
                adj.push(j);
            }
        }
        adj_start.push(adj.len());
    }
    Domain { lattice, sites, local, values, adj_start, adj }
}

impl Domain {
    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    /// Box indices of the domain sites, ascending.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// Finite field values on the domain.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Domain index of box site `site`.
    pub fn local_index(&self, site: usize) -> Option<usize> {
        self.local[site]
    }

    /// In-domain neighbours of domain site `i` (domain indices; repeated for
    /// degenerate periodic boxes).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[self.adj_start[i]..self.adj_start[i + 1]]
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).contains(&j)
    }

    /// `y = (κΔ + diag) x` on the domain, zero outside.
    pub fn apply_operator(&self, kappa: f64, diag: &[f64], x: &[f64], y: &mut [f64]) {
        let two_d = 2.0 * self.lattice.dim() as f64;
        for i in 0..self.len() {
            let nb: f64 = self.neighbors(i).iter().map(|&j| x[j]).sum();
            y[i] = kappa * (nb - two_d * x[i]) + diag[i] * x[i];
        }
    }

    /// `y = (κΔ + V) x` with V the restricted field values.
    pub fn apply_hamiltonian(&self, kappa: f64, x: &[f64], y: &mut [f64]) {
        self.apply_operator(kappa, &self.values, x, y)
    }

    /// Connected components, each a sorted list of domain indices; components
    /// are ordered by their smallest site.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            label[start] = id;
            while let Some(i) = stack.pop() {
                members.push(i);
                for &j in self.neighbors(i) {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    /// Sub-domain spanned by the given domain indices (sorted).
    pub fn subdomain(&self, members: &[usize]) -> Domain {
        let mut values = vec![f64::NEG_INFINITY; self.lattice.len()];
        for &i in members {
            values[self.sites[i]] = self.values[i];
        }
        let f = Field::new(self.lattice.clone(), values).expect("restricted values are finite");
        restrict_domain(&f)
    }

    /// Scatters a domain vector back to a box field, `fill` outside.
    pub fn scatter(&self, x: &[f64], fill: f64) -> Field {
        let mut values = vec![fill; self.lattice.len()];
        for (k, &s) in self.sites.iter().enumerate() {
            values[s] = x[k];
        }
        Field::new(self.lattice.clone(), values).expect("scatter of finite values")
    }

    /// Gathers a box field onto the domain.
    pub fn gather(&self, f: &Field) -> Vec<f64> {
        self.sites.iter().map(|&s| f.get(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ninf() -> f64 {
        f64::NEG_INFINITY
    }

    #[test]
    fn single_site_domain() {
        let b = LatticeBox::new(2, 2).unwrap();
        let f = Field::from_fn(b, |x| if x == [0, 0] { 0.0 } else { ninf() }).unwrap();
        let dom = restrict_domain(&f);
        assert_eq!(dom.len(), 1);
        assert_eq!(dom.sites(), &[12]);
        assert!(dom.neighbors(0).is_empty());
    }

    #[test]
    fn finite_field_keeps_whole_box() {
        let b = LatticeBox::new(2, 1).unwrap();
        let dom = restrict_domain(&Field::constant(b, -1.0));
        assert_eq!(dom.len(), 9);
        assert_eq!(dom.components().len(), 1);
    }

    #[test]
    fn two_site_cluster_keeps_adjacency() {
        let b = LatticeBox::new(1, 3).unwrap();
        let f = Field::from_fn(b, |x| if x[0] == 0 || x[0] == 1 { 0.0 } else { ninf() }).unwrap();
        let dom = restrict_domain(&f);
        assert_eq!(dom.len(), 2);
        assert!(dom.are_adjacent(0, 1));
        assert!(!dom.is_empty());
    }

    #[test]
    fn empty_domain_is_flagged() {
        let b = LatticeBox::new(1, 1).unwrap();
        let dom = restrict_domain(&Field::constant(b, ninf()));
        assert!(dom.is_empty());
    }

    #[test]
    fn components_are_ordered() {
        let b = LatticeBox::new(1, 3).unwrap();
        let f = Field::from_fn(b, |x| if x[0].abs() == 2 || x[0] == 3 { 0.0 } else { ninf() }).unwrap();
        let comps = restrict_domain(&f).components();
        assert_eq!(comps, vec![vec![0], vec![1, 2]]);
    }
}
