/// Disjoint sets with union by size and path halving.
#[derive(Clone, Debug, Default)]
pub struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    sets: usize,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        let mut d = DisjointSet::default();
        d.reset(n);
        d
    }

    /// Back to `n` singletons, reusing the allocation.
    pub fn reset(&mut self, n: usize) {
        assert!(n <= u32::MAX as usize);
        self.parent.clear();
        self.parent.extend(0..n as u32);
        self.size.clear();
        self.size.resize(n, 1);
        self.sets = n;
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = self.parent[x] as usize;
        }
        x
    }

    /// Returns `true` if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
        self.sets -= 1;
        true
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn set_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r] as usize
    }

    /// Labels numbered by first appearance in vertex order.
    pub fn canonical_labels(&mut self) -> Vec<usize> {
        let n = self.len();
        let mut root_label = vec![usize::MAX; n];
        let mut labels = Vec::with_capacity(n);
        let mut next = 0;
        for x in 0..n {
            let r = self.find(x);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            labels.push(root_label[r]);
        }
        labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic() {
        let mut d = DisjointSet::new(5);
        assert!(d.union(0, 3));
        assert!(!d.union(3, 0));
        assert!(d.union(4, 3));
        assert_eq!(d.set_count(), 3);
        assert_eq!(d.canonical_labels(), vec![0, 1, 2, 0, 0]);
        assert_eq!(d.set_size(4), 3);
        d.reset(2);
        assert_eq!(d.set_count(), 2);
        assert!(!d.same(0, 1));
    }
}
