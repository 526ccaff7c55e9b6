use rand::Rng;

/// Chinese restaurant process seating: a list of tables with occupancy counts.
///
/// Value-level predictive probabilities use the urn form
/// `(n_v + alpha * H({v})) / (n + alpha)`, which marginalizes over which of
/// several equal-valued tables a customer sits at.
#[derive(Debug, Clone, PartialEq)]
pub struct CrpStore<T> {
    pub tables: Vec<(T, u64)>,
    pub concentration: f64,
}

/// Outcome of a seating decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seating {
    Existing(usize),
    Fresh,
}

impl<T: Clone + PartialEq> CrpStore<T> {
    pub fn new(concentration: f64) -> Self {
        assert!(concentration > 0.0, "CRP concentration must be positive");
        CrpStore { tables: Vec::new(), concentration }
    }

    /// Total number of customers seated.
    pub fn total(&self) -> u64 {
        self.tables.iter().map(|(_, c)| c).sum()
    }

    /// Customers at tables serving `value`.
    pub fn count_of(&self, value: &T) -> u64 {
        self.tables.iter().filter(|(v, _)| v == value).map(|(_, c)| c).sum()
    }

    /// Chooses a table without modifying the store.
    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> Seating {
        let n = self.total() as f64;
        let mut u = rng.random::<f64>() * (n + self.concentration);
        for (i, (_, c)) in self.tables.iter().enumerate() {
            let c = *c as f64;
            if u < c {
                return Seating::Existing(i);
            }
            u -= c;
        }
        Seating::Fresh
    }

    pub fn seat_existing(&mut self, table: usize) -> T {
        self.tables[table].1 += 1;
        self.tables[table].0.clone()
    }

    pub fn add_table(&mut self, value: T) {
        self.tables.push((value, 1));
    }

    /// Seats one customer with `value`, joining the first table serving it
    /// or opening a new one.
    pub fn seat_value(&mut self, value: T) {
        match self.tables.iter_mut().find(|(v, _)| *v == value) {
            Some(t) => t.1 += 1,
            None => self.add_table(value),
        }
    }

    /// One CRP draw: an existing table with probability `count/(alpha+n)`,
    /// otherwise a fresh value from `base` on a new table.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, base: impl FnOnce(&mut R) -> T) -> T {
        match self.choose(rng) {
            Seating::Existing(i) => self.seat_existing(i),
            Seating::Fresh => {
                let v = base(rng);
                self.add_table(v.clone());
                v
            }
        }
    }

    /// `ln(1/(n + alpha))`, the shared denominator of every seating probability.
    pub fn log_normalizer(&self) -> f64 {
        -(self.total() as f64 + self.concentration).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_store_always_draws_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s: CrpStore<u32> = CrpStore::new(1.0);
            assert_eq!(s.choose(&mut rng), Seating::Fresh);
        }
    }

    #[test]
    fn draw_records_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = CrpStore::new(1.0);
        for i in 0..50u32 {
            s.draw(&mut rng, |_| i);
        }
        assert_eq!(s.total(), 50);
        assert!(s.tables.iter().all(|(_, c)| *c > 0));
    }

    #[test]
    fn seating_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        // concentration 1, one customer: fresh with probability 1/2
        let one = CrpStore { tables: vec![(0u32, 1)], concentration: 1.0 };
        let fresh = (0..trials).filter(|_| one.choose(&mut rng) == Seating::Fresh).count();
        assert!((fresh as f64 / trials as f64 - 0.5).abs() < 0.01);
        // tables (3, 1): old-table picks in ratio 3:1
        let two = CrpStore { tables: vec![(0u32, 3), (1, 1)], concentration: 1.0 };
        let (mut a, mut b) = (0usize, 0usize);
        for _ in 0..trials {
            match two.choose(&mut rng) {
                Seating::Existing(0) => a += 1,
                Seating::Existing(1) => b += 1,
                _ => {}
            }
        }
        let ratio = a as f64 / b as f64;
        assert!((ratio / 3.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }
}
