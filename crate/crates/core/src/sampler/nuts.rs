//! No-U-turn sampler with multinomial trajectory sampling and a diagonal
//! Euclidean metric.

use rand::Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

/// Small inline vector whose clone is a plain copy.
#[derive(Debug, PartialEq)]
pub(crate) struct Vector(SmallVec<[f64; 8]>);

impl Vector {
    pub(crate) fn from_elem(v: f64, n: usize) -> Self {
        Self(SmallVec::from_elem(v, n))
    }

    pub(crate) fn from_slice(v: &[f64]) -> Self {
        Self(SmallVec::from_slice(v))
    }
}

impl Clone for Vector {
    fn clone(&self) -> Self {
        Self::from_slice(&self.0)
    }

    fn clone_from(&mut self, source: &Self) {
        if self.0.len() == source.0.len() {
            self.0.copy_from_slice(&source.0);
        } else {
            *self = source.clone();
        }
    }
}

impl std::ops::Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl<'a> IntoIterator for &'a Vector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

const MAX_DELTA_H: f64 = 1000.0;

/// Log density with gradient in unconstrained coordinates.
pub(crate) trait Target {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug)]
pub(crate) struct PhasePoint {
    pub q: Vector,
    pub p: Vector,
    pub grad: Vector,
    pub log_p: f64,
}

impl Clone for PhasePoint {
    fn clone(&self) -> Self {
        Self {
            q: self.q.clone(),
            p: self.p.clone(),
            grad: self.grad.clone(),
            log_p: self.log_p,
        }
    }

    fn clone_from(&mut self, source: &Self) {
        self.q.clone_from(&source.q);
        self.p.clone_from(&source.p);
        self.grad.clone_from(&source.grad);
        self.log_p = source.log_p;
    }
}

impl PhasePoint {
    pub(crate) fn new<T: Target>(target: &T, q: &[f64]) -> Self {
        let d = target.dim();
        let mut grad: Vector = Vector::from_elem(0.0, d);
        let log_p = target.log_density_grad(q, &mut grad);
        Self {
            q: Vector::from_slice(q),
            p: Vector::from_elem(0.0, d),
            grad,
            log_p,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub divergent: bool,
    pub n_leapfrog: usize,
}

pub(crate) struct Nuts<'a, T: Target> {
    target: &'a T,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
    z: PhasePoint,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_assign(a: &mut Vector, b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn sum(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

impl<'a, T: Target> Nuts<'a, T> {
    pub(crate) fn new(target: &'a T, start: PhasePoint) -> Self {
        let d = target.dim();
        Self {
            target,
            inv_metric: vec![1.0; d],
            step_size: 1.0,
            max_depth: 10,
            z: start,
            divergent: false,
        }
    }

    pub(crate) fn position(&self) -> &[f64] {
        &self.z.q
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        let h = -z.log_p + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vector {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (p, m) in self.z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&mut self, eps: f64) {
        let z = &mut self.z;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.log_p = self.target.log_density_grad(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    /// Stan's step-size heuristic: double or halve until the one-step
    /// acceptance crosses 0.8.
    pub(crate) fn init_step_size<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if !(self.step_size > 0.0 && self.step_size <= 1e7) {
            return;
        }
        let start = self.z.clone();
        let one_step = |s: &mut Self, rng: &mut R| {
            s.z.clone_from(&start);
            s.sample_momentum(rng);
            let h0 = s.hamiltonian(&s.z);
            s.leapfrog(s.step_size);
            h0 - s.hamiltonian(&s.z)
        };
        let delta = one_step(self, rng);
        let up = delta > 0.8f64.ln();
        for _ in 0..200 {
            let delta = one_step(self, rng);
            if up && !(delta > 0.8f64.ln()) || !up && !(delta < 0.8f64.ln()) {
                break;
            }
            self.step_size *= if up { 2.0 } else { 0.5 };
            if self.step_size > 1e7 || self.step_size < 1e-12 {
                break;
            }
        }
        self.z = start;
    }

    pub(crate) fn transition<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TransitionInfo {
        self.sample_momentum(rng);
        self.divergent = false;
        let h0 = self.hamiltonian(&self.z);

        let mut z_fwd = self.z.clone();
        let mut z_bck = self.z.clone();
        let mut z_sample = self.z.clone();
        let mut z_propose = self.z.clone();

        let p0 = self.z.p.clone();
        let ps0 = self.p_sharp(&p0);
        let (mut p_fwd_fwd, mut ps_fwd_fwd) = (p0.clone(), ps0.clone());
        let (mut p_fwd_bck, mut ps_fwd_bck) = (p0.clone(), ps0.clone());
        let (mut p_bck_fwd, mut ps_bck_fwd) = (p0.clone(), ps0.clone());
        let (mut p_bck_bck, mut ps_bck_bck) = (p0.clone(), ps0);

        let mut rho = p0;
        let mut log_sum_weight = 0.0;
        let mut n_leapfrog = 0;
        let mut sum_metro = 0.0;
        let mut depth = 0;
        let zero: Vector = Vector::from_elem(0.0, rho.len());

        while depth < self.max_depth {
            let mut rho_fwd = zero.clone();
            let mut rho_bck = zero.clone();
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                self.z.clone_from(&z_fwd);
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_fwd);
                ps_bck_fwd.clone_from(&ps_fwd_fwd);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut ps_fwd_bck,
                    &mut ps_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    rng,
                );
                z_fwd.clone_from(&self.z);
                v
            } else {
                self.z.clone_from(&z_bck);
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_bck);
                ps_fwd_bck.clone_from(&ps_bck_bck);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut ps_bck_fwd,
                    &mut ps_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    rng,
                );
                z_bck.clone_from(&self.z);
                v
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = sum(&rho_bck, &rho_fwd);
            let mut persist = criterion(&ps_bck_bck, &ps_fwd_fwd, &rho);
            persist &= criterion(&ps_bck_bck, &ps_fwd_bck, &sum(&rho_bck, &p_fwd_bck));
            persist &= criterion(&ps_bck_fwd, &ps_fwd_fwd, &sum(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }

        self.z = z_sample;
        TransitionInfo {
            accept_stat: if n_leapfrog > 0 { sum_metro / n_leapfrog as f64 } else { 0.0 },
            divergent: self.divergent,
            n_leapfrog,

        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &mut self,
        depth: usize,
        z_propose: &mut PhasePoint,
        ps_beg: &mut Vector,
        ps_end: &mut Vector,
        rho: &mut Vector,
        p_beg: &mut Vector,
        p_end: &mut Vector,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(sign * self.step_size);
            *n_leapfrog += 1;
            let h = self.hamiltonian(&self.z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(&self.z);
            *ps_beg = self.p_sharp(&self.z.p);
            ps_end.clone_from(ps_beg);
            add_assign(rho, &self.z.p);
            p_beg.clone_from(&self.z.p);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }

        let d = rho.len();
        let zero: Vector = Vector::from_elem(0.0, d);
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = zero.clone();
        let mut ps_init_end = zero.clone();
        let mut rho_init = zero.clone();
        if !self.build_tree(
            depth - 1,
            z_propose,
            ps_beg,
            &mut ps_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_init,
            sum_metro,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = self.z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = zero.clone();
        let mut ps_final_beg = zero.clone();
        let mut rho_final = zero;
        if !self.build_tree(
            depth - 1,
            &mut z_propose_final,
            &mut ps_final_beg,
            ps_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_final,
            sum_metro,
            rng,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_assign(rho, &rho_subtree);
        let mut persist = criterion(ps_beg, ps_end, &rho_subtree);
        persist &= criterion(ps_beg, &ps_final_beg, &sum(&rho_init, &p_final_beg));
        persist &= criterion(&ps_init_end, ps_end, &sum(&rho_final, &p_init_end));
        persist
    }
}
