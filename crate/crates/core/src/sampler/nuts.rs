//! One NUTS transition: multinomial sampling over the trajectory and the
//! generalized no-U-turn criterion, checked across merged subtrees as well
//! as between them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::LogDensity;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new<D: LogDensity + ?Sized>(target: &D, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_grad(&q, &mut grad);
        let p = vec![0.0; q.len()];
        Self { q, p, grad, logp }
    }

    pub fn is_finite(&self) -> bool {
        self.logp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
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

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

pub(crate) struct Hamiltonian<'a, D: ?Sized> {
    pub target: &'a D,
    pub inv_metric: &'a [f64],
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_metric).map(|(p, m)| p * m).collect()
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    pub fn leapfrog(&self, z: &mut Point, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        if !z.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }
}

struct TreeState {
    divergent: bool,
    n_leapfrog: usize,
    sum_metro_prob: f64,
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        eps: f64,
        log_sum_weight: &mut f64,
        st: &mut TreeState,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, eps);
            st.n_leapfrog += 1;
            let h = self.energy(z);
            if h - h0 > MAX_DELTA_H || !h.is_finite() {
                st.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            st.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !st.divergent;
        }

        let n = z.q.len();
        // Initial subtree.
        let mut p_init_end = vec![0.0; n];
        let mut p_sharp_init_end = vec![0.0; n];
        let mut rho_init = vec![0.0; n];
        let mut lsw_init = f64::NEG_INFINITY;
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            eps,
            &mut lsw_init,
            st,
            rng,
        );
        if !valid_init {
            return false;
        }

        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut p_final_beg = vec![0.0; n];
        let mut p_sharp_final_beg = vec![0.0; n];
        let mut rho_final = vec![0.0; n];
        let mut lsw_final = f64::NEG_INFINITY;
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            eps,
            &mut lsw_final,
            st,
            rng,
        );
        if !valid_final {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext = add(&rho_init, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext = add(&rho_final, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }

    /// Advances `z` by one NUTS transition with step size `eps`.
    pub fn transition<R: Rng + ?Sized>(&self, z: &mut Point, eps: f64, max_depth: usize, rng: &mut R) -> Transition {
        self.sample_momentum(z, rng);
        let n = z.q.len();
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p_sharp = self.p_sharp(&z.p);
        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = p_sharp.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp;
        let mut rho = z.p.clone();

        let mut log_sum_weight = 0.0;
        let h0 = self.energy(z);
        let mut st = TreeState { divergent: false, n_leapfrog: 0, sum_metro_prob: 0.0 };
        let mut depth = 0;

        while depth < max_depth {
            let mut rho_fwd = vec![0.0; n];
            let mut rho_bck = vec![0.0; n];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            if rng.random::<f64>() > 0.5 {
                let mut zz = z_fwd.clone();
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                valid = self.build_tree(
                    depth,
                    &mut zz,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    eps,
                    &mut lsw_subtree,
                    &mut st,
                    rng,
                );
                z_fwd = zz;
            } else {
                let mut zz = z_bck.clone();
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                valid = self.build_tree(
                    depth,
                    &mut zz,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -eps,
                    &mut lsw_subtree,
                    &mut st,
                    rng,
                );
                z_bck = zz;
            }
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let n_leapfrog = st.n_leapfrog.max(1);
        *z = z_sample;
        Transition {
            accept_stat: st.sum_metro_prob / n_leapfrog as f64,
            depth,
            n_leapfrog: st.n_leapfrog,
            divergent: st.divergent,
            energy: self.energy(z),
        }
    }
}
