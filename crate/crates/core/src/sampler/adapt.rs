//! Warmup adaptation: dual averaging of the step size and a staged estimate
//! of the diagonal inverse mass matrix.

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

#[derive(Debug, Clone)]
pub(crate) struct StepSizeAdapter {
    delta: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    pub fn new(delta: f64) -> Self {
        Self { delta, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    /// Centers the log step size search at `log(10 * eps)` and clears the history.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the latest acceptance statistic.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let d = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Staged windows: an initial buffer for the step size alone, doubling
/// windows that each end with a metric update, and a terminal buffer.
#[derive(Debug, Clone)]
pub(crate) struct MetricAdapter {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    estimator: Welford,
}

impl MetricAdapter {
    pub fn new(dim: usize, warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if init_buffer + base_window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base_window = warmup.saturating_sub(init_buffer + term_buffer);
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: (init_buffer + base_window).saturating_sub(1),
            counter: 0,
            estimator: Welford::new(dim),
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.warmup.saturating_sub(self.term_buffer)
            && self.counter != self.warmup
    }

    fn window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup.saturating_sub(self.term_buffer + 1);
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup.saturating_sub(self.term_buffer) {
                self.next_window = last;
            }
        }
    }

    /// Records a warmup draw. Returns true when `inv_metric` was updated.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.window_end() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (m, v) in inv_metric.iter_mut().zip(self.estimator.variance()) {
                *m = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_for_default_warmup() {
        let mut a = MetricAdapter::new(1, 1000);
        let mut m = vec![1.0];
        let ends: Vec<usize> = (0..1000).filter(|&k| a.learn(&mut m, &[k as f64])).collect();
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let mut s = StepSizeAdapter::new(0.8);
        s.restart(1.0);
        let e1 = s.learn(0.2);
        assert!(e1 < 10.0);
        let mut s = StepSizeAdapter::new(0.8);
        s.restart(1.0);
        let e2 = s.learn(1.0);
        assert!(e2 > e1);
    }
}
