/// Adam moments for one flat parameter group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update; `t` counts steps from 1.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, hp: &AdamParams, t: u64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let c1 = 1.0 - hp.beta1.powi(t as i32);
        let c2 = 1.0 - hp.beta2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + hp.eps);
        }
    }

    /// Keeps the moments of the listed rows, each `width` entries wide.
    pub fn retain_rows(&mut self, kept: &[usize], width: usize) {
        let pick = |v: &[f64]| kept.iter().flat_map(|&r| v[r * width..(r + 1) * width].iter().copied()).collect();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}
