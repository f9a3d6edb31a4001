use crate::numerics::{derive_seed, rng_from_seed, Graph, Linear, Matrix, NumericsError, ParamStore, Var};

/// Multi-head attention of queries `Z` over a feature set `F`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

/// Attention result with the per-head weight matrices (`queries x keys`).
#[derive(Clone, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Matrix>,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, seed: u64) -> Result<Self, NumericsError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NumericsError::Contract(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        let mut rng = rng_from_seed(derive_seed(seed, name));
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, &mut rng)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, &mut rng)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, &mut rng)?,
            out: Linear::new(store, &format!("{name}.out"), d, d, &mut rng)?,
            heads,
        })
    }

    /// Per head `softmax(Q Kᵀ / sqrt(d_head) + mask) V`, heads concatenated and
    /// passed through the output projection. `mask` holds `0` / `-inf` and
    /// must have one row per query and one column per feature row.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        f: Var,
        mask: Option<&Matrix>,
    ) -> Result<Attended, NumericsError> {
        if let Some(m) = mask {
            let want = (g.value(z).rows(), g.value(f).rows());
            if m.shape() != want {
                return Err(NumericsError::Shape(format!(
                    "attention mask is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    want.0,
                    want.1
                )));
            }
        }
        let q = self.q.forward(g, store, z)?;
        let k = self.k.forward(g, store, f)?;
        let v = self.v.forward(g, store, f)?;
        let dh = self.q.output / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let logits = g.matmul_nt(qh, kh)?;
            let logits = g.scale(logits, scale);
            let w = match mask {
                Some(m) => g.masked_softmax_rows(logits, m)?,
                None => g.softmax_rows(logits)?,
            };
            weights.push(g.value(w).clone());
            outs.push(g.matmul(w, vh)?);
        }
        let cat = g.concat_cols(&outs)?;
        let output = self.out.forward(g, store, cat)?;
        Ok(Attended { output, weights })
    }
}
