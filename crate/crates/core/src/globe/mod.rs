//! The reparametrization network: message passing over nuclei and localized
//! orbitals that emits the molecule-dependent parameters of the wave function.

use ndarray::Array2;
use rand::Rng;

use crate::config::{GlobeConfig, MoonConfig};
use crate::diff::backend::softplus_inv;
use crate::diff::{Backend, ParamId, ParamStore, Unary};
use crate::nn::{envelope_ranges, inv_var_from_raw, normal_matrix, FilterBasis, LayerNorm, Linear, Mlp};
use crate::system::{System, N_ORBITAL_TYPES};

/// Largest supported nuclear charge.
pub const MAX_CHARGE: usize = 10;

/// Which index set a reparametrized tensor is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// One row per nucleus.
    Atom,
    /// One row per localized orbital.
    Orbital,
    /// One row per (orbital, nucleus) pair, row `i * M + m`.
    Pair,
}

/// One emitted head: its scope, width and target distribution `θ = μ + s·x`.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub name: &'static str,
    pub scope: Scope,
    pub width: usize,
    /// Per-column target means (length 1 broadcasts).
    pub mean: Vec<f64>,
    pub std: f64,
    pub bias: bool,
}

/// Moon-side sizes that determine the shapes of emitted tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReparamLayout {
    pub hidden: usize,
    pub filter_hidden: usize,
    pub ranges: usize,
    pub determinants: usize,
}

impl From<&MoonConfig> for ReparamLayout {
    fn from(c: &MoonConfig) -> Self {
        Self { hidden: c.hidden, filter_hidden: c.filter_hidden, ranges: c.filter_ranges, determinants: c.determinants }
    }
}

impl ReparamLayout {
    /// The registry of emitted heads, in emission order.
    pub fn heads(&self) -> Vec<HeadSpec> {
        let (h, f, d, k2) = (self.hidden, self.filter_hidden, self.ranges, 2 * self.determinants);
        let sp1 = softplus_inv(1.0);
        let head = |name, scope, width, mean: Vec<f64>, std: f64| HeadSpec { name, scope, width, mean, std, bias: true };
        vec![
            head("z", Scope::Atom, h, vec![0.0], 1.0),
            head("w_en", Scope::Atom, 4 * h, vec![0.0], 0.5),
            head("varsigma", Scope::Atom, d, envelope_ranges(d).into_iter().map(softplus_inv).collect(), 0.5),
            head("w1", Scope::Atom, 3 * f, vec![0.0], 1.0 / 3f64.sqrt()),
            head("b1", Scope::Atom, f, vec![0.0], 1.0),
            head("orb_w", Scope::Orbital, k2 * h, vec![0.0], 1.0 / (h as f64).sqrt()),
            head("orb_b", Scope::Orbital, k2, vec![1.0], 1.0),
            HeadSpec { bias: false, ..head("pi1", Scope::Pair, k2, vec![0.0], 1.0) },
            head("pi2", Scope::Pair, k2, vec![sp1], 1.0),
            head("sigma", Scope::Pair, k2, vec![sp1], 0.5),
        ]
    }
}

/// Reparametrized Moon parameters after domain mapping.
#[derive(Debug, Clone)]
pub struct Reparam<T> {
    /// `M × H` nuclei embeddings.
    pub z: T,
    /// `M × 4H` pair-feature projections, row-major `(4, H)` per atom.
    pub w_en: T,
    /// `M × D` positive envelope ranges.
    pub varsigma: T,
    /// `M × 3F` filter first-layer weights, row-major `(3, F)` per atom.
    pub w1: T,
    /// `M × F` filter first-layer biases.
    pub b1: T,
    /// `n_orb × 2K·H` orbital projections, column block `2k + δ`.
    pub orb_w: T,
    /// `n_orb × 2K` orbital biases.
    pub orb_b: T,
    /// `(n_orb·M) × 2K` envelope weights.
    pub pi: T,
    /// `(n_orb·M) × 2K` positive envelope decay rates.
    pub sigma: T,
}

impl<T> Reparam<T> {
    pub const COUNT: usize = 9;

    pub fn into_vec(self) -> Vec<T> {
        vec![self.z, self.w_en, self.varsigma, self.w1, self.b1, self.orb_w, self.orb_b, self.pi, self.sigma]
    }

    pub fn as_vec(&self) -> Vec<&T> {
        vec![&self.z, &self.w_en, &self.varsigma, &self.w1, &self.b1, &self.orb_w, &self.orb_b, &self.pi, &self.sigma]
    }

    pub fn from_vec(v: Vec<T>) -> Self {
        assert_eq!(v.len(), Self::COUNT);
        let mut it = v.into_iter();
        let mut next = || it.next().expect("length checked");
        Self {
            z: next(),
            w_en: next(),
            varsigma: next(),
            w1: next(),
            b1: next(),
            orb_w: next(),
            orb_b: next(),
            pi: next(),
            sigma: next(),
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Reparam<U> {
        Reparam::from_vec(self.as_vec().into_iter().map(f).collect())
    }
}

impl Reparam<Array2<f64>> {
    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.as_vec().iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major concatenation of all tensors.
    pub fn flat(&self) -> Vec<f64> {
        self.as_vec().into_iter().flat_map(|a| a.iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Constants shared by every walker.
    pub fn constants<B: Backend>(&self, be: &mut B) -> Reparam<B::T> {
        self.map(|a| be.constant(a.clone()))
    }

    /// Differentiable leaves keyed `External(0..COUNT)`.
    pub fn leaves<B: Backend>(&self, be: &mut B) -> Reparam<B::T> {
        let mut k = 0;
        self.map(|a| {
            let t = be.leaf(crate::diff::LeafKey::External(k), a);
            k += 1;
            t
        })
    }
}

/// Globe output: the standardized head outputs (for the moment regularizer)
/// and the mapped parameters.
pub struct GlobeOutput<T> {
    pub heads: Vec<T>,
    pub reparam: Reparam<T>,
}

struct Stage {
    out: ParamId,
    g: Mlp,
    f: Mlp,
}

pub struct Globe {
    pub config: GlobeConfig,
    pub layout: ReparamLayout,
    specs: Vec<HeadSpec>,
    atom_table: ParamId,
    orbital_table: ParamId,
    sigma_atom: ParamId,
    sigma_orbital: ParamId,
    aa_filter: FilterBasis,
    aa: Vec<Stage>,
    oa_filter: FilterBasis,
    oa: Vec<Stage>,
    atom_shared: Mlp,
    atom_ln: LayerNorm,
    orbital_shared: Mlp,
    orbital_ln: LayerNorm,
    pair_shared: Mlp,
    pair_ln: LayerNorm,
    pair_w: Linear,
    ao_filter: FilterBasis,
    ao_out: ParamId,
    heads: Vec<Mlp>,
}

fn dims(d_in: usize, hidden: usize, d_out: usize, layers: usize) -> Vec<usize> {
    let mut v = vec![d_in];
    v.extend(std::iter::repeat_n(hidden, layers.max(1) - 1));
    v.push(d_out);
    v
}

impl Globe {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: GlobeConfig, layout: ReparamLayout) -> Self {
        let (e, msg, fh, d, nl) = (config.embedding, config.message, config.filter_hidden, config.filter_ranges, config.mlp_layers);
        let atom_table = store.add("globe.atom_table", normal_matrix(rng, MAX_CHARGE, e, 1.0));
        let orbital_table = store.add("globe.orbital_table", normal_matrix(rng, N_ORBITAL_TYPES, e, 1.0));
        let one = Array2::from_elem((1, 1), softplus_inv(1.0));
        let sigma_atom = store.add("globe.sigma_atom", one.clone());
        let sigma_orbital = store.add("globe.sigma_orbital", one);
        let stages = |store: &mut ParamStore, rng: &mut _, name: &str| -> Vec<Stage> {
            (0..config.layers)
                .map(|l| Stage {
                    out: store.add(format!("globe.{name}{l}.out"), normal_matrix(rng, d, msg, 1.0 / (d as f64).sqrt())),
                    g: Mlp::new(store, rng, &format!("globe.{name}{l}.g"), &dims(2 * e, msg, msg, nl), true),
                    f: Mlp::new(store, rng, &format!("globe.{name}{l}.f"), &dims(e + msg, e, e, nl), true),
                })
                .collect()
        };
        let aa_filter = FilterBasis::new(store, rng, "globe.aa_filter", fh, d);
        let aa = stages(store, rng, "aa");
        let oa_filter = FilterBasis::new(store, rng, "globe.oa_filter", fh, d);
        let oa = stages(store, rng, "oa");
        let atom_shared = Mlp::new(store, rng, "globe.atom_shared", &dims(e, e, e, nl), true);
        let atom_ln = LayerNorm::new(store, "globe.atom_ln", e);
        let orbital_shared = Mlp::new(store, rng, "globe.orbital_shared", &dims(e, e, e, nl), true);
        let orbital_ln = LayerNorm::new(store, "globe.orbital_ln", e);
        let pair_shared = Mlp::new(store, rng, "globe.pair_shared", &dims(2 * e, e, e, nl), true);
        let pair_ln = LayerNorm::new(store, "globe.pair_ln", e);
        let pair_w = Linear::new(store, rng, "globe.pair_w", e, e, false);
        let ao_filter = FilterBasis::new(store, rng, "globe.ao_filter", fh, d);
        let ao_out = store.add("globe.ao_out", normal_matrix(rng, d, e, 1.0 / (d as f64).sqrt()));
        let specs = layout.heads();
        let heads = specs
            .iter()
            .map(|s| {
                let dm = [e, e, s.width];
                if s.bias {
                    Mlp::new(store, rng, &format!("globe.head.{}", s.name), &dm, true)
                } else {
                    Mlp::bias_free(store, rng, &format!("globe.head.{}", s.name), &dm)
                }
            })
            .collect();
        Self {
            config,
            layout,
            specs,
            atom_table,
            orbital_table,
            sigma_atom,
            sigma_orbital,
            aa_filter,
            aa,
            oa_filter,
            oa,
            atom_shared,
            atom_ln,
            orbital_shared,
            orbital_ln,
            pair_shared,
            pair_ln,
            pair_w,
            ao_filter,
            ao_out,
            heads,
        }
    }

    pub fn head_specs(&self) -> &[HeadSpec] {
        &self.specs
    }

    /// Atom and orbital embeddings after message passing.
    pub fn embeddings<B: Backend>(&self, be: &mut B, p: &ParamStore, sys: &System) -> (B::T, B::T) {
        let m = sys.n_atoms();
        let no = sys.n_orbitals();
        let charges: Vec<usize> = sys.molecule.nuclei.iter().map(|n| n.charge as usize - 1).collect();

        // Atom-atom pairs, self included.
        let ii: Vec<usize> = (0..m * m).map(|q| q / m).collect();
        let jj: Vec<usize> = (0..m * m).map(|q| q % m).collect();
        let (disp, r2) = displacements(&sys.nuclei, &sys.nuclei);
        let disp = be.constant(disp);
        let r2 = be.constant(r2);
        let beta = self.aa_filter.beta(be, p, &disp, &r2);
        let nu = normalizer(be, p, self.sigma_atom, &r2, &ii, m);
        let table = p.leaf(be, self.atom_table);
        let mut h = be.gather_rows(&table, &charges);
        for st in &self.aa {
            let hi = be.gather_rows(&h, &ii);
            let hj = be.gather_rows(&h, &jj);
            let msg = self.message(be, p, st, &[hi, hj], &beta, &ii, m, &nu);
            h = self.update(be, p, st, &h, &msg);
        }

        // Atoms to orbitals, one way.
        let oi: Vec<usize> = (0..no * m).map(|q| q / m).collect();
        let om: Vec<usize> = (0..no * m).map(|q| q % m).collect();
        let (disp, r2) = displacements(&sys.orbital_locs, &sys.nuclei);
        let disp = be.constant(disp);
        let r2 = be.constant(r2);
        let beta = self.oa_filter.beta(be, p, &disp, &r2);
        let nu = normalizer(be, p, self.sigma_orbital, &r2, &oi, no);
        let table = p.leaf(be, self.orbital_table);
        let mut ho = be.gather_rows(&table, &sys.orbital_types);
        let ha = be.gather_rows(&h, &om);
        for st in &self.oa {
            let hi = be.gather_rows(&ho, &oi);
            let msg = self.message(be, p, st, &[hi, ha.clone()], &beta, &oi, no, &nu);
            ho = self.update(be, p, st, &ho, &msg);
        }
        (h, ho)
    }

    #[allow(clippy::too_many_arguments)]
    fn message<B: Backend>(
        &self,
        be: &mut B,
        p: &ParamStore,
        st: &Stage,
        parts: &[B::T],
        beta: &B::T,
        idx: &[usize],
        n: usize,
        nu: &B::T,
    ) -> B::T {
        let x = be.concat_cols(parts);
        let g = st.g.apply(be, p, &x);
        let w = p.leaf(be, st.out);
        let gamma = be.matmul(beta, &w);
        let g = be.mul(&g, &gamma);
        let s = be.scatter_rows(&g, idx, n);
        be.div(&s, nu)
    }

    fn update<B: Backend>(&self, be: &mut B, p: &ParamStore, st: &Stage, h: &B::T, msg: &B::T) -> B::T {
        let x = be.concat_cols(&[h.clone(), msg.clone()]);
        let f = st.f.apply(be, p, &x);
        be.add(h, &f)
    }

    /// Runs the network and applies the parameter heads and domain maps.
    pub fn forward<B: Backend>(&self, be: &mut B, p: &ParamStore, sys: &System) -> GlobeOutput<B::T> {
        let m = sys.n_atoms();
        let no = sys.n_orbitals();
        let (ha, ho) = self.embeddings(be, p, sys);

        let x = self.atom_shared.apply(be, p, &ha);
        let atom = self.atom_ln.apply(be, p, &x);
        let x = self.orbital_shared.apply(be, p, &ho);
        let orbital = self.orbital_ln.apply(be, p, &x);

        let oi: Vec<usize> = (0..no * m).map(|q| q / m).collect();
        let om: Vec<usize> = (0..no * m).map(|q| q % m).collect();
        let am = be.gather_rows(&ha, &om);
        let oo = be.gather_rows(&ho, &oi);
        let x = be.concat_cols(&[am, oo]);
        let x = self.pair_shared.apply(be, p, &x);
        let x = self.pair_ln.apply(be, p, &x);
        let x = self.pair_w.apply(be, p, &x);
        let (disp, r2) = displacements(&sys.orbital_locs, &sys.nuclei);
        let disp = be.constant(-disp);
        let r2 = be.constant(r2);
        let beta = self.ao_filter.beta(be, p, &disp, &r2);
        let w = p.leaf(be, self.ao_out);
        let gate = be.matmul(&beta, &w);
        let pair = be.mul(&x, &gate);

        let mut heads = Vec::with_capacity(self.specs.len());
        let mut theta = Vec::with_capacity(self.specs.len());
        for (spec, mlp) in self.specs.iter().zip(&self.heads) {
            let input = match spec.scope {
                Scope::Atom => &atom,
                Scope::Orbital => &orbital,
                Scope::Pair => &pair,
            };
            let out = mlp.apply(be, p, input);
            let t = be.scale(&out, spec.std);
            let mean = if spec.mean.len() == 1 {
                Array2::from_elem((1, 1), spec.mean[0])
            } else {
                Array2::from_shape_vec((1, spec.mean.len()), spec.mean.clone()).expect("row")
            };
            let t = if spec.mean.iter().all(|&v| v == 0.0) {
                t
            } else {
                let mean = be.constant(mean);
                be.add(&t, &mean)
            };
            heads.push(out);
            theta.push(t);
        }
        let mut th = theta.into_iter();
        let mut next = || th.next().expect("registry order");
        let z = next();
        let w_en = next();
        let varsigma = be.unary(&next(), Unary::Softplus);
        let w1 = next();
        let b1 = next();
        let orb_w = next();
        let orb_b = next();
        let pi1 = be.unary(&next(), Unary::Tanh);
        let pi2 = be.unary(&next(), Unary::Softplus);
        let pi = be.mul(&pi1, &pi2);
        let sigma = be.unary(&next(), Unary::Softplus);
        GlobeOutput { heads, reparam: Reparam { z, w_en, varsigma, w1, b1, orb_w, orb_b, pi, sigma } }
    }
}

/// Target moments of a standard normal: 0 for odd `p`, `(p - 1)!!` for even.
pub fn normal_moment(p: usize) -> f64 {
    if p % 2 == 1 {
        0.0
    } else {
        (1..p).step_by(2).map(|k| k as f64).product()
    }
}

/// `Σ_heads Σ_{p ≤ p_max} (mean(x^p) − m_p)²` over standardized head outputs
/// with at least two elements. Returns a `(1, 1)` tensor, or `None` if every
/// head was skipped.
pub fn moment_regularizer<B: Backend>(be: &mut B, heads: &[B::T], p_max: usize) -> Option<B::T> {
    let mut total: Option<B::T> = None;
    for h in heads {
        let (r, c) = be.shape(h);
        let n = r * c;
        if n < 2 {
            continue;
        }
        let mut pow = h.clone();
        for p in 1..=p_max {
            if p > 1 {
                pow = be.mul(&pow, h);
            }
            let s = be.sum_all(&pow);
            let d = be.scale(&s, 1.0 / n as f64);
            let d = be.offset(&d, -normal_moment(p));
            let sq = be.unary(&d, Unary::Square);
            total = Some(match total {
                Some(t) => be.add(&t, &sq),
                None => sq,
            });
        }
    }
    total
}

/// Pairwise displacements `a_i − b_j` (row `i * nb + j`) and squared norms.
pub fn displacements(a: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut d = Array2::zeros((na * nb, 3));
    let mut r2 = Array2::zeros((na * nb, 1));
    for i in 0..na {
        for j in 0..nb {
            let q = i * nb + j;
            for k in 0..3 {
                let v = a[[i, k]] - b[[j, k]];
                d[[q, k]] = v;
                r2[[q, 0]] += v * v;
            }
        }
    }
    (d, r2)
}

/// `1 + Σ exp(−r²/σ²)` accumulated onto `n` rows by `idx`.
fn normalizer<B: Backend>(be: &mut B, p: &ParamStore, sigma: ParamId, r2: &B::T, idx: &[usize], n: usize) -> B::T {
    let raw = p.leaf(be, sigma);
    let iv = inv_var_from_raw(be, &raw);
    let e = be.mul(r2, &iv);
    let e = be.neg(&e);
    let e = be.unary(&e, Unary::Exp);
    let s = be.scatter_rows(&e, idx, n);
    be.offset(&s, 1.0)
}
