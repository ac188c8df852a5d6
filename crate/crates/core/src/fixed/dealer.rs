use std::collections::VecDeque;
use std::num::Wrapping;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FixedCfg, RingTensor};
use crate::error::{Error, Result};

/// One party's half of a multiplication triple. `c` is the raw ring product
/// (scale `2f` when both operands are at scale `f`); truncation is separate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleShare {
    pub a: RingTensor,
    pub b: RingTensor,
    pub c: RingTensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub client: TripleShare,
    pub server: TripleShare,
    consumed: bool,
}

impl BeaverTriple {
    pub fn new(client: TripleShare, server: TripleShare) -> Self {
        BeaverTriple {
            client,
            server,
            consumed: false,
        }
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(crate) fn consume(&mut self) -> Result<()> {
        if self.consumed {
            return Err(Error::TripleReused);
        }
        self.consumed = true;
        Ok(())
    }

    /// `c_c + c_s == (a_c + a_s) * (b_c + b_s)` elementwise.
    pub fn is_valid(&self) -> bool {
        let a = self.client.a.add(&self.server.a);
        let b = self.client.b.add(&self.server.b);
        let c = self.client.c.add(&self.server.c);
        match (a, b, c) {
            (Ok(a), Ok(b), Ok(c)) => a.mul(&b).map(|ab| ab == c).unwrap_or(false),
            _ => false,
        }
    }
}

/// The trusted third party. Every request draws from one seeded stream in
/// arrival order, so a session is reproducible from the dealer seed.
#[derive(Debug)]
pub struct Dealer {
    cfg: FixedCfg,
    rng: ChaCha8Rng,
    budget: Option<usize>,
    requests: usize,
    fail_after: Option<usize>,
}

impl Dealer {
    pub fn new(seed: u64, cfg: FixedCfg) -> Self {
        Dealer {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            budget: None,
            requests: 0,
            fail_after: None,
        }
    }

    /// Limits the number of requests the dealer will serve.
    pub fn with_budget(mut self, requests: usize) -> Self {
        self.budget = Some(requests);
        self
    }

    /// Simulates the dealer going away after `n` requests.
    pub fn fail_after(&mut self, n: usize) {
        self.fail_after = Some(n);
    }

    pub fn requests(&self) -> usize {
        self.requests
    }

    fn begin(&mut self, layer: &str) -> Result<()> {
        if self.fail_after.is_some_and(|n| self.requests >= n) {
            return Err(Error::DealerUnavailable {
                round: self.requests,
            });
        }
        if self.budget.is_some_and(|b| self.requests >= b) {
            return Err(Error::DealerExhausted {
                layer: layer.to_string(),
            });
        }
        self.requests += 1;
        Ok(())
    }

    fn random(&mut self, shape: &[usize]) -> RingTensor {
        RingTensor::random(shape, &mut self.rng)
    }

    /// A full elementwise triple with both halves drawn by the dealer.
    pub fn triple(&mut self, layer: &str, shape: &[usize]) -> Result<BeaverTriple> {
        self.begin(layer)?;
        let (ac, as_, bc, bs) = (
            self.random(shape),
            self.random(shape),
            self.random(shape),
            self.random(shape),
        );
        let cs = self.random(shape);
        let c = ac.add(&as_)?.mul(&bc.add(&bs)?)?;
        let cc = c.sub(&cs)?;
        Ok(BeaverTriple::new(
            TripleShare {
                a: ac,
                b: bc,
                c: cc,
            },
            TripleShare {
                a: as_,
                b: bs,
                c: cs,
            },
        ))
    }

    /// Completes an elementwise triple around the client's chosen `(a_c, b_c)`:
    /// returns the client's `c_c` and the server's half.
    pub fn complete_triple(
        &mut self,
        layer: &str,
        ac: &RingTensor,
        bc: &RingTensor,
    ) -> Result<(RingTensor, TripleShare)> {
        self.begin(layer)?;
        let (as_, bs, cs) = (
            self.random(&ac.shape),
            self.random(&bc.shape),
            self.random(&ac.shape),
        );
        let c = ac.add(&as_)?.mul(&bc.add(&bs)?)?;
        let cc = c.sub(&cs)?;
        Ok((
            cc,
            TripleShare {
                a: as_,
                b: bs,
                c: cs,
            },
        ))
    }

    /// Correlation for a linear layer `op(x, W)` where the client holds the
    /// input mask `A` and the server will mask its weights with `B`:
    /// returns `(C_c, B, C_s)` with `C_c + C_s = op(A, B)`.
    pub fn complete_linear(
        &mut self,
        layer: &str,
        a: &RingTensor,
        weight_shape: &[usize],
        op: impl Fn(&RingTensor, &RingTensor) -> Result<RingTensor>,
    ) -> Result<(RingTensor, RingTensor, RingTensor)> {
        self.begin(layer)?;
        let b = self.random(weight_shape);
        let ab = op(a, &b)?;
        let cs = self.random(&ab.shape);
        let cc = ab.sub(&cs)?;
        Ok((cc, b, cs))
    }

    /// Fresh shares of `floor(z / 2^f)` from masked shares of `z`.
    pub fn truncate(
        &mut self,
        layer: &str,
        zc: &RingTensor,
        zs: &RingTensor,
    ) -> Result<(RingTensor, RingTensor)> {
        self.begin(layer)?;
        let cfg = self.cfg;
        let t = zc.add(zs)?.map(|v| cfg.truncate(v));
        self.reshare(&t)
    }

    /// Shares of the integer bit `x > 0` (unscaled) from masked shares of `x`.
    pub fn sign_bits(
        &mut self,
        layer: &str,
        xc: &RingTensor,
        xs: &RingTensor,
    ) -> Result<(RingTensor, RingTensor)> {
        self.begin(layer)?;
        let bits = xc.add(xs)?.map(|v| Wrapping((v.0 as i64 > 0) as u64));
        self.reshare(&bits)
    }

    /// Shares of a one-hot selector (integer, unscaled) marking the first
    /// maximum of every run of `window` consecutive elements.
    pub fn max_selectors(
        &mut self,
        layer: &str,
        xc: &RingTensor,
        xs: &RingTensor,
        window: usize,
    ) -> Result<(RingTensor, RingTensor)> {
        self.begin(layer)?;
        let x = xc.add(xs)?;
        let mut sel = RingTensor::zeros(&x.shape);
        for (k, w) in x.data.chunks(window).enumerate() {
            let mut best = 0;
            for (i, v) in w.iter().enumerate() {
                if (v.0 as i64) > (w[best].0 as i64) {
                    best = i;
                }
            }
            sel.data[k * window + best] = Wrapping(1);
        }
        self.reshare(&sel)
    }

    fn reshare(&mut self, v: &RingTensor) -> Result<(RingTensor, RingTensor)> {
        let s = self.random(&v.shape);
        Ok((v.sub(&s)?, s))
    }
}

/// A pre-generated queue of triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DealerStore {
    triples: VecDeque<BeaverTriple>,
}

impl DealerStore {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BeaverTriple> {
        self.triples.iter()
    }

    /// Pops the next triple; an empty store is reported against `layer`.
    pub fn next_triple(&mut self, layer: &str) -> Result<BeaverTriple> {
        self.triples
            .pop_front()
            .ok_or_else(|| Error::DealerExhausted {
                layer: layer.to_string(),
            })
    }
}

/// `count` rounds of triples, one per shape in each round, from one seed.
pub fn dealer_gen(
    count: usize,
    shapes: &[Vec<usize>],
    seed: u64,
    cfg: FixedCfg,
) -> Result<DealerStore> {
    let mut dealer = Dealer::new(seed, cfg);
    let mut triples = VecDeque::with_capacity(count * shapes.len());
    for _ in 0..count {
        for s in shapes {
            triples.push_back(dealer.triple("dealer_gen", s)?);
        }
    }
    Ok(DealerStore { triples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_is_deterministic_and_valid() {
        let shapes = vec![vec![3], vec![2, 2]];
        let a = dealer_gen(5, &shapes, 9, FixedCfg::default()).unwrap();
        let b = dealer_gen(5, &shapes, 9, FixedCfg::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|t| t.is_valid()));
    }

    #[test]
    fn exhaustion_names_layer() {
        let mut store = dealer_gen(1, &[vec![2]], 1, FixedCfg::default()).unwrap();
        store.next_triple("conv1").unwrap();
        let err = store.next_triple("conv2").unwrap_err().to_string();
        assert!(err.contains("conv2"), "{err}");
        let mut d = Dealer::new(1, FixedCfg::default()).with_budget(1);
        d.triple("a", &[1]).unwrap();
        assert!(
            matches!(d.triple("relu 3", &[1]), Err(Error::DealerExhausted { layer }) if layer == "relu 3")
        );
    }

    #[test]
    fn selectors_pick_first_max() {
        let mut d = Dealer::new(2, FixedCfg::default());
        let x = RingTensor::from_u64(
            vec![8],
            vec![
                1,
                5,
                5,
                (-2i64) as u64,
                (-3i64) as u64,
                (-1i64) as u64,
                (-1i64) as u64,
                (-7i64) as u64,
            ],
        )
        .unwrap();
        let (c, s) = d
            .max_selectors("pool", &x, &RingTensor::zeros(&[8]), 4)
            .unwrap();
        assert_eq!(c.add(&s).unwrap().to_u64(), vec![0, 1, 0, 0, 0, 1, 0, 0]);
    }
}
