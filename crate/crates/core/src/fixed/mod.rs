//! Fixed-point encoding in Z_2^64, two-party additive shares, and the
//! dealer-assisted multiplication, truncation and ReLU primitives.

mod dealer;
mod ring;

pub use dealer::{dealer_gen, BeaverTriple, Dealer, DealerStore, TripleShare};
pub use ring::{fixed_forward, ring_conv_dense, RingTensor};

use std::num::Wrapping;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Ring = Wrapping<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedCfg {
    pub frac_bits: u32,
}

impl Default for FixedCfg {
    fn default() -> Self {
        FixedCfg { frac_bits: 16 }
    }
}

impl FixedCfg {
    pub fn new(frac_bits: u32) -> Result<Self> {
        let cfg = FixedCfg { frac_bits };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=32).contains(&self.frac_bits) {
            return Err(Error::InvalidArgument(format!(
                "frac_bits must be in [8, 32], got {}",
                self.frac_bits
            )));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// `round(v * 2^f)` embedded in the ring as two's complement.
    pub fn encode(&self, v: f64) -> Result<Ring> {
        let bound_bits = 63 - self.frac_bits;
        if !v.is_finite() || v.abs() >= (1u64 << bound_bits) as f64 {
            return Err(Error::FixedRange {
                value: v,
                bound_bits,
            });
        }
        Ok(Wrapping((v * self.scale()).round() as i64 as u64))
    }

    /// Encoding at scale `2^(2f)`, for biases added to raw products.
    pub fn encode_double(&self, v: f64) -> Result<Ring> {
        Ok(self.encode(v)? << self.frac_bits as usize)
    }

    pub fn decode(&self, r: Ring) -> f64 {
        r.0 as i64 as f64 / self.scale()
    }

    pub fn encode_tensor(&self, t: &Tensor) -> Result<RingTensor> {
        let data = t
            .data()
            .iter()
            .map(|&v| self.encode(v))
            .collect::<Result<Vec<_>>>()?;
        RingTensor::new(t.shape().to_vec(), data)
    }

    pub fn decode_tensor(&self, r: &RingTensor) -> Tensor {
        Tensor::new(
            r.shape.clone(),
            r.data.iter().map(|&v| self.decode(v)).collect(),
        )
        .expect("ring tensor shape")
    }

    /// Floor division by `2^f` of a signed ring value.
    pub fn truncate(&self, r: Ring) -> Ring {
        Wrapping(((r.0 as i64) >> self.frac_bits) as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Client,
    Server,
}

/// One party's additive share of a ring tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareTensor {
    pub party: Party,
    pub value: RingTensor,
}

impl ShareTensor {
    pub fn new(party: Party, value: RingTensor) -> Self {
        ShareTensor { party, value }
    }

    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }
}

/// Splits `x` into a uniformly random server share and `x - r` for the client.
pub fn share<R: Rng + ?Sized>(x: &RingTensor, rng: &mut R) -> (ShareTensor, ShareTensor) {
    let r = RingTensor::random(&x.shape, rng);
    let c = x.sub(&r).expect("same shape");
    (
        ShareTensor::new(Party::Client, c),
        ShareTensor::new(Party::Server, r),
    )
}

pub fn reconstruct(a: &ShareTensor, b: &ShareTensor) -> Result<RingTensor> {
    if a.party == b.party {
        return Err(Error::InvalidArgument(format!(
            "both shares belong to the {:?}",
            a.party
        )));
    }
    if a.shape() != b.shape() {
        return Err(Error::shape("reconstruct", a.shape(), b.shape()));
    }
    a.value.add(&b.value)
}

/// A pair of shares held by (client, server), for local two-party simulation.
pub type SharedPair = (ShareTensor, ShareTensor);

/// Pairwise zero-sharing masks: the client adds `m`, the server adds `-m`,
/// so a value sent by both parties to the dealer reconstructs unchanged.
pub fn zero_masks<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> (RingTensor, RingTensor) {
    let m = RingTensor::random(shape, rng);
    let neg = m.neg();
    (m, neg)
}

/// Elementwise product of two shared tensors with one Beaver triple. The
/// parties open `x - a` and `y - b`, combine locally, and have the dealer
/// truncate the `2f`-scaled result back to scale `f`.
pub fn beaver_mul<R: Rng + ?Sized>(
    x: &SharedPair,
    y: &SharedPair,
    triple: &mut BeaverTriple,
    dealer: &mut Dealer,
    mask_rng: &mut R,
) -> Result<SharedPair> {
    let z = beaver_product(x, y, triple)?;
    truncate_shares(&z, dealer, mask_rng, "beaver_mul")
}

/// Raw (untruncated) Beaver product.
pub fn beaver_product(
    x: &SharedPair,
    y: &SharedPair,
    triple: &mut BeaverTriple,
) -> Result<SharedPair> {
    if x.0.shape() != y.0.shape() || x.0.shape() != x.1.shape() || y.0.shape() != y.1.shape() {
        return Err(Error::shape("beaver_mul", x.0.shape(), y.0.shape()));
    }
    if triple.client.a.shape != x.0.value.shape {
        return Err(Error::shape(
            "beaver triple",
            x.0.shape(),
            &triple.client.a.shape,
        ));
    }
    triple.consume()?;
    let (tc, ts) = (&triple.client, &triple.server);
    let d = x.0.value.sub(&tc.a)?.add(&x.1.value.sub(&ts.a)?)?;
    let e = y.0.value.sub(&tc.b)?.add(&y.1.value.sub(&ts.b)?)?;
    let zc = beaver_combine(&tc.c, &tc.a, &tc.b, &d, &e, true)?;
    let zs = beaver_combine(&ts.c, &ts.a, &ts.b, &d, &e, false)?;
    Ok((
        ShareTensor::new(Party::Client, zc),
        ShareTensor::new(Party::Server, zs),
    ))
}

/// One party's share of `x * y` given the opened `d = x - a`, `e = y - b`:
/// `c + d*b + e*a`, plus `d*e` for the client.
pub fn beaver_combine(
    c: &RingTensor,
    a: &RingTensor,
    b: &RingTensor,
    d: &RingTensor,
    e: &RingTensor,
    client: bool,
) -> Result<RingTensor> {
    let mut z = c.add(&d.mul(b)?)?.add(&e.mul(a)?)?;
    if client {
        z = z.add(&d.mul(e)?)?;
    }
    Ok(z)
}

/// Exact truncation by `f` bits through the dealer.
pub fn truncate_shares<R: Rng + ?Sized>(
    z: &SharedPair,
    dealer: &mut Dealer,
    mask_rng: &mut R,
    layer: &str,
) -> Result<SharedPair> {
    let (mc, ms) = zero_masks(z.0.shape(), mask_rng);
    let (tc, ts) = dealer.truncate(layer, &z.0.value.add(&mc)?, &z.1.value.add(&ms)?)?;
    Ok((
        ShareTensor::new(Party::Client, tc),
        ShareTensor::new(Party::Server, ts),
    ))
}

/// `max(0, x)` on shares: the dealer returns shares of the (unscaled) bit
/// `x > 0`, then one Beaver product with a fresh triple. No truncation, so
/// the result is exact on the fixed-point grid.
pub fn relu_shares<R: Rng + ?Sized>(
    x: &SharedPair,
    dealer: &mut Dealer,
    mask_rng: &mut R,
) -> Result<SharedPair> {
    let shape = x.0.shape().to_vec();
    let (mc, ms) = zero_masks(&shape, mask_rng);
    let (bc, bs) = dealer.sign_bits("relu", &x.0.value.add(&mc)?, &x.1.value.add(&ms)?)?;
    let bits = (
        ShareTensor::new(Party::Client, bc),
        ShareTensor::new(Party::Server, bs),
    );
    let mut triple = dealer.triple("relu", &shape)?;
    beaver_product(x, &bits, &mut triple)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> FixedCfg {
        FixedCfg::default()
    }

    fn shared(v: &[f64], rng: &mut ChaCha8Rng) -> SharedPair {
        let t = Tensor::new(vec![v.len()], v.to_vec()).unwrap();
        share(&cfg().encode_tensor(&t).unwrap(), rng)
    }

    fn open(p: &SharedPair) -> Vec<f64> {
        cfg()
            .decode_tensor(&reconstruct(&p.0, &p.1).unwrap())
            .into_data()
    }

    #[test]
    fn encode_decode() {
        let c = cfg();
        assert_eq!(c.encode(1.5).unwrap(), Wrapping(98304));
        assert_eq!(c.decode(c.encode(-0.25).unwrap()), -0.25);
        let err = c.encode(2f64.powi(50)).unwrap_err();
        assert!(
            matches!(err, Error::FixedRange { bound_bits: 47, .. }),
            "{err}"
        );
        assert!(FixedCfg::new(7).is_err() && FixedCfg::new(33).is_err());
    }

    #[test]
    fn truncation_floors() {
        let c = cfg();
        assert_eq!(
            c.truncate(Wrapping((-3i64 << 16) as u64 + 5)),
            Wrapping((-3i64) as u64)
        );
        assert_eq!(c.truncate(Wrapping(7 << 16)), Wrapping(7));
    }

    #[test]
    fn zero_shares_are_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, s) = share(&RingTensor::zeros(&[4]), &mut rng);
        assert_eq!(c.value, s.value.neg());
    }

    #[test]
    fn reconstruct_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, s) = share(&RingTensor::zeros(&[4]), &mut rng);
        assert!(reconstruct(&c, &c).is_err());
        let (_, s2) = share(&RingTensor::zeros(&[5]), &mut rng);
        assert!(reconstruct(&c, &s2).is_err());
        assert!(reconstruct(&s, &c).is_ok());
    }

    #[test]
    fn beaver_two_times_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dealer = Dealer::new(4, cfg());
        let x = shared(&[2.0, 1.25], &mut rng);
        let y = shared(&[3.0, 0.0], &mut rng);
        let mut t = dealer.triple("t", &[2]).unwrap();
        let z = open(&beaver_mul(&x, &y, &mut t, &mut dealer, &mut rng).unwrap());
        assert!((z[0] - 6.0).abs() <= 2f64.powi(-14));
        assert!(z[1].abs() <= 2f64.powi(-15));
        let err = beaver_mul(&x, &y, &mut t, &mut dealer, &mut rng).unwrap_err();
        assert!(matches!(err, Error::TripleReused));
    }

    #[test]
    fn relu_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dealer = Dealer::new(6, cfg());
        let x = shared(&[-1.5, 0.0, 2.75, -0.0001, 1e-5], &mut rng);
        let expect: Vec<f64> = open(&x).iter().map(|v| v.max(0.0)).collect();
        assert_eq!(
            open(&relu_shares(&x, &mut dealer, &mut rng).unwrap()),
            expect
        );
    }

    #[test]
    fn dealer_unavailable_reports_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dealer = Dealer::new(6, cfg());
        dealer.fail_after(1);
        let x = shared(&[1.0], &mut rng);
        let err = relu_shares(&x, &mut dealer, &mut rng).unwrap_err();
        assert!(
            matches!(err, Error::DealerUnavailable { round: 1 }),
            "{err}"
        );
    }
}
