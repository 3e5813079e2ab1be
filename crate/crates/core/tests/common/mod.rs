#![allow(dead_code)]

use evcharge::market::{assemble_market, Company, MarketInstance, PriceVector, StationSet};
use nalgebra::DVector;
use proptest::collection::vec;
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct MarketSpec {
    pub c: Vec<f64>,
    pub tau: Vec<f64>,
    pub companies: Vec<(u32, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl MarketSpec {
    pub fn build(&self) -> MarketInstance {
        let stations = StationSet {
            tau: self.tau.clone(),
            c: self.c.clone(),
        };
        let companies = self
            .companies
            .iter()
            .map(|(f, d, a, p)| Company::simplex(*f, d.clone(), a.clone(), p.clone()))
            .collect();
        assemble_market(stations, companies).unwrap()
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }
}

/// Markets with `n` companies and `m` stations drawn from the given ranges.
pub fn markets(
    n: std::ops::RangeInclusive<usize>,
    m: std::ops::RangeInclusive<usize>,
    fleet: std::ops::Range<u32>,
) -> impl Strategy<Value = MarketSpec> {
    (n, m).prop_flat_map(move |(n, m)| {
        let company = (
            fleet.clone(),
            vec(0.5..1.5, m),
            vec(0.0..2.0, m),
            vec(0.0..2.0, m),
        );
        (vec(0.5..2.0, m), vec(0.0..2.0, m), vec(company, n)).prop_map(|(c, tau, companies)| {
            MarketSpec { c, tau, companies }
        })
    })
}

pub fn prices(m: usize, lo: f64, hi: f64) -> impl Strategy<Value = PriceVector> {
    vec(lo..hi, m).prop_map(|v| PriceVector(DVector::from_vec(v)))
}

/// A market together with a price vector of matching length.
pub fn market_and_price(
    n: std::ops::RangeInclusive<usize>,
    m: std::ops::RangeInclusive<usize>,
    fleet: std::ops::Range<u32>,
    lo: f64,
    hi: f64,
) -> impl Strategy<Value = (MarketSpec, PriceVector)> {
    markets(n, m, fleet).prop_flat_map(move |spec| {
        let m = spec.m();
        (Just(spec), prices(m, lo, hi))
    })
}

/// A market together with unnormalised target weights, one per station.
pub fn market_and_weights(
    n: std::ops::RangeInclusive<usize>,
    m: std::ops::RangeInclusive<usize>,
    fleet: std::ops::Range<u32>,
) -> impl Strategy<Value = (MarketSpec, Vec<f64>)> {
    markets(n, m, fleet).prop_flat_map(|spec| {
        let m = spec.m();
        (Just(spec), vec(0.05..1.0, m))
    })
}
