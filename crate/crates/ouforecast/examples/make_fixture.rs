//! Regenerates the bundled synthetic mean-reverting fixture at
//! `data/synthetic_ou.csv` (run from the workspace root).
//!
//! The series is a slowly mean-reverting process around 1.0 with low
//! volatility, dated over consecutive business days, sized so that the
//! default desk-scale backtest plan cuts exactly five samples from it.

use chrono::{Datelike, NaiveDate, Weekday};
use ouforecast::backtest::PricedSeries;
use ouforecast::ou::{simulate_named, Noise, ProcessKind};

fn main() {
    let points = 1000;
    let values = simulate_named(
        ProcessKind::MeanReverting { rate: 0.05, level: 1.0, volatility: 0.01 },
        1.0,
        points - 1,
        Noise::Seed(20_240_809),
    )
    .expect("simulation")
    .scalars()
    .expect("univariate");

    let mut dates = Vec::with_capacity(points);
    let mut day = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    while dates.len() < points {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            dates.push(day);
        }
        day = day.succ_opt().expect("date range");
    }

    let series = PricedSeries::new(dates, values).expect("valid series");
    let mut out = Vec::new();
    series.write_csv(&mut out).expect("serialize");
    std::fs::write("data/synthetic_ou.csv", out).expect("write fixture");
    println!("wrote data/synthetic_ou.csv ({points} rows)");
}
