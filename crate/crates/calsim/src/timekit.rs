//! Timestamps, intervals and superdense tags.
//!
//! All quantities are signed 64-bit nanosecond counts. The extreme values
//! `i64::MAX` and `i64::MIN` stand for `+inf` and `-inf`. Finite additions
//! saturate into those sentinels instead of wrapping, and adding opposite
//! infinities is an error.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const NS_PER_US: i64 = 1_000;
pub const NS_PER_MS: i64 = 1_000_000;
pub const NS_PER_S: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("sum of opposite infinities is undefined")]
    UndefinedSum,
    #[error("logical delay must be nonnegative, got {0}")]
    InvalidDelay(Interval),
    #[error("microstep overflow at {0}")]
    MicrostepOverflow(Tag),
    #[error("cannot parse {what} from {text:?}")]
    Parse { what: &'static str, text: String },
}

fn sat_add(a: i64, b: i64) -> Result<i64, TimeError> {
    match (a, b) {
        (i64::MAX, i64::MIN) | (i64::MIN, i64::MAX) => Err(TimeError::UndefinedSum),
        (i64::MAX, _) | (_, i64::MAX) => Ok(i64::MAX),
        (i64::MIN, _) | (_, i64::MIN) => Ok(i64::MIN),
        _ => Ok(a.saturating_add(b)),
    }
}

/// A signed duration in nanoseconds with `+inf`/`-inf` sentinels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Interval(i64);

impl Interval {
    pub const ZERO: Interval = Interval(0);
    pub const INF: Interval = Interval(i64::MAX);
    pub const NEG_INF: Interval = Interval(i64::MIN);

    pub const fn from_ns(ns: i64) -> Self {
        Interval(ns)
    }

    pub fn from_us(us: i64) -> Self {
        Self::scaled(us, NS_PER_US)
    }

    pub fn from_ms(ms: i64) -> Self {
        Self::scaled(ms, NS_PER_MS)
    }

    pub fn from_secs(s: i64) -> Self {
        Self::scaled(s, NS_PER_S)
    }

    fn scaled(v: i64, unit: i64) -> Self {
        Interval(v.saturating_mul(unit))
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0 != i64::MAX && self.0 != i64::MIN
    }

    pub fn is_inf(self) -> bool {
        self.0 == i64::MAX
    }

    pub fn is_neg_inf(self) -> bool {
        self.0 == i64::MIN
    }

    pub fn checked_add(self, other: Interval) -> Result<Interval, TimeError> {
        sat_add(self.0, other.0).map(Interval)
    }

    pub fn checked_sub(self, other: Interval) -> Result<Interval, TimeError> {
        self.checked_add(-other)
    }

    /// Larger of two intervals; `-inf` is the neutral element.
    pub fn max_with(self, other: Interval) -> Interval {
        self.max(other)
    }
}

impl std::ops::Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        match self.0 {
            i64::MAX => Interval::NEG_INF,
            i64::MIN => Interval::INF,
            v => Interval(-v),
        }
    }
}

/// Saturating interval addition; opposite infinities are rejected.
pub fn interval_add(a: Interval, b: Interval) -> Result<Interval, TimeError> {
    a.checked_add(b)
}

/// A point on the physical time line, in nanoseconds, with `+inf`/`-inf` sentinels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const INF: Timestamp = Timestamp(i64::MAX);
    pub const NEG_INF: Timestamp = Timestamp(i64::MIN);

    pub const fn from_ns(ns: i64) -> Self {
        Timestamp(ns)
    }

    pub fn from_ms(ms: i64) -> Self {
        Timestamp(ms.saturating_mul(NS_PER_MS))
    }

    pub fn from_secs(s: i64) -> Self {
        Timestamp(s.saturating_mul(NS_PER_S))
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0 != i64::MAX && self.0 != i64::MIN
    }

    pub fn checked_add(self, d: Interval) -> Result<Timestamp, TimeError> {
        sat_add(self.0, d.0).map(Timestamp)
    }

    /// `self + d`, treating an undefined sum as `+inf`. Used only where the
    /// operands are known not to be opposite infinities.
    pub fn plus(self, d: Interval) -> Timestamp {
        self.checked_add(d).unwrap_or(Timestamp::INF)
    }

    /// The interval `self - earlier`.
    pub fn since(self, earlier: Timestamp) -> Result<Interval, TimeError> {
        Interval(self.0).checked_sub(Interval(earlier.0))
    }

    pub fn as_interval(self) -> Interval {
        Interval(self.0)
    }
}

/// Superdense logical time: a timestamp and a microstep, ordered lexicographically.
///
/// Tags whose timestamp is a sentinel always carry microstep 0, so they
/// compare as global extremes regardless of the microstep they were built with.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tag {
    time: Timestamp,
    microstep: u32,
}

impl Tag {
    pub const ZERO: Tag = Tag { time: Timestamp::ZERO, microstep: 0 };
    pub const INF: Tag = Tag { time: Timestamp::INF, microstep: 0 };
    pub const NEG_INF: Tag = Tag { time: Timestamp::NEG_INF, microstep: 0 };

    pub fn new(time: Timestamp, microstep: u32) -> Tag {
        if time.is_finite() {
            Tag { time, microstep }
        } else {
            Tag { time, microstep: 0 }
        }
    }

    pub fn at(time: Timestamp) -> Tag {
        Tag::new(time, 0)
    }

    /// The timestamp 𝒯(g).
    pub fn time(self) -> Timestamp {
        self.time
    }

    pub fn microstep(self) -> u32 {
        self.microstep
    }

    /// The smallest tag strictly greater than `self`.
    pub fn successor(self) -> Tag {
        if !self.time.is_finite() {
            return self;
        }
        match self.microstep.checked_add(1) {
            Some(m) => Tag::new(self.time, m),
            None => Tag::at(self.time.plus(Interval::from_ns(1))),
        }
    }

    /// Applies an optional connection delay: `None` keeps the tag, `Some(d)` is [`tag_delay`].
    pub fn delayed(self, after: Option<Interval>) -> Result<Tag, TimeError> {
        match after {
            None => Ok(self),
            Some(d) => tag_delay(self, d),
        }
    }
}

/// Delays a tag by a nonnegative logical interval.
///
/// A positive delay lands on microstep 0 of the shifted timestamp; a zero
/// delay advances the microstep.
pub fn tag_delay(g: Tag, d: Interval) -> Result<Tag, TimeError> {
    if d < Interval::ZERO {
        return Err(TimeError::InvalidDelay(d));
    }
    if !g.time.is_finite() {
        return Ok(g);
    }
    if d == Interval::ZERO {
        let m = g.microstep.checked_add(1).ok_or(TimeError::MicrostepOverflow(g))?;
        return Ok(Tag::new(g.time, m));
    }
    Ok(Tag::at(g.time.checked_add(d)?))
}

pub fn tag_compare(a: Tag, b: Tag) -> Ordering {
    a.cmp(&b)
}

fn fmt_raw(v: i64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match v {
        i64::MAX => f.write_str("inf"),
        i64::MIN => f.write_str("-inf"),
        v => write!(f, "{v}"),
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if !self.is_finite() {
            return fmt_raw(v, f);
        }
        if v == 0 {
            return f.write_str("0");
        }
        for (unit, name) in [(NS_PER_S, "s"), (NS_PER_MS, "ms"), (NS_PER_US, "us")] {
            if v % unit == 0 {
                return write!(f, "{}{}", v / unit, name);
            }
        }
        write!(f, "{v}ns")
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_raw(self.0, f)
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{self}")
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.time, self.microstep)
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_err(what: &'static str, text: &str) -> TimeError {
    TimeError::Parse { what, text: text.to_string() }
}

/// Parses a duration such as `50ms`, `1.5s`, `-20us`, `7` (nanoseconds), `inf` or `-inf`.
fn parse_duration_ns(text: &str) -> Result<i64, TimeError> {
    let s = text.trim();
    match s {
        "inf" | "+inf" => return Ok(i64::MAX),
        "-inf" => return Ok(i64::MIN),
        _ => {}
    }
    let split = s
        .find(|c: char| c.is_ascii_alphabetic())
        .unwrap_or(s.len());
    let (num, unit) = (s[..split].trim(), s[split..].trim());
    let scale = match unit {
        "" | "ns" | "nsec" => 1,
        "us" | "usec" => NS_PER_US,
        "ms" | "msec" => NS_PER_MS,
        "s" | "sec" | "secs" => NS_PER_S,
        _ => return Err(parse_err("duration", text)),
    };
    let (neg, digits) = match num.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, num.strip_prefix('+').unwrap_or(num)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(parse_err("duration", text));
    }
    let all_digits = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return Err(parse_err("duration", text));
    }
    let whole: i128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| parse_err("duration", text))? };
    let mut total = whole * scale as i128;
    if !frac_part.is_empty() {
        let frac: i128 = frac_part.parse().map_err(|_| parse_err("duration", text))?;
        let denom = 10i128.pow(frac_part.len() as u32);
        let scaled = frac * scale as i128;
        if scaled % denom != 0 {
            return Err(parse_err("duration", text));
        }
        total += scaled / denom;
    }
    if neg {
        total = -total;
    }
    if total >= i64::MAX as i128 || total <= i64::MIN as i128 {
        return Err(parse_err("duration", text));
    }
    Ok(total as i64)
}

impl FromStr for Interval {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_duration_ns(s).map(Interval)
    }
}

impl FromStr for Timestamp {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_duration_ns(s).map(Timestamp)
    }
}

impl FromStr for Tag {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| parse_err("tag", s))?;
        let (t, m) = inner.split_once(',').ok_or_else(|| parse_err("tag", s))?;
        let time: Timestamp = t.trim().parse()?;
        let microstep: u32 = m.trim().parse().map_err(|_| parse_err("tag", s))?;
        Ok(Tag::new(time, microstep))
    }
}

struct DurationVisitor(&'static str);

impl<'de> Visitor<'de> for DurationVisitor {
    type Value = i64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a {} such as \"50ms\", \"inf\" or an integer nanosecond count", self.0)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<i64, E> {
        Ok(v)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<i64, E> {
        i64::try_from(v).map_err(|_| E::custom("duration out of range"))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<i64, E> {
        parse_duration_ns(v).map_err(E::custom)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(DurationVisitor("duration")).map(Interval)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.as_interval())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(DurationVisitor("timestamp")).map(Timestamp)
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ns(v: i64) -> Interval {
        Interval::from_ns(v)
    }

    #[test]
    fn finite_plus_inf_is_inf() {
        assert_eq!(interval_add(ns(5), Interval::INF), Ok(Interval::INF));
        assert_eq!(interval_add(ns(5), Interval::NEG_INF), Ok(Interval::NEG_INF));
        assert_eq!(interval_add(Interval::INF, Interval::INF), Ok(Interval::INF));
        assert_eq!(interval_add(Interval::NEG_INF, Interval::NEG_INF), Ok(Interval::NEG_INF));
    }

    #[test]
    fn zero_is_additive_identity() {
        assert_eq!(interval_add(Interval::ZERO, Interval::ZERO), Ok(Interval::ZERO));
    }

    #[test]
    fn overflow_saturates() {
        let big = ns(i64::MAX - 2);
        assert_eq!(interval_add(big, ns(10)), Ok(Interval::INF));
        assert_eq!(interval_add(-big, ns(-10)), Ok(Interval::NEG_INF));
    }

    #[test]
    fn opposite_infinities_are_undefined() {
        assert_eq!(interval_add(Interval::INF, Interval::NEG_INF), Err(TimeError::UndefinedSum));
        assert_eq!(interval_add(Interval::NEG_INF, Interval::INF), Err(TimeError::UndefinedSum));
        assert_eq!(Interval::INF.checked_sub(Interval::INF), Err(TimeError::UndefinedSum));
    }

    #[test]
    fn tag_delay_rules() {
        let g = Tag::at(Timestamp::from_ms(100));
        assert_eq!(tag_delay(g, Interval::from_ms(100)), Ok(Tag::at(Timestamp::from_ms(200))));
        assert_eq!(tag_delay(g, Interval::ZERO), Ok(Tag::new(Timestamp::from_ms(100), 1)));
        assert_eq!(tag_delay(Tag::INF, Interval::from_ms(5)), Ok(Tag::INF));
        assert_eq!(tag_delay(g, ns(-1)), Err(TimeError::InvalidDelay(ns(-1))));
        let stepped = Tag::new(Timestamp::from_ms(1), 7);
        assert_eq!(tag_delay(stepped, ns(1)).unwrap().microstep(), 0);
    }

    #[test]
    fn tag_order_is_lexicographic() {
        let t = |a: i64, m: u32| Tag::new(Timestamp::from_ns(a), m);
        assert_eq!(tag_compare(t(5, 0), t(5, 1)), Ordering::Less);
        assert_eq!(tag_compare(t(5, 9), t(6, 0)), Ordering::Less);
        assert_eq!(tag_compare(t(5, 2), t(5, 2)), Ordering::Equal);
    }

    #[test]
    fn sentinel_tags_ignore_microstep() {
        let hi = Tag::new(Timestamp::INF, 42);
        assert_eq!(hi, Tag::INF);
        assert!(Tag::new(Timestamp::from_ns(i64::MAX - 1), u32::MAX) < hi);
        assert!(Tag::new(Timestamp::NEG_INF, 9) < Tag::new(Timestamp::from_ns(i64::MIN + 1), 0));
    }

    #[test]
    fn rendering() {
        assert_eq!(Tag::new(Timestamp::from_ms(3), 2).to_string(), "(3000000, 2)");
        assert_eq!(Tag::INF.to_string(), "(inf, 0)");
        assert_eq!(Tag::NEG_INF.to_string(), "(-inf, 0)");
        assert_eq!(Interval::from_ms(50).to_string(), "50ms");
        assert_eq!(ns(1500).to_string(), "1500ns");
        assert_eq!(Interval::NEG_INF.to_string(), "-inf");
    }

    #[test]
    fn parsing() {
        assert_eq!("50ms".parse::<Interval>(), Ok(Interval::from_ms(50)));
        assert_eq!("1.5s".parse::<Interval>(), Ok(Interval::from_ms(1500)));
        assert_eq!("-20us".parse::<Interval>(), Ok(Interval::from_us(-20)));
        assert_eq!("7".parse::<Interval>(), Ok(ns(7)));
        assert_eq!("inf".parse::<Interval>(), Ok(Interval::INF));
        assert_eq!("-inf".parse::<Interval>(), Ok(Interval::NEG_INF));
        assert!("3 parsecs".parse::<Interval>().is_err());
        assert!("1.0000000001s".parse::<Interval>().is_err());
        assert_eq!("(inf, 0)".parse::<Tag>(), Ok(Tag::INF));
        assert_eq!("(12, 3)".parse::<Tag>(), Ok(Tag::new(Timestamp::from_ns(12), 3)));
    }

    fn in_range() -> impl Strategy<Value = i64> {
        -(1i64 << 60)..(1i64 << 60)
    }

    fn any_tag() -> impl Strategy<Value = Tag> {
        (in_range(), 0u32..4).prop_map(|(t, m)| Tag::new(Timestamp::from_ns(t), m))
    }

    proptest! {
        #[test]
        fn addition_commutes(a in any::<i64>(), b in any::<i64>()) {
            prop_assert_eq!(interval_add(ns(a), ns(b)), interval_add(ns(b), ns(a)));
        }

        #[test]
        fn addition_associates_without_saturation(a in in_range(), b in in_range(), c in in_range()) {
            let left = interval_add(interval_add(ns(a), ns(b)).unwrap(), ns(c)).unwrap();
            let right = interval_add(ns(a), interval_add(ns(b), ns(c)).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            prop_assert_eq!(left.as_ns(), a + b + c);
        }

        #[test]
        fn tag_delay_is_monotone(g1 in any_tag(), g2 in any_tag(), d in 0i64..(1 << 40)) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(tag_delay(lo, ns(d)).unwrap() <= tag_delay(hi, ns(d)).unwrap());
        }

        #[test]
        fn positive_delay_shifts_timestamp(g in any_tag(), d in 1i64..(1 << 40)) {
            let out = tag_delay(g, ns(d)).unwrap();
            prop_assert_eq!(out.time(), g.time().checked_add(ns(d)).unwrap());
        }

        #[test]
        fn display_parse_round_trip(v in any::<i64>()) {
            prop_assert_eq!(ns(v).to_string().parse::<Interval>(), Ok(ns(v)));
        }
    }
}
