//! Decentralized coordination: safe-to-advance offsets and local policies.
//!
//! A federate advances to tag `g` once its clock reaches `T(g) + STA` and
//! treats a network input `p` as absent at `g` once its clock reaches
//! `T(g) + STA + STAA_p` without a message.

use crate::engine::{Gate, Wait};
use crate::fedmodel::{derive_offsets, ActionKind, DerivedOffsets, ExecBounds, FederationSpec, ModelError, SpacingPolicy};
use crate::maxplus::MaxPlusMatrix;
use crate::timekit::{Interval, Tag, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpacingOutcome {
    Schedule(Tag),
    /// Overwrite the payload of the pending event at this tag.
    Replace(Tag),
    Drop,
}

/// Applies an action's minimum spacing to a request for tag `request`.
///
/// `last` is the tag of the previous event on the action and `pending` is
/// that tag again when the event has not been processed yet. Logical actions
/// only enforce strictly increasing tags.
pub fn apply_min_spacing(kind: &ActionKind, pending: Option<Tag>, request: Tag, last: Option<Tag>) -> SpacingOutcome {
    let after_last = |t: Tag| last.map_or(t, |l| t.max(l.successor()));
    let (spacing, policy) = match *kind {
        ActionKind::Physical { min_spacing, policy } => (min_spacing, policy),
        ActionKind::Logical { .. } => return SpacingOutcome::Schedule(after_last(request)),
    };
    let Some(l) = last else {
        return SpacingOutcome::Schedule(request);
    };
    let earliest = l.time().plus(spacing);
    if request.time() >= earliest {
        return SpacingOutcome::Schedule(after_last(request));
    }
    match policy {
        SpacingPolicy::Drop => SpacingOutcome::Drop,
        SpacingPolicy::Replace if pending.is_some() => SpacingOutcome::Replace(l),
        SpacingPolicy::Replace | SpacingPolicy::Defer => SpacingOutcome::Schedule(after_last(Tag::at(earliest))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeadlineCheck {
    Met,
    /// Lateness of the clock past the tag timestamp.
    Missed(Interval),
}

/// A deadline is missed when `clock - T(tag)` strictly exceeds `bound`.
pub fn check_deadline(bound: Interval, tag: Tag, clock: Timestamp) -> DeadlineCheck {
    match clock.since(tag.time()) {
        Ok(lateness) if lateness > bound => DeadlineCheck::Missed(lateness),
        _ => DeadlineCheck::Met,
    }
}

/// Resolves the offsets a decentralized run uses.
///
/// Offsets are derived from the bounds and then overlaid with any values set
/// on the federation. If derivation fails, explicit values are accepted only
/// when every federate and every logically connected input has one.
pub fn resolve_offsets(
    spec: &FederationSpec,
    latency: &MaxPlusMatrix,
    clock_error: &MaxPlusMatrix,
    exec: &ExecBounds,
) -> Result<DerivedOffsets, ModelError> {
    let res = spec.resolve()?;
    let mut offsets = match derive_offsets(spec, latency, clock_error, exec) {
        Ok(d) => d,
        Err(e) => {
            let complete = spec.federates.iter().enumerate().all(|(f, fed)| {
                fed.sta.is_some() && res.logical_inputs(f).iter().all(|&p| fed.inputs[p].staa.is_some())
            });
            if !complete {
                return Err(e);
            }
            DerivedOffsets { sta: vec![Interval::ZERO; spec.federates.len()], staa: Default::default() }
        }
    };
    for (f, fed) in spec.federates.iter().enumerate() {
        if let Some(s) = fed.sta {
            offsets.sta[f] = s;
        }
        for p in res.logical_inputs(f) {
            if let Some(s) = fed.inputs[p].staa {
                offsets.staa.insert((f, p), s);
            } else {
                offsets.staa.entry((f, p)).or_insert(Interval::ZERO);
            }
        }
    }
    Ok(offsets)
}

/// Gate for one federate under decentralized coordination.
#[derive(Debug, Clone)]
pub struct DecentralGate<'a> {
    pub clock: Timestamp,
    pub federate: usize,
    pub offsets: &'a DerivedOffsets,
}

impl DecentralGate<'_> {
    fn until(&self, threshold: Timestamp) -> Wait {
        if self.clock >= threshold {
            Wait::Ready
        } else {
            Wait::Until(threshold)
        }
    }
}

impl Gate for DecentralGate<'_> {
    fn advance(&self, tag: Tag) -> Wait {
        self.until(tag.time().plus(self.offsets.sta[self.federate]))
    }

    fn port(&self, input: usize, tag: Tag) -> Wait {
        let sta = self.offsets.sta[self.federate];
        self.until(tag.time().plus(sta).plus(self.offsets.staa_of(self.federate, input)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: i64) -> Timestamp {
        Timestamp::from_ms(v)
    }

    fn phys(spacing: i64, policy: SpacingPolicy) -> ActionKind {
        ActionKind::Physical { min_spacing: Interval::from_ms(spacing), policy }
    }

    #[test]
    fn spacing_policies() {
        let last = Some(Tag::at(ms(100)));
        let req = Tag::at(ms(105));
        assert_eq!(apply_min_spacing(&phys(10, SpacingPolicy::Drop), None, req, last), SpacingOutcome::Drop);
        assert_eq!(
            apply_min_spacing(&phys(10, SpacingPolicy::Defer), None, req, last),
            SpacingOutcome::Schedule(Tag::at(ms(110)))
        );
        assert_eq!(apply_min_spacing(&phys(10, SpacingPolicy::Replace), last, req, last), SpacingOutcome::Replace(Tag::at(ms(100))));
        assert_eq!(
            apply_min_spacing(&phys(10, SpacingPolicy::Replace), None, req, last),
            SpacingOutcome::Schedule(Tag::at(ms(110)))
        );
        assert_eq!(
            apply_min_spacing(&phys(10, SpacingPolicy::Drop), None, Tag::at(ms(110)), last),
            SpacingOutcome::Schedule(Tag::at(ms(110)))
        );
        assert_eq!(
            apply_min_spacing(&phys(0, SpacingPolicy::Drop), None, Tag::at(ms(100)), last),
            SpacingOutcome::Schedule(Tag::new(ms(100), 1))
        );
    }

    #[test]
    fn deadline_is_strict() {
        let g = Tag::at(ms(10));
        assert_eq!(check_deadline(Interval::from_ms(5), g, ms(15)), DeadlineCheck::Met);
        assert_eq!(check_deadline(Interval::from_ms(5), g, ms(16)), DeadlineCheck::Missed(Interval::from_ms(6)));
        assert_eq!(check_deadline(Interval::from_ms(5), g, ms(2)), DeadlineCheck::Met);
    }

    #[test]
    fn gate_thresholds() {
        let offsets = DerivedOffsets {
            sta: vec![Interval::from_ms(3)],
            staa: [((0, 0), Interval::from_ms(4))].into_iter().collect(),
        };
        let g = Tag::at(ms(10));
        let gate = DecentralGate { clock: ms(12), federate: 0, offsets: &offsets };
        assert_eq!(gate.advance(g), Wait::Until(ms(13)));
        assert_eq!(gate.port(0, g), Wait::Until(ms(17)));
        let gate = DecentralGate { clock: ms(17), federate: 0, offsets: &offsets };
        assert_eq!(gate.advance(g), Wait::Ready);
        assert_eq!(gate.port(0, g), Wait::Ready);
    }

    proptest! {
        #[test]
        fn spaced_tags_increase_and_respect_spacing(
            reqs in proptest::collection::vec(0i64..1_000, 1..30),
            spacing in 0i64..50,
        ) {
            let kind = phys(spacing, SpacingPolicy::Defer);
            let mut last: Option<Tag> = None;
            let mut sorted = reqs.clone();
            sorted.sort_unstable();
            for r in sorted {
                let SpacingOutcome::Schedule(t) = apply_min_spacing(&kind, None, Tag::at(ms(r)), last) else {
                    panic!("defer always schedules");
                };
                if let Some(l) = last {
                    prop_assert!(t > l);
                    prop_assert!(t.time() >= l.time().plus(Interval::from_ms(spacing)));
                }
                prop_assert!(t.time() >= ms(r));
                last = Some(t);
            }
        }
    }
}
