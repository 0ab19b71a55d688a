//! Event-by-event checks of the monotone couplings.

use std::io::Write;

use longjump::coupling::{sandwich_bounded, sandwich_unbounded, Class, ColorMove, SiteLawCache};
use longjump::{ColoredSim, Colors, Thermo, TwoClassSim};

use super::Run;
use crate::stats::{Report, Summary};
use crate::Result;

const DEFAULT_EVENTS: u64 = 1_000_000;
/// Full-lattice comparison against the shadow copy this often.
const SWEEP_EVERY: u64 = 1 << 14;

/// How a layer changed at the jump's endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Change {
    Same,
    Moved,
    Broken,
}

fn change(before: (u32, u32), after: (u32, u32)) -> Change {
    if before == after {
        Change::Same
    } else if before.0 >= 1 && after == (before.0 - 1, before.1 + 1) {
        Change::Moved
    } else {
        Change::Broken
    }
}

/// Named layers of a colored state at one site.
fn layers(c: &Colors, x: usize) -> [u32; 4] {
    let (b, g, r, w) = (c.blue[x], c.green[x], c.red[x], c.white[x]);
    [b, b + g, b + g + r, b + g + w]
}

/// Checks one colored event against the state before it. Returns a
/// description of every broken rule.
fn check_color_event(before: &Colors, after: &Colors, e: &ColorMove, three_color: bool, totals: &[u64; 4]) -> Vec<String> {
    let (x, y) = (e.from, e.to);
    let (lx0, ly0, lx1, ly1) = (layers(before, x), layers(before, y), layers(after, x), layers(after, y));
    let ch = |i: usize| change((lx0[i], ly0[i]), (lx1[i], ly1[i]));
    let mut bad = Vec::new();
    let blue = e.class == Class::Blue;
    let expect = |moved: bool| if moved { Change::Moved } else { Change::Same };
    let mut rules = vec![
        ("B", 0, expect(blue)),
        ("B+G+R", 2, expect(e.class != Class::White)),
        ("B+G+W", 3, expect(e.class != Class::Red)),
    ];
    if three_color {
        rules.push(("B+G", 1, expect(e.class != Class::Red)));
    }
    for (name, i, want) in rules {
        if ch(i) != want {
            bad.push(format!("{name} {:?} on {:?} event {x}->{y}", ch(i), e.class));
        }
    }
    for s in [x, y] {
        if after.red[s] > 0 && after.white[s] > 0 {
            bad.push(format!("red and white share site {s}"));
        }
        if three_color && after.white[s] > 0 {
            bad.push(format!("white particle at {s} in a three-color run"));
        }
        // a wrapped counter shows up as more particles than exist
        for (v, t) in [after.blue[s], after.green[s], after.red[s], after.white[s]].iter().zip(totals) {
            if *v as u64 > *t {
                bad.push(format!("count {v} at site {s} exceeds {t}"));
            }
        }
    }
    bad
}

fn totals(c: &Colors) -> [u64; 4] {
    let s = |v: &[u32]| v.iter().map(|&k| k as u64).sum::<u64>();
    [s(&c.blue), s(&c.green), s(&c.red), s(&c.white)]
}

/// Marginal particle numbers `B`, `B+G+R`, `B+G+W`.
fn conserved(c: &Colors) -> [u64; 3] {
    let [b, g, r, w] = totals(c);
    [b, b + g + r, b + g + w]
}

struct ColorAudit {
    events: u64,
    violations: u64,
    first: Vec<String>,
    counts: longjump::coupling::EventCounts,
}

/// Runs `events` steps, checking every one against a shadow copy.
fn audit_colored(sim: &mut ColoredSim, events: u64, three_color: bool) -> ColorAudit {
    let mut shadow = sim.colors().clone();
    let marginals = conserved(&shadow);
    let bound = {
        let t = totals(&shadow);
        let all = t.iter().sum::<u64>();
        [all; 4]
    };
    let mut violations = 0;
    let mut first = Vec::new();
    let mut record = |what: Vec<String>, violations: &mut u64| {
        if !what.is_empty() {
            *violations += 1;
            if first.len() < 5 {
                first.extend(what);
            }
        }
    };
    let mut done = 0;
    while done < events {
        let e = match sim.step_until(f64::INFINITY) {
            Ok(step) => match step.event {
                Some(e) => e,
                None => break,
            },
            Err(err) => {
                record(vec![err.to_string()], &mut violations);
                break;
            }
        };
        done += 1;
        let now = sim.colors();
        record(check_color_event(&shadow, now, &e, three_color, &bound), &mut violations);
        for s in [e.from, e.to] {
            shadow.blue[s] = now.blue[s];
            shadow.green[s] = now.green[s];
            shadow.red[s] = now.red[s];
            shadow.white[s] = now.white[s];
        }
        if done % SWEEP_EVERY == 0 || done == events {
            let mut bad = Vec::new();
            if shadow != *now {
                bad.push(format!("sites away from the jump changed by event {done}"));
            }
            if conserved(now) != marginals {
                bad.push(format!("marginal particle numbers {:?} != {:?}", conserved(now), marginals));
            }
            record(bad, &mut violations);
            shadow = now.clone();
        }
    }
    ColorAudit {
        events: done,
        violations,
        first,
        counts: sim.counts(),
    }
}

/// Two-class run: `xi1` must make a single move exactly on first-class
/// events and `xi1 + delta` on every event.
fn audit_two_class(sim: &mut TwoClassSim, events: u64) -> (u64, u64, Vec<String>) {
    let mut first = sim.first().to_vec();
    let mut upper = sim.upper();
    let total: u64 = upper.iter().map(|&k| k as u64).sum();
    let mut violations = 0;
    let mut notes = Vec::new();
    let mut done = 0;
    while done < events {
        let Some(m) = sim.step() else { break };
        done += 1;
        let (x, y) = (m.from, m.to);
        let now_first = sim.first();
        let now_second = sim.second();
        let now_upper = |s: usize| now_first[s] + now_second[s];
        let c1 = change((first[x], first[y]), (now_first[x], now_first[y]));
        let c2 = change((upper[x], upper[y]), (now_upper(x), now_upper(y)));
        let want1 = if m.first_class { Change::Moved } else { Change::Same };
        let mut bad = Vec::new();
        if c1 != want1 || c2 != Change::Moved {
            bad.push(format!("event {done} {x}->{y}: xi1 {c1:?}, xi2 {c2:?}"));
        }
        if [x, y].iter().any(|&s| now_second[s] as u64 > total || now_first[s] > now_upper(s)) {
            bad.push(format!("ordering broken at event {done}"));
        }
        if !bad.is_empty() {
            violations += 1;
            if notes.len() < 5 {
                notes.extend(bad);
            }
        }
        for s in [x, y] {
            first[s] = now_first[s];
            upper[s] = now_upper(s);
        }
        if done % SWEEP_EVERY == 0 || done == events {
            if first != sim.first() || upper != sim.upper() {
                violations += 1;
                notes.push(format!("sites away from the jump changed by event {done}"));
            }
            first = sim.first().to_vec();
            upper = sim.upper();
        }
    }
    (done, violations, notes)
}

pub(crate) fn coupling_order(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let p = &cfg.params;
    let n = cfg.scales[0];
    let events = p.events.unwrap_or(DEFAULT_EVENTS);
    let (window, lower, upper) = (p.window.unwrap_or(0.2), p.lower.unwrap_or(0.5), p.upper.unwrap_or(1.5));
    let rate = run.rate()?;
    let kernel = run.kernel(n)?;
    let torus = kernel.torus();
    let theta = kernel.theta(n as f64);
    let profile = cfg.profile();
    let mut laws = SiteLawCache::new(Thermo::new(rate.clone()));
    let mut report = Report::new(&cfg.experiment);
    let mut csv = run.out.create("events.csv")?;
    writeln!(csv, "system,events,violations,blue,green,red,white")?;

    let start = sandwich_bounded(profile, window, lower, upper, &mut laws, torus, n as f64, &mut run.rng("coupling/init", 0))?;
    let second: Vec<u32> = (0..n).map(|x| start.green[x] + start.red[x]).collect();
    let mut two = TwoClassSim::new(
        kernel.clone(),
        rate.clone(),
        start.blue.clone(),
        second,
        theta,
        n as f64,
        run.sim_seed("coupling/two", 0),
    )?;
    let (done, bad, notes) = audit_two_class(&mut two, events);
    let [m1, m2] = two.moves();
    writeln!(csv, "two_class,{done},{bad},{m1},{m2},0,0")?;
    report.check(
        "two_class_order",
        bad == 0 && done == events,
        format!("{bad} violations in {done} events{}", suffix(&notes)),
    );

    let mut three = ColoredSim::three_color(
        kernel.clone(),
        rate.clone(),
        start.clone(),
        theta,
        n as f64,
        run.sim_seed("coupling/three", 0),
    )?;
    let audit = audit_colored(&mut three, events, true);
    let c = audit.counts;
    writeln!(csv, "three_color,{},{},{},{},{},{}", audit.events, audit.violations, c.blue, c.green, c.red, c.white)?;
    report.check(
        "three_color_order",
        audit.violations == 0 && audit.events == events,
        format!("{} violations in {} events{}", audit.violations, audit.events, suffix(&audit.first)),
    );
    let mut w = run.out.create("three_color_final.csv")?;
    three.colors().write_csv(&mut w, three.clock().macro_time(), true)?;
    w.flush()?;

    // four-color with no third class against the two-class process
    let per = (events / cfg.replicas as u64).max(1);
    let shares = run.replicas(cfg.replicas, |r| {
        let init = sandwich_bounded(profile, window, lower, upper, &mut laws, torus, n as f64, &mut run.rng("coupling/reduction", r))?;
        let mut colors = Colors::empty(n);
        colors.blue = init.blue.clone();
        colors.green = (0..n).map(|x| init.green[x] + init.red[x]).collect();
        let mut two = TwoClassSim::new(
            kernel.clone(),
            rate.clone(),
            colors.blue.clone(),
            colors.green.clone(),
            theta,
            n as f64,
            run.sim_seed("coupling/reduction/two", r),
        )?;
        let mut four = ColoredSim::new(kernel.clone(), rate.clone(), colors, theta, n as f64, run.sim_seed("coupling/reduction/four", r))?;
        for _ in 0..per {
            two.step();
            four.step_until(f64::INFINITY)?;
        }
        let c = four.counts();
        let third = c.red + c.white;
        Ok((two.moves()[0] as f64 / per as f64, c.blue as f64 / per as f64, third))
    })?;
    let mut w = run.out.create("reduction.csv")?;
    writeln!(w, "replica,two_class_first_share,four_color_blue_share,third_class_events")?;
    for (r, (a, b, t)) in shares.iter().enumerate() {
        writeln!(w, "{r},{a},{b},{t}")?;
    }
    w.flush()?;
    let a = Summary::of(&shares.iter().map(|s| s.0).collect::<Vec<_>>());
    let b = Summary::of(&shares.iter().map(|s| s.1).collect::<Vec<_>>());
    let third: u64 = shares.iter().map(|s| s.2).sum();
    let z = (a.mean - b.mean) / a.se.hypot(b.se);
    report.check(
        "reduction_to_two_class",
        z.abs() <= 3.0 && third == 0,
        format!(
            "first-class share {:.5} +- {:.5} vs blue share {:.5} +- {:.5} (z = {z:.2}), {third} third-class events",
            a.mean, a.se, b.mean, b.se
        ),
    );
    csv.flush()?;
    Ok(report)
}

pub(crate) fn four_color(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let p = &cfg.params;
    let n = cfg.scales[0];
    let events = p.events.unwrap_or(DEFAULT_EVENTS);
    let cut = p.cut.unwrap_or(1.0);
    let rate = run.rate()?;
    let kernel = run.kernel(n)?;
    let theta = kernel.theta(n as f64);
    let mut laws = SiteLawCache::new(Thermo::new(rate.clone()));
    let start = sandwich_unbounded(cfg.profile(), cut, &mut laws, kernel.torus(), n as f64, &mut run.rng("four/init", 0))?;
    let mut w = run.out.create("four_color_initial.csv")?;
    start.write_csv(&mut w, 0.0, true)?;
    w.flush()?;
    let mut sim = ColoredSim::new(kernel, rate, start, theta, n as f64, run.sim_seed("four/dyn", 0))?;
    let audit = audit_colored(&mut sim, events, false);
    let c = audit.counts;
    let mut w = run.out.create("events.csv")?;
    writeln!(w, "events,violations,blue,green,red,white,red_annihilations,white_annihilations")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        audit.events, audit.violations, c.blue, c.green, c.red, c.white, c.red_annihilations, c.white_annihilations
    )?;
    w.flush()?;
    let mut w = run.out.create("four_color_final.csv")?;
    sim.colors().write_csv(&mut w, sim.clock().macro_time(), true)?;
    w.flush()?;
    let mut report = Report::new(&cfg.experiment);
    report.check(
        "four_color_invariants",
        audit.violations == 0 && audit.events == events,
        format!("{} violations in {} events{}", audit.violations, audit.events, suffix(&audit.first)),
    );
    report.note(format!(
        "annihilations: {} red, {} white; third-class moves: {} red, {} white",
        c.red_annihilations, c.white_annihilations, c.red, c.white
    ));
    Ok(report)
}

fn suffix(notes: &[String]) -> String {
    if notes.is_empty() {
        String::new()
    } else {
        format!(": {}", notes.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn change_classification() {
        assert_eq!(change((2, 0), (2, 0)), Change::Same);
        assert_eq!(change((2, 0), (1, 1)), Change::Moved);
        assert_eq!(change((2, 0), (1, 0)), Change::Broken);
        assert_eq!(change((0, 0), (u32::MAX, 1)), Change::Broken);
    }

    #[test]
    fn a_corrupted_event_is_flagged() {
        let mut before = Colors::empty(4);
        before.blue[0] = 1;
        before.red[0] = 1;
        before.white[2] = 1;
        let mut after = before.clone();
        after.red[0] = 0;
        after.red[2] = 1;
        let e = ColorMove {
            class: Class::Red,
            from: 0,
            to: 2,
            annihilated: false,
        };
        let bound = [3; 4];
        let bad = check_color_event(&before, &after, &e, false, &bound);
        assert!(bad.iter().any(|b| b.contains("share")), "{bad:?}");
        // the honest annihilation passes
        let mut ok = before.clone();
        ok.red[0] = 0;
        ok.white[2] = 0;
        ok.green[2] = 1;
        let e = ColorMove { annihilated: true, ..e };
        assert!(check_color_event(&before, &ok, &e, false, &bound).is_empty());
    }
}
