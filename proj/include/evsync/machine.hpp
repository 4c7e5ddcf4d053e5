#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "evsync/progdsl.hpp"

// Executable semantics of the synchronization protocol's abstract state
// machine: compilation of select-programs, the transition rules, action
// denotations, the reachability invariants, bounded state-space
// exploration, and a bounded bisimulation check between a program's
// reduction semantics and its compiled machine.

namespace evsync::model {

using ChannelId = std::uint32_t;

struct MAction {
    ChannelId chan = 0;
    bool output = false;

    friend bool operator==(const MAction& a, const MAction& b) {
        return a.chan == b.chan && a.output == b.output;
    }
    friend bool operator<(const MAction& a, const MAction& b) {
        return a.chan != b.chan ? a.chan < b.chan : a.output < b.output;
    }
};

/// Multiset of released actions, kept sorted.
using Denotation = std::vector<MAction>;

struct ChannelTable {
    std::vector<std::string> names; // sorted; index = ChannelId

    ChannelId id_of(const std::string& name) const {
        auto it = std::lower_bound(names.begin(), names.end(), name);
        return static_cast<ChannelId>(it - names.begin());
    }
};

enum class Rule : std::uint8_t {
    I, II_i, II_ii, III_i, III_ii, III_iii, III_iv, IV_i, IV_ii
};

inline const char* rule_name(Rule r) {
    switch (r) {
        case Rule::I: return "I";
        case Rule::II_i: return "II.i";
        case Rule::II_ii: return "II.ii";
        case Rule::III_i: return "III.i";
        case Rule::III_ii: return "III.ii";
        case Rule::III_iii: return "III.iii";
        case Rule::III_iv: return "III.iv";
        case Rule::IV_i: return "IV.i";
        case Rule::IV_ii: return "IV.ii";
    }
    return "?";
}

enum class Kind : std::uint8_t {
    PointBound, // p pending on its channel
    Candidate,  // p matched, awaiting its synchronizer's verdict
    Released,   // a bare action (the observable outcome)
    ChanFree,
    ChanMatch,  // channel busy with input point p and output point q
    SyncOpen,
    SyncClosed,
    Selected,   // synchronizer s approved point p
    Rejected,   // point p refused
    Done,       // commit of p confirmed to s
    Retry       // s canceled; reboots with fresh points
};

struct SubState {
    Kind kind;
    std::uint32_t p = 0; // point (input side for ChanMatch)
    std::uint32_t q = 0; // output-side point for ChanMatch
    std::uint32_t s = 0; // synchronizer
    ChannelId ch = 0;
    bool out = false; // action polarity for PointBound/Released

    static SubState point_bound(std::uint32_t p, MAction a) {
        return {Kind::PointBound, p, 0, 0, a.chan, a.output};
    }
    static SubState candidate(std::uint32_t p) { return {Kind::Candidate, p}; }
    static SubState released(MAction a) {
        return {Kind::Released, 0, 0, 0, a.chan, a.output};
    }
    static SubState chan_free(ChannelId ch) {
        return {Kind::ChanFree, 0, 0, 0, ch};
    }
    static SubState chan_match(ChannelId ch, std::uint32_t p, std::uint32_t q) {
        return {Kind::ChanMatch, p, q, 0, ch};
    }
    static SubState sync_open(std::uint32_t s) { return {Kind::SyncOpen, 0, 0, s}; }
    static SubState sync_closed(std::uint32_t s) { return {Kind::SyncClosed, 0, 0, s}; }
    static SubState selected(std::uint32_t s, std::uint32_t p) {
        return {Kind::Selected, p, 0, s};
    }
    static SubState rejected(std::uint32_t p) { return {Kind::Rejected, p}; }
    static SubState done(std::uint32_t s, std::uint32_t p) {
        return {Kind::Done, p, 0, s};
    }
    static SubState retry(std::uint32_t s) { return {Kind::Retry, 0, 0, s}; }
};

struct MachineState {
    std::uint32_t nchan = 0;
    std::vector<SubState> subs;
    std::vector<std::vector<std::uint32_t>> sync_dom;          // sync -> points
    std::vector<std::pair<std::uint32_t, MAction>> point_info; // point -> (sync, action)

    MAction action_of(std::uint32_t p) const { return point_info[p].second; }
    std::uint32_t owner_of(std::uint32_t p) const { return point_info[p].first; }
};

// ---------------------------------------------------------------------------
// Compilation and denotations

inline ChannelTable channel_table(const dsl::Program& p) {
    ChannelTable t;
    for (const auto& proc : p.procs)
        for (const auto& a : proc.actions) t.names.push_back(a.channel);
    std::sort(t.names.begin(), t.names.end());
    t.names.erase(std::unique(t.names.begin(), t.names.end()), t.names.end());
    return t;
}

inline MachineState compile(const dsl::Program& p, const ChannelTable& table) {
    MachineState st;
    st.nchan = static_cast<std::uint32_t>(table.names.size());
    for (ChannelId c = 0; c < st.nchan; ++c)
        st.subs.push_back(SubState::chan_free(c));
    for (const auto& proc : p.procs) {
        if (!proc.is_select) {
            const dsl::Action& a = proc.actions.front();
            st.subs.push_back(SubState::released({table.id_of(a.channel), a.output}));
            continue;
        }
        std::uint32_t s = static_cast<std::uint32_t>(st.sync_dom.size());
        st.sync_dom.emplace_back();
        st.subs.push_back(SubState::sync_open(s));
        for (const dsl::Action& a : proc.actions) {
            std::uint32_t pt = static_cast<std::uint32_t>(st.point_info.size());
            MAction act{table.id_of(a.channel), a.output};
            st.point_info.emplace_back(s, act);
            st.sync_dom[s].push_back(pt);
            st.subs.push_back(SubState::point_bound(pt, act));
        }
    }
    return st;
}

inline Denotation denote_program(const dsl::Program& p, const ChannelTable& table) {
    Denotation d;
    for (const auto& proc : p.procs)
        if (!proc.is_select)
            d.push_back({table.id_of(proc.actions.front().channel),
                         proc.actions.front().output});
    std::sort(d.begin(), d.end());
    return d;
}

inline Denotation denote_state(const MachineState& st) {
    Denotation d;
    for (const SubState& ss : st.subs)
        if (ss.kind == Kind::Released) d.push_back({ss.ch, ss.out});
    std::sort(d.begin(), d.end());
    return d;
}

inline std::string format_denotation(const Denotation& d, const ChannelTable& table) {
    std::string out = "{";
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (i) out += ",";
        if (d[i].output) out += "!";
        out += table.names[d[i].chan];
    }
    out += "}";
    return out;
}

/// Compact single-line rendering of a machine state.
inline std::string format_state(const MachineState& st, const ChannelTable& table) {
    auto act = [&](ChannelId ch, bool out) {
        return (out ? "!" : "") + table.names[ch];
    };
    std::string s;
    for (const SubState& ss : st.subs) {
        if (!s.empty()) s += " ";
        switch (ss.kind) {
            case Kind::ChanFree: s += "free(" + table.names[ss.ch] + ")"; break;
            case Kind::ChanMatch:
                s += "match(" + table.names[ss.ch] + ",p" + std::to_string(ss.p) +
                     ",p" + std::to_string(ss.q) + ")";
                break;
            case Kind::Released: s += "released(" + act(ss.ch, ss.out) + ")"; break;
            case Kind::PointBound:
                s += "p" + std::to_string(ss.p) + ":bound(" + act(ss.ch, ss.out) + ")";
                break;
            case Kind::Candidate: s += "p" + std::to_string(ss.p) + ":candidate"; break;
            case Kind::Rejected: s += "p" + std::to_string(ss.p) + ":rejected"; break;
            case Kind::Selected:
                s += "s" + std::to_string(ss.s) + ":selected(p" + std::to_string(ss.p) + ")";
                break;
            case Kind::Done:
                s += "s" + std::to_string(ss.s) + ":done(p" + std::to_string(ss.p) + ")";
                break;
            case Kind::SyncOpen: s += "s" + std::to_string(ss.s) + ":open"; break;
            case Kind::SyncClosed: s += "s" + std::to_string(ss.s) + ":closed"; break;
            case Kind::Retry: s += "s" + std::to_string(ss.s) + ":retry"; break;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Source-program reduction semantics

/// Structural-congruence normal form: select action lists and the proc
/// multiset are sorted. Used for state-space deduplication only; it is
/// not the parse/format identity.
inline dsl::Program canonical_program(const dsl::Program& p) {
    dsl::Program c = p;
    auto action_less = [](const dsl::Action& a, const dsl::Action& b) {
        return a.channel != b.channel ? a.channel < b.channel : a.output < b.output;
    };
    for (auto& proc : c.procs)
        if (proc.is_select)
            std::sort(proc.actions.begin(), proc.actions.end(), action_less);
    std::sort(c.procs.begin(), c.procs.end(),
              [&](const dsl::SourceProc& a, const dsl::SourceProc& b) {
                  if (a.is_select != b.is_select) return a.is_select < b.is_select;
                  return std::lexicographical_compare(
                      a.actions.begin(), a.actions.end(),
                      b.actions.begin(), b.actions.end(), action_less);
              });
    return c;
}

/// All single-step reducts: one per pair of distinct select procs holding
/// complementary actions on some channel. Results are in canonical form,
/// deduplicated.
inline std::vector<dsl::Program> program_step(const dsl::Program& p) {
    std::vector<dsl::Program> out;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < p.procs.size(); ++i) {
        if (!p.procs[i].is_select) continue;
        for (std::size_t j = 0; j < p.procs.size(); ++j) {
            if (j == i || !p.procs[j].is_select) continue;
            for (const dsl::Action& a : p.procs[i].actions) {
                if (a.output) continue; // i supplies the input side
                bool partner = false;
                for (const dsl::Action& b : p.procs[j].actions)
                    if (b.output && b.channel == a.channel) partner = true;
                if (!partner) continue;
                dsl::Program succ;
                for (std::size_t k = 0; k < p.procs.size(); ++k) {
                    if (k == i) succ.procs.push_back({false, {{a.channel, false}}});
                    else if (k == j) succ.procs.push_back({false, {{a.channel, true}}});
                    else succ.procs.push_back(p.procs[k]);
                }
                succ = canonical_program(succ);
                if (seen.insert(dsl::format_program(succ)).second)
                    out.push_back(succ);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Machine transitions

namespace detail {

inline MachineState without(const MachineState& st, std::vector<std::size_t> idx) {
    MachineState succ = st;
    std::sort(idx.rbegin(), idx.rend());
    for (std::size_t i : idx) succ.subs.erase(succ.subs.begin() + static_cast<long>(i));
    return succ;
}

} // namespace detail

/// Every successor obtainable by applying exactly one rule at one position.
inline std::vector<std::pair<Rule, MachineState>> machine_step(const MachineState& st) {
    std::vector<std::pair<Rule, MachineState>> out;
    const auto& subs = st.subs;

    // Per-kind indexes over the sub-state multiset.
    std::vector<std::size_t> free_idx, bound_idx, cand_idx, match_idx, sel_idx,
        rej_idx, done_idx, retry_idx;
    std::vector<long> open_of(st.sync_dom.size(), -1), closed_of(st.sync_dom.size(), -1);
    for (std::size_t i = 0; i < subs.size(); ++i) {
        switch (subs[i].kind) {
            case Kind::ChanFree: free_idx.push_back(i); break;
            case Kind::PointBound: bound_idx.push_back(i); break;
            case Kind::Candidate: cand_idx.push_back(i); break;
            case Kind::ChanMatch: match_idx.push_back(i); break;
            case Kind::Selected: sel_idx.push_back(i); break;
            case Kind::Rejected: rej_idx.push_back(i); break;
            case Kind::Done: done_idx.push_back(i); break;
            case Kind::Retry: retry_idx.push_back(i); break;
            case Kind::SyncOpen: open_of[subs[i].s] = static_cast<long>(i); break;
            case Kind::SyncClosed: closed_of[subs[i].s] = static_cast<long>(i); break;
            default: break;
        }
    }

    // (I): p -> c | q -> !c | free(c)  =>  Candidate_p | Candidate_q | Match_c(p,q)
    for (std::size_t fi : free_idx) {
        ChannelId ch = subs[fi].ch;
        for (std::size_t bi : bound_idx) {
            if (subs[bi].ch != ch || subs[bi].out) continue;
            for (std::size_t bj : bound_idx) {
                if (subs[bj].ch != ch || !subs[bj].out) continue;
                MachineState succ = detail::without(st, {fi, bi, bj});
                succ.subs.push_back(SubState::candidate(subs[bi].p));
                succ.subs.push_back(SubState::candidate(subs[bj].p));
                succ.subs.push_back(SubState::chan_match(ch, subs[bi].p, subs[bj].p));
                out.emplace_back(Rule::I, std::move(succ));
            }
        }
    }

    // (II.i) / (II.ii): candidate reacts with its synchronizer.
    for (std::size_t ci : cand_idx) {
        std::uint32_t p = subs[ci].p;
        std::uint32_t s = st.owner_of(p);
        if (open_of[s] >= 0) {
            MachineState succ = detail::without(st, {ci, static_cast<std::size_t>(open_of[s])});
            succ.subs.push_back(SubState::sync_closed(s));
            succ.subs.push_back(SubState::selected(s, p));
            out.emplace_back(Rule::II_i, std::move(succ));
        }
        if (closed_of[s] >= 0) {
            MachineState succ = detail::without(st, {ci});
            succ.subs.push_back(SubState::rejected(p));
            out.emplace_back(Rule::II_ii, std::move(succ));
        }
    }

    // (III.i-iv): the channel resolves both verdicts and frees itself.
    for (std::size_t mi : match_idx) {
        std::uint32_t p = subs[mi].p, q = subs[mi].q;
        ChannelId ch = subs[mi].ch;
        long psel = -1, prej = -1, qsel = -1, qrej = -1;
        for (std::size_t si : sel_idx) {
            if (subs[si].p == p) psel = static_cast<long>(si);
            if (subs[si].p == q) qsel = static_cast<long>(si);
        }
        for (std::size_t ri : rej_idx) {
            if (subs[ri].p == p) prej = static_cast<long>(ri);
            if (subs[ri].p == q) qrej = static_cast<long>(ri);
        }
        if (psel >= 0 && qsel >= 0) {
            MachineState succ = detail::without(
                st, {mi, static_cast<std::size_t>(psel), static_cast<std::size_t>(qsel)});
            succ.subs.push_back(SubState::done(subs[psel].s, p));
            succ.subs.push_back(SubState::done(subs[qsel].s, q));
            succ.subs.push_back(SubState::chan_free(ch));
            out.emplace_back(Rule::III_i, std::move(succ));
        }
        if (psel >= 0 && qrej >= 0) {
            MachineState succ = detail::without(
                st, {mi, static_cast<std::size_t>(psel), static_cast<std::size_t>(qrej)});
            succ.subs.push_back(SubState::retry(subs[psel].s));
            succ.subs.push_back(SubState::chan_free(ch));
            out.emplace_back(Rule::III_ii, std::move(succ));
        }
        if (prej >= 0 && qsel >= 0) {
            MachineState succ = detail::without(
                st, {mi, static_cast<std::size_t>(prej), static_cast<std::size_t>(qsel)});
            succ.subs.push_back(SubState::retry(subs[qsel].s));
            succ.subs.push_back(SubState::chan_free(ch));
            out.emplace_back(Rule::III_iii, std::move(succ));
        }
        if (prej >= 0 && qrej >= 0) {
            MachineState succ = detail::without(
                st, {mi, static_cast<std::size_t>(prej), static_cast<std::size_t>(qrej)});
            succ.subs.push_back(SubState::chan_free(ch));
            out.emplace_back(Rule::III_iv, std::move(succ));
        }
    }

    // (IV.i): confirmed commit releases the bound action.
    for (std::size_t di : done_idx) {
        MachineState succ = detail::without(st, {di});
        succ.subs.push_back(SubState::released(st.action_of(subs[di].p)));
        out.emplace_back(Rule::IV_i, std::move(succ));
    }

    // (IV.ii): a canceled synchronizer reboots as a fresh instance with
    // fresh points bound to the same actions. The old closed instance
    // keeps its domain so that straggler candidates can still be rejected.
    for (std::size_t ri : retry_idx) {
        std::uint32_t s = subs[ri].s;
        MachineState succ = detail::without(st, {ri});
        std::uint32_t s2 = static_cast<std::uint32_t>(succ.sync_dom.size());
        succ.sync_dom.emplace_back();
        succ.subs.push_back(SubState::sync_open(s2));
        for (std::uint32_t old_p : st.sync_dom[s]) {
            std::uint32_t np = static_cast<std::uint32_t>(succ.point_info.size());
            MAction act = st.action_of(old_p);
            succ.point_info.emplace_back(s2, act);
            succ.sync_dom[s2].push_back(np);
            succ.subs.push_back(SubState::point_bound(np, act));
        }
        out.emplace_back(Rule::IV_ii, std::move(succ));
    }

    return out;
}

// ---------------------------------------------------------------------------
// Invariants

/// The reachability invariants; an empty result means the state is
/// well-formed. Violations are data, not errors.
inline std::vector<std::string> check_invariants(const MachineState& st) {
    std::vector<std::string> v;
    std::size_t npoints = st.point_info.size();
    std::size_t nsyncs = st.sync_dom.size();

    // Ownership consistency (each point belongs to exactly one synchronizer).
    std::vector<std::size_t> owner_count(npoints, 0);
    for (std::size_t s = 0; s < nsyncs; ++s)
        for (std::uint32_t p : st.sync_dom[s]) {
            owner_count[p]++;
            if (st.owner_of(p) != s)
                v.push_back("point " + std::to_string(p) + " owner table mismatch");
        }
    for (std::size_t p = 0; p < npoints; ++p)
        if (owner_count[p] != 1)
            v.push_back("point " + std::to_string(p) + " has " +
                        std::to_string(owner_count[p]) + " owners");

    // Phase token per point; sync/channel token counts.
    std::vector<int> phase_tokens(npoints, 0);
    std::vector<int> open_tokens(nsyncs, 0), closed_tokens(nsyncs, 0),
        verdict_tokens(nsyncs, 0);
    std::vector<int> free_tokens(st.nchan, 0), match_tokens(st.nchan, 0);
    std::vector<int> in_match(npoints, 0); // 1 input side, 2 output side
    for (const SubState& ss : st.subs) {
        switch (ss.kind) {
            case Kind::PointBound:
            case Kind::Candidate:
            case Kind::Rejected:
                phase_tokens[ss.p]++;
                break;
            case Kind::Selected:
            case Kind::Done:
                phase_tokens[ss.p]++;
                verdict_tokens[ss.s]++;
                break;
            case Kind::Retry:
                verdict_tokens[ss.s]++;
                break;
            case Kind::SyncOpen: open_tokens[ss.s]++; break;
            case Kind::SyncClosed: closed_tokens[ss.s]++; break;
            case Kind::ChanFree: free_tokens[ss.ch]++; break;
            case Kind::ChanMatch:
                match_tokens[ss.ch]++;
                in_match[ss.p] += 1;
                in_match[ss.q] += 2;
                break;
            default: break;
        }
    }

    // (1) At most one point-phase sub-state per point; exactly one of
    //     open/closed per synchronizer.
    for (std::size_t p = 0; p < npoints; ++p)
        if (phase_tokens[p] > 1)
            v.push_back("point " + std::to_string(p) + " has multiple phase tokens");
    for (std::size_t s = 0; s < nsyncs; ++s)
        if (open_tokens[s] + closed_tokens[s] != 1 ||
            (open_tokens[s] > 0 && closed_tokens[s] > 0))
            v.push_back("synchronizer " + std::to_string(s) +
                        " lacks a unique open/closed token");

    // (2) Exactly one of free/busy per channel.
    for (std::uint32_t c = 0; c < st.nchan; ++c)
        if (free_tokens[c] + match_tokens[c] != 1)
            v.push_back("channel " + std::to_string(c) +
                        " has " + std::to_string(free_tokens[c] + match_tokens[c]) +
                        " free/match tokens");

    // (3) Verdict tokens imply a closed synchronizer; at most one of
    //     selected/done/retry per synchronizer.
    for (const SubState& ss : st.subs) {
        if ((ss.kind == Kind::Selected || ss.kind == Kind::Done ||
             ss.kind == Kind::Retry) &&
            closed_tokens[ss.s] == 0)
            v.push_back("verdict token for open synchronizer " + std::to_string(ss.s));
        if (ss.kind == Kind::Rejected && closed_tokens[st.owner_of(ss.p)] == 0)
            v.push_back("rejected point " + std::to_string(ss.p) +
                        " with open synchronizer");
    }
    for (std::size_t s = 0; s < nsyncs; ++s)
        if (verdict_tokens[s] > 1)
            v.push_back("synchronizer " + std::to_string(s) +
                        " has multiple selected/done/retry tokens");

    // (4) Matches pair complementary points that are mid-session, and
    //     every mid-session point sits in exactly one match.
    std::vector<int> session_phase(npoints, 0); // candidate/selected/rejected
    for (const SubState& ss : st.subs)
        if (ss.kind == Kind::Candidate || ss.kind == Kind::Selected ||
            ss.kind == Kind::Rejected)
            session_phase[ss.p] = 1;
    for (const SubState& ss : st.subs) {
        if (ss.kind != Kind::ChanMatch) continue;
        MAction pa = st.action_of(ss.p), qa = st.action_of(ss.q);
        if (pa.chan != ss.ch || pa.output)
            v.push_back("match input side not bound to input on its channel");
        if (qa.chan != ss.ch || !qa.output)
            v.push_back("match output side not bound to output on its channel");
        if (!session_phase[ss.p] || !session_phase[ss.q])
            v.push_back("matched point without candidate/selected/rejected phase");
    }
    for (std::size_t p = 0; p < npoints; ++p) {
        if (session_phase[p] && in_match[p] == 0)
            v.push_back("mid-session point " + std::to_string(p) + " not in a match");
        if (in_match[p] > 2 || (in_match[p] == 2 && !st.action_of(p).output) ||
            (in_match[p] == 1 && st.action_of(p).output))
            v.push_back("point " + std::to_string(p) + " on inconsistent match sides");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Canonicalization

namespace detail {

struct PointRec {
    ChannelId ch;
    bool out;
    std::uint8_t phase;   // 0 none, 1 bound, 2 candidate, 3 selected, 4 rejected, 5 done
    std::uint8_t matched; // 0 no, 1 yes

    friend bool operator<(const PointRec& a, const PointRec& b) {
        return std::tie(a.ch, a.out, a.phase, a.matched) <
               std::tie(b.ch, b.out, b.phase, b.matched);
    }
    friend bool operator==(const PointRec& a, const PointRec& b) {
        return std::tie(a.ch, a.out, a.phase, a.matched) ==
               std::tie(b.ch, b.out, b.phase, b.matched);
    }
};

struct SyncRec {
    std::uint8_t closed;
    std::uint8_t retry;
    std::vector<PointRec> points; // sorted

    friend bool operator<(const SyncRec& a, const SyncRec& b) {
        return std::tie(a.closed, a.retry, a.points) <
               std::tie(b.closed, b.retry, b.points);
    }
    friend bool operator==(const SyncRec& a, const SyncRec& b) {
        return std::tie(a.closed, a.retry, a.points) ==
               std::tie(b.closed, b.retry, b.points);
    }
};

inline void push_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

} // namespace detail

struct CanonResult {
    MachineState state; // normalized representative (junk dropped, ids renumbered)
    std::string key;    // equality key: equal keys iff states equal up to renaming
};

/// Canonical form of a state up to point/synchronizer renaming. Inert
/// closed synchronizers (no live tokens, no referenced points) are the
/// protocol's garbage and are dropped: they enable no rule and carry no
/// denotation, and collapsing them keeps reboot loops finite.
inline CanonResult canonicalize(const MachineState& st) {
    std::size_t npoints = st.point_info.size();
    std::size_t nsyncs = st.sync_dom.size();

    std::vector<std::uint8_t> phase(npoints, 0), matched(npoints, 0);
    std::vector<std::uint8_t> closed(nsyncs, 0), retry(nsyncs, 0), touched(nsyncs, 0);
    std::vector<std::pair<ChannelId, std::pair<std::uint32_t, std::uint32_t>>> matches;
    std::vector<std::uint8_t> chan_free(st.nchan, 0);
    Denotation released;

    for (const SubState& ss : st.subs) {
        switch (ss.kind) {
            case Kind::PointBound: phase[ss.p] = 1; break;
            case Kind::Candidate: phase[ss.p] = 2; break;
            case Kind::Selected: phase[ss.p] = 3; break;
            case Kind::Rejected: phase[ss.p] = 4; break;
            case Kind::Done: phase[ss.p] = 5; break;
            case Kind::SyncClosed: closed[ss.s] = 1; break;
            case Kind::SyncOpen: break;
            case Kind::Retry: retry[ss.s] = 1; touched[ss.s] = 1; break;
            case Kind::ChanFree: chan_free[ss.ch] = 1; break;
            case Kind::ChanMatch:
                matches.push_back({ss.ch, {ss.p, ss.q}});
                matched[ss.p] = matched[ss.q] = 1;
                break;
            case Kind::Released: released.push_back({ss.ch, ss.out}); break;
        }
    }
    std::sort(released.begin(), released.end());
    for (std::size_t p = 0; p < npoints; ++p)
        if (phase[p] || matched[p]) touched[st.owner_of(p)] = 1;

    // Live synchronizers and their sorted point orders.
    std::vector<std::uint32_t> live;
    for (std::uint32_t s = 0; s < nsyncs; ++s)
        if (!closed[s] || touched[s]) live.push_back(s);

    auto point_rec = [&](std::uint32_t p) {
        MAction a = st.action_of(p);
        return detail::PointRec{a.chan, a.output, phase[p], matched[p]};
    };

    std::vector<std::vector<std::uint32_t>> point_order(nsyncs);
    std::vector<detail::SyncRec> sync_rec(nsyncs);
    for (std::uint32_t s : live) {
        point_order[s] = st.sync_dom[s];
        std::sort(point_order[s].begin(), point_order[s].end(),
                  [&](std::uint32_t a, std::uint32_t b) { return point_rec(a) < point_rec(b); });
        sync_rec[s].closed = closed[s];
        sync_rec[s].retry = retry[s];
        for (std::uint32_t p : point_order[s]) sync_rec[s].points.push_back(point_rec(p));
    }
    std::sort(live.begin(), live.end(), [&](std::uint32_t a, std::uint32_t b) {
        return sync_rec[a] < sync_rec[b];
    });

    // Permutable groups: synchronizers with equal records, and points with
    // equal records within a synchronizer. The fixed part of the encoding
    // is invariant under these permutations; only the match tuples vary,
    // so the minimum over all group permutations is the canonical choice.
    struct Group {
        bool is_sync;
        std::uint32_t sync; // for point groups
        std::size_t begin, end;
    };
    // Only permutations that can change the match encoding matter: a group
    // is relevant iff it involves a matched point. Unmatched same-record
    // peers are interchangeable with identical encodings (equal records
    // imply equal point counts, so later numbering is unaffected).
    auto sync_has_match = [&](std::uint32_t s) {
        for (std::uint32_t p : st.sync_dom[s])
            if (matched[p]) return true;
        return false;
    };
    std::vector<Group> groups;
    if (!matches.empty()) {
        for (std::size_t i = 0; i < live.size();) {
            std::size_t j = i + 1;
            while (j < live.size() && sync_rec[live[i]] == sync_rec[live[j]]) ++j;
            if (j - i > 1) {
                bool relevant = false;
                for (std::size_t k = i; k < j; ++k)
                    if (sync_has_match(live[k])) relevant = true;
                if (relevant) groups.push_back({true, 0, i, j});
            }
            i = j;
        }
        for (std::uint32_t s : live) {
            if (!sync_has_match(s)) continue;
            auto& po = point_order[s];
            for (std::size_t i = 0; i < po.size();) {
                std::size_t j = i + 1;
                while (j < po.size() && point_rec(po[i]) == point_rec(po[j])) ++j;
                // matched is part of the record, so a group is matched or
                // unmatched as a whole
                if (j - i > 1 && matched[po[i]]) groups.push_back({false, s, i, j});
                i = j;
            }
        }
    }

    std::vector<std::uint32_t> best_match_enc;
    std::vector<std::uint32_t> best_live;
    std::vector<std::vector<std::uint32_t>> best_point_order;

    auto evaluate = [&]() {
        std::vector<std::uint32_t> new_point(npoints, 0);
        std::uint32_t next = 0;
        for (std::uint32_t s : live)
            for (std::uint32_t p : point_order[s]) new_point[p] = next++;
        std::vector<std::uint32_t> enc;
        std::vector<std::array<std::uint32_t, 3>> tuples;
        tuples.reserve(matches.size());
        for (const auto& m : matches)
            tuples.push_back({m.first, new_point[m.second.first], new_point[m.second.second]});
        std::sort(tuples.begin(), tuples.end());
        for (const auto& t : tuples) { enc.push_back(t[0]); enc.push_back(t[1]); enc.push_back(t[2]); }
        if (best_match_enc.empty() ? best_live.empty() : enc < best_match_enc) {
            best_match_enc = enc;
            best_live = live;
            best_point_order = point_order;
        } else if (best_live.empty()) {
            best_match_enc = enc;
            best_live = live;
            best_point_order = point_order;
        }
    };

    // Enumerate all permutations within relevant groups (bounded; group
    // sizes are tiny for compiled programs).
    auto enumerate = [&](auto&& self, std::size_t gi) -> void {
        if (gi == groups.size()) { evaluate(); return; }
        const Group& g = groups[gi];
        auto& vec = g.is_sync ? live : point_order[g.sync];
        std::sort(vec.begin() + static_cast<long>(g.begin),
                  vec.begin() + static_cast<long>(g.end));
        do {
            self(self, gi + 1);
        } while (std::next_permutation(vec.begin() + static_cast<long>(g.begin),
                                       vec.begin() + static_cast<long>(g.end)));
    };
    enumerate(enumerate, 0);

    // Rebuild the normalized state with the winning numbering.
    CanonResult res;
    MachineState& ns = res.state;
    ns.nchan = st.nchan;
    std::vector<std::uint32_t> new_point(npoints, 0);
    {
        std::uint32_t next = 0;
        for (std::uint32_t s : best_live)
            for (std::uint32_t p : best_point_order[s]) new_point[p] = next++;
    }
    std::vector<std::uint32_t> new_sync(nsyncs, 0);
    for (std::size_t i = 0; i < best_live.size(); ++i)
        new_sync[best_live[i]] = static_cast<std::uint32_t>(i);

    for (std::uint32_t c = 0; c < st.nchan; ++c)
        if (chan_free[c]) ns.subs.push_back(SubState::chan_free(c));
    for (const MAction& a : released) ns.subs.push_back(SubState::released(a));
    ns.sync_dom.resize(best_live.size());
    for (std::size_t i = 0; i < best_live.size(); ++i) {
        std::uint32_t s = best_live[i];
        std::uint32_t si = static_cast<std::uint32_t>(i);
        ns.subs.push_back(sync_rec[s].closed ? SubState::sync_closed(si)
                                             : SubState::sync_open(si));
        if (retry[s]) ns.subs.push_back(SubState::retry(si));
        for (std::uint32_t p : best_point_order[s]) {
            std::uint32_t np = new_point[p];
            MAction a = st.action_of(p);
            ns.sync_dom[si].push_back(np);
            if (ns.point_info.size() <= np) ns.point_info.resize(np + 1);
            ns.point_info[np] = {si, a};
            switch (phase[p]) {
                case 1: ns.subs.push_back(SubState::point_bound(np, a)); break;
                case 2: ns.subs.push_back(SubState::candidate(np)); break;
                case 3: ns.subs.push_back(SubState::selected(si, np)); break;
                case 4: ns.subs.push_back(SubState::rejected(np)); break;
                case 5: ns.subs.push_back(SubState::done(si, np)); break;
                default: break;
            }
        }
    }
    {
        std::vector<std::array<std::uint32_t, 3>> tuples;
        for (const auto& m : matches)
            tuples.push_back({m.first, new_point[m.second.first], new_point[m.second.second]});
        std::sort(tuples.begin(), tuples.end());
        for (const auto& t : tuples)
            ns.subs.push_back(SubState::chan_match(t[0], t[1], t[2]));
    }

    // Encoding: fixed part then match tuples.
    std::string& key = res.key;
    detail::push_u32(key, st.nchan);
    for (std::uint32_t c = 0; c < st.nchan; ++c)
        detail::push_u32(key, chan_free[c]);
    detail::push_u32(key, static_cast<std::uint32_t>(released.size()));
    for (const MAction& a : released)
        detail::push_u32(key, a.chan * 2u + (a.output ? 1u : 0u));
    detail::push_u32(key, static_cast<std::uint32_t>(best_live.size()));
    for (std::uint32_t s : best_live) {
        detail::push_u32(key, sync_rec[s].closed);
        detail::push_u32(key, retry[s]);
        detail::push_u32(key, static_cast<std::uint32_t>(best_point_order[s].size()));
        for (std::uint32_t p : best_point_order[s]) {
            MAction a = st.action_of(p);
            detail::push_u32(key, a.chan * 2u + (a.output ? 1u : 0u));
            detail::push_u32(key, phase[p]);
        }
    }
    detail::push_u32(key, static_cast<std::uint32_t>(best_match_enc.size()));
    for (std::uint32_t v : best_match_enc) detail::push_u32(key, v);
    return res;
}

// ---------------------------------------------------------------------------
// Exploration

struct Edge {
    Rule rule;
    std::uint32_t to;
};

struct ReachGraph {
    std::vector<MachineState> states; // canonical representatives
    std::vector<std::string> keys;
    std::vector<std::vector<Edge>> succ;
    std::vector<std::uint32_t> terminals;
    bool truncated = false; // state bound exceeded; graph is partial

    std::uint64_t state_hash(std::uint32_t i) const {
        return std::hash<std::string>{}(keys[i]);
    }
};

/// Breadth-first closure of machine_step under canonical deduplication.
inline ReachGraph explore(const MachineState& s0, std::size_t max_states) {
    ReachGraph g;
    std::unordered_map<std::string, std::uint32_t> index;
    std::deque<std::uint32_t> frontier;

    CanonResult c0 = canonicalize(s0);
    index.emplace(c0.key, 0);
    g.states.push_back(std::move(c0.state));
    g.keys.push_back(std::move(c0.key));
    g.succ.emplace_back();
    frontier.push_back(0);

    while (!frontier.empty()) {
        std::uint32_t cur = frontier.front();
        frontier.pop_front();
        auto succs = machine_step(g.states[cur]);
        std::set<std::pair<std::uint8_t, std::uint32_t>> seen_edges;
        for (auto& [rule, ns] : succs) {
            CanonResult c = canonicalize(ns);
            std::uint32_t id;
            auto it = index.find(c.key);
            if (it != index.end()) {
                id = it->second;
            } else {
                if (g.states.size() >= max_states) {
                    g.truncated = true;
                    continue;
                }
                id = static_cast<std::uint32_t>(g.states.size());
                index.emplace(c.key, id);
                g.states.push_back(std::move(c.state));
                g.keys.push_back(std::move(c.key));
                g.succ.emplace_back();
                frontier.push_back(id);
            }
            if (seen_edges.insert({static_cast<std::uint8_t>(rule), id}).second)
                g.succ[cur].push_back({rule, id});
        }
        if (g.truncated) break;
    }
    for (std::uint32_t i = 0; i < g.states.size(); ++i)
        if (g.succ[i].empty()) g.terminals.push_back(i);
    return g;
}

/// Line-oriented graph export: one `hash -[RULE]-> hash` line per edge,
/// then one `terminal <hash> <denotation>` line per terminal state.
inline void write_graph(std::ostream& os, const ReachGraph& g, const ChannelTable& table) {
    for (std::uint32_t i = 0; i < g.states.size(); ++i)
        for (const Edge& e : g.succ[i])
            os << std::hex << g.state_hash(i) << std::dec << " -[" << rule_name(e.rule)
               << "]-> " << std::hex << g.state_hash(e.to) << std::dec << "\n";
    for (std::uint32_t t : g.terminals)
        os << "terminal " << std::hex << g.state_hash(t) << std::dec << " "
           << format_denotation(denote_state(g.states[t]), table) << "\n";
}

// ---------------------------------------------------------------------------
// Channel liveness (complementary unmatched points can always free the channel)

struct LivenessViolation {
    std::uint32_t state;
    ChannelId chan;
};

inline std::vector<LivenessViolation> check_channel_liveness(const ReachGraph& g) {
    std::size_t n = g.states.size();
    std::vector<std::vector<std::uint32_t>> pred(n);
    for (std::uint32_t i = 0; i < n; ++i)
        for (const Edge& e : g.succ[i]) pred[e.to].push_back(i);

    std::uint32_t nchan = n ? g.states[0].nchan : 0;
    std::vector<LivenessViolation> out;
    for (ChannelId c = 0; c < nchan; ++c) {
        std::vector<char> can_free(n, 0);
        std::deque<std::uint32_t> work;
        for (std::uint32_t i = 0; i < n; ++i)
            for (const SubState& ss : g.states[i].subs)
                if (ss.kind == Kind::ChanFree && ss.ch == c) {
                    can_free[i] = 1;
                    work.push_back(i);
                    break;
                }
        while (!work.empty()) {
            std::uint32_t cur = work.front();
            work.pop_front();
            for (std::uint32_t p : pred[cur])
                if (!can_free[p]) {
                    can_free[p] = 1;
                    work.push_back(p);
                }
        }
        for (std::uint32_t i = 0; i < n; ++i) {
            bool has_in = false, has_out = false;
            for (const SubState& ss : g.states[i].subs)
                if (ss.kind == Kind::PointBound && ss.ch == c)
                    (ss.out ? has_out : has_in) = true;
            if (has_in && has_out && !can_free[i]) out.push_back({i, c});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bounded bisimulation check

struct BisimReport {
    bool pass = false;
    bool truncated = false;          // exploration bound hit; verdicts unusable
    bool correspondence_root = false;
    bool safety_root = false;
    bool progress_root = false;
    std::size_t machine_states = 0;
    std::size_t program_states = 0;
    std::size_t iterations = 0;
    std::string detail;
};

namespace detail {

struct Bitmask {
    std::vector<std::uint64_t> w;
    explicit Bitmask(std::size_t bits = 0) : w((bits + 63) / 64, 0) {}
    void set(std::size_t i) { w[i / 64] |= (std::uint64_t(1) << (i % 64)); }
    void clear(std::size_t i) { w[i / 64] &= ~(std::uint64_t(1) << (i % 64)); }
    bool test(std::size_t i) const { return (w[i / 64] >> (i % 64)) & 1; }
    bool intersects(const Bitmask& o) const {
        for (std::size_t i = 0; i < w.size(); ++i)
            if (w[i] & o.w[i]) return true;
        return false;
    }
    bool any() const {
        for (std::uint64_t x : w)
            if (x) return true;
        return false;
    }
    bool or_with(const Bitmask& o) { // returns true if changed
        bool changed = false;
        for (std::size_t i = 0; i < w.size(); ++i) {
            std::uint64_t nv = w[i] | o.w[i];
            if (nv != w[i]) { w[i] = nv; changed = true; }
        }
        return changed;
    }
};

} // namespace detail

/// Mechanizes the correctness relation at desk scale: explores both the
/// program's reduction graph and the compiled machine's state graph, then
/// computes the largest relation satisfying Correspondence, Safety and
/// Progress by greatest-fixpoint refinement and reports whether the
/// program and its compilation are related.
inline BisimReport verify_theorem(const dsl::Program& p, const ReachGraph& g,
                                  const ChannelTable& table) {
    BisimReport rep;

    // Program reduction graph.
    std::vector<dsl::Program> prog_states;
    std::vector<std::vector<std::uint32_t>> prog_succ;
    {
        std::unordered_map<std::string, std::uint32_t> index;
        std::deque<std::uint32_t> work;
        dsl::Program c0 = canonical_program(p);
        index.emplace(dsl::format_program(c0), 0);
        prog_states.push_back(c0);
        prog_succ.emplace_back();
        work.push_back(0);
        while (!work.empty()) {
            std::uint32_t cur = work.front();
            work.pop_front();
            for (const dsl::Program& s : program_step(prog_states[cur])) {
                std::string key = dsl::format_program(s);
                auto it = index.find(key);
                std::uint32_t id;
                if (it != index.end()) id = it->second;
                else {
                    id = static_cast<std::uint32_t>(prog_states.size());
                    index.emplace(key, id);
                    prog_states.push_back(s);
                    prog_succ.emplace_back();
                    work.push_back(id);
                }
                prog_succ[cur].push_back(id);
            }
        }
    }
    std::size_t np = prog_states.size();
    rep.program_states = np;

    // Machine graph (precomputed by the caller).
    rep.machine_states = g.states.size();
    if (g.truncated) {
        rep.truncated = true;
        rep.detail = "state bound exceeded";
        return rep;
    }
    std::size_t nm = g.states.size();

    // Denotation interning.
    std::map<Denotation, std::uint32_t> den_ids;
    auto den_id = [&](const Denotation& d) {
        auto it = den_ids.find(d);
        if (it != den_ids.end()) return it->second;
        std::uint32_t id = static_cast<std::uint32_t>(den_ids.size());
        den_ids.emplace(d, id);
        return id;
    };
    std::vector<std::uint32_t> prog_den(np), mach_den(nm);
    for (std::size_t i = 0; i < np; ++i)
        prog_den[i] = den_id(denote_program(prog_states[i], table));
    for (std::size_t i = 0; i < nm; ++i)
        mach_den[i] = den_id(denote_state(g.states[i]));
    std::size_t nd = den_ids.size();

    // Denotations reachable from each machine state (fixpoint; the graph
    // has cycles through reboots).
    std::vector<detail::Bitmask> denreach(nm, detail::Bitmask(nd));
    for (std::size_t i = 0; i < nm; ++i) denreach[i].set(mach_den[i]);
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = nm; i-- > 0;)
            for (const Edge& e : g.succ[i])
                if (denreach[i].or_with(denreach[e.to])) changed = true;
    }

    // Program-side reachability closures and one-step successor masks.
    std::vector<detail::Bitmask> reachstar(np, detail::Bitmask(np)),
        succmask(np, detail::Bitmask(np));
    for (std::size_t i = 0; i < np; ++i) {
        std::deque<std::uint32_t> work{static_cast<std::uint32_t>(i)};
        reachstar[i].set(i);
        while (!work.empty()) {
            std::uint32_t cur = work.front();
            work.pop_front();
            for (std::uint32_t s : prog_succ[cur])
                if (!reachstar[i].test(s)) {
                    reachstar[i].set(s);
                    work.push_back(s);
                }
        }
        for (std::uint32_t s : prog_succ[i]) succmask[i].set(s);
    }

    // R[sigma] = bitmask of related program states. Initialized from the
    // Correspondence clause (independent of R), then refined.
    std::vector<detail::Bitmask> rel(nm, detail::Bitmask(np));
    for (std::size_t m = 0; m < nm; ++m)
        for (std::size_t pi = 0; pi < np; ++pi)
            if (denreach[m].test(prog_den[pi])) rel[m].set(pi);

    rep.correspondence_root = rel[0].test(0);
    char root_removed_by = 0; // 's' safety, 'p' progress

    std::vector<std::vector<std::uint32_t>> pred(nm);
    for (std::uint32_t i = 0; i < nm; ++i)
        for (const Edge& e : g.succ[i]) pred[e.to].push_back(i);

    for (bool changed = true; changed;) {
        changed = false;
        ++rep.iterations;

        // Safety: every machine step must be matched by some program
        // closure step into a still-related pair.
        for (std::size_t m = 0; m < nm; ++m) {
            for (std::size_t pi = 0; pi < np; ++pi) {
                if (!rel[m].test(pi)) continue;
                for (const Edge& e : g.succ[m]) {
                    if (!rel[e.to].intersects(reachstar[pi])) {
                        rel[m].clear(pi);
                        changed = true;
                        if (m == 0 && pi == 0 && !root_removed_by) root_removed_by = 's';
                        break;
                    }
                }
            }
        }

        // Progress: if the program can step, the machine must reach (in
        // one or more steps) a state related to some one-step reduct.
        for (std::size_t pi = 0; pi < np; ++pi) {
            if (!succmask[pi].any()) continue;
            // ok[m]: some state reachable from m in >=1 steps relates to a
            // one-step reduct of pi.
            std::vector<char> ok(nm, 0);
            std::deque<std::uint32_t> work;
            for (std::uint32_t m = 0; m < nm; ++m)
                if (rel[m].intersects(succmask[pi]))
                    for (std::uint32_t pr : pred[m])
                        if (!ok[pr]) { ok[pr] = 1; work.push_back(pr); }
            while (!work.empty()) {
                std::uint32_t cur = work.front();
                work.pop_front();
                for (std::uint32_t pr : pred[cur])
                    if (!ok[pr]) { ok[pr] = 1; work.push_back(pr); }
            }
            for (std::size_t m = 0; m < nm; ++m)
                if (rel[m].test(pi) && !ok[m]) {
                    rel[m].clear(pi);
                    changed = true;
                    if (m == 0 && pi == 0 && !root_removed_by) root_removed_by = 'p';
                }
        }
    }

    rep.pass = rel[0].test(0);
    rep.safety_root = rep.correspondence_root && root_removed_by != 's';
    rep.progress_root = rep.correspondence_root && root_removed_by != 'p';
    if (!rep.pass) {
        if (!rep.correspondence_root) rep.detail = "correspondence fails at the root";
        else if (root_removed_by == 's') rep.detail = "safety refinement removed the root pair";
        else rep.detail = "progress refinement removed the root pair";
    }
    return rep;
}

inline BisimReport verify_theorem(const dsl::Program& p, std::size_t max_states) {
    ChannelTable table = channel_table(p);
    ReachGraph g = explore(compile(p, table), max_states);
    return verify_theorem(p, g, table);
}

} // namespace evsync::model
